"""Batch error metrics over arrays indexed ``[equation, realisation, time, dim]``."""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np


def _pair(pred, ref):
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {ref.shape}")
    if pred.ndim == 3:
        pred, ref = pred[..., None], ref[..., None]
    if pred.ndim != 4 or min(pred.shape) == 0:
        raise ValueError(f"expected (N_eq, M, J[, D]) arrays, got shape {pred.shape}")
    return pred, ref


def amd(pred, ref, per_dim_max: bool = False) -> float:
    """Mean over equations and realisations of the largest pointwise error along time.

    The pointwise error is the Euclidean norm across dims, or with
    ``per_dim_max`` the largest absolute component.
    """
    p, r = _pair(pred, ref)
    diff = p - r
    pt = np.abs(diff).max(-1) if per_dim_max else np.sqrt((diff * diff).sum(-1))
    return float(pt.max(-1).mean())


def mad(pred, ref, per_dim_max: bool = False) -> float:
    """Largest (over time) equation-averaged error of the realisation means."""
    p, r = _pair(pred, ref)
    diff = p.mean(1) - r.mean(1)
    pt = np.abs(diff).max(-1) if per_dim_max else np.sqrt((diff * diff).sum(-1))
    return float(pt.mean(0).max())


def _traj_norms(pred, ref):
    p, r = _pair(pred, ref)
    diff = (p - r).reshape(p.shape[0], p.shape[1], -1)
    return np.sqrt((diff * diff).sum(-1))


def mae(pred, ref) -> float:
    return float(_traj_norms(pred, ref).mean())


def rmse(pred, ref) -> float:
    n = _traj_norms(pred, ref)
    return float(np.sqrt((n * n).mean()))


@dataclass
class MetricReport:
    system: str
    method: str
    mae: float
    rmse: float
    amd: float
    mad: float
    n_eq: int
    m: int
    timestamps: int

    @classmethod
    def compute(cls, system, method, pred, ref, per_dim_max=False) -> "MetricReport":
        p, r = _pair(pred, ref)
        return cls(system, method, mae(p, r), rmse(p, r), amd(p, r, per_dim_max),
                   mad(p, r, per_dim_max), p.shape[0], p.shape[1], p.shape[2])

    def row(self):
        return [self.system, self.method, repr(self.mae), repr(self.rmse), repr(self.amd), repr(self.mad)]


METRIC_HEADER = ["system", "method", "MAE", "RMSE", "AMD", "MAD"]


def write_metric_csv(path, reports) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        for r in reports:
            w.writerow(r.row())


def error_histogram(pred, ref, bins: int = 50, range_=None):
    """Counts of signed per-component errors; returns ``(edges, counts)``."""
    p, r = _pair(pred, ref)
    return_edges = np.histogram_bin_edges((p - r).ravel(), bins=bins, range=range_)
    counts, edges = np.histogram((p - r).ravel(), bins=return_edges)
    return edges, counts


def write_histogram_csv(path, edges, counts) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


# -- runtime -------------------------------------------------------------------

@dataclass
class RuntimeReport:
    system: str
    fine_s: float
    coarse_s: float
    corrected_s: float      # coarse simulation plus correction
    n_eq: int
    m: int

    @property
    def normalized(self) -> tuple[float, float, float]:
        """(fine, coarse, coarse+correction) with coarse as the unit."""
        return (self.fine_s / self.coarse_s, 1.0, self.corrected_s / self.coarse_s)

    def rows(self):
        f, c, k = self.normalized
        return [["method", "seconds", "normalized"],
                ["fine", repr(self.fine_s), repr(f)],
                ["coarse", repr(self.coarse_s), repr(c)],
                ["coarse+correction", repr(self.corrected_s), repr(k)]]

    def write_csv(self, path) -> None:
        with open(os.fspath(path), "w", newline="") as fh:
            csv.writer(fh).writerows(self.rows())


def runtime_report(system, corrector=None, n_eq: int = 25, m: int = 40, K: int = 4, seed: int = 0,
                   repeats: int = 3, dt: float | None = None, k: int | None = None) -> RuntimeReport:
    """Wall-clock of fine simulation, coarse simulation and coarse simulation plus correction.

    Each equation is one parameter draw and initial state with ``m`` noise
    realisations. Demos (``K`` extra realisations per equation) are simulated
    up front and are not timed. Each figure is the best of ``repeats`` runs.
    """
    from .correct import ZeroCorrector
    from .dataset import build_demo, generate_dataset, initial_state, param_vector
    from .integrate import NoiseStream, TrajectoryPair, simulate_batch
    from .systems import _resolve

    system = _resolve(system)
    corrector = corrector or ZeroCorrector()
    k = system.stride_k if k is None else k
    dt = system.dt_fine if dt is None else dt
    N = system.horizon_steps_coarse
    pvs = [param_vector(system, seed, e) for e in range(n_eq)]
    x0s = [initial_state(system, seed, e, 0) for e in range(n_eq)]
    keys = [[NoiseStream(seed, system.id, e, 0, w).key for w in range(m)] for e in range(n_eq)]

    demos = []
    for e in range(n_eq):
        dk = [NoiseStream(seed, system.id, e, 0, m + j).key for j in range(K)]
        bp = simulate_batch(system, pvs[e], np.repeat(x0s[e][None], K, 0), dk, N, k, dt)
        prm = system.params_from_array(pvs[e])
        demos.append([build_demo(TrajectoryPair(system.id, prm, x0s[e], dt, k, bp.coarse[j],
                                                bp.fine_at_coarse[j], bp.agg_noise[j]), system)
                      for j in range(K)])

    def fine_run():
        for e in range(n_eq):
            simulate_batch(system, pvs[e], np.repeat(x0s[e][None], m, 0), keys[e], N, k, dt)

    def coarse_run():
        out = []
        for e in range(n_eq):
            out.append(simulate_batch(system, pvs[e], np.repeat(x0s[e][None], m, 0), keys[e],
                                      N, 1, k * dt))
        return out

    def corrected_run():
        from .correct import correct_block

        for e, bp in enumerate(coarse_run()):
            prm = system.params_from_array(pvs[e])
            qs = [build_demo(TrajectoryPair(system.id, prm, x0s[e], k * dt, 1, bp.coarse[w],
                                            bp.coarse[w], bp.agg_noise[w]), system)
                  for w in range(m)]
            correct_block(corrector, demos[e], qs)

    def best(fn):
        t = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            t.append(time.perf_counter() - t0)
        return min(t)

    return RuntimeReport(system.id, best(fine_run), best(coarse_run), best(corrected_run), n_eq, m)
