"""Euler-Maruyama / Milstein stepping and paired fine/coarse simulation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from ._backend import kernels
from .systems import SdeSystem, _resolve

DEFAULT_BOUND = 1e8


class BlowUpError(FloatingPointError):
    """A state left the admissible region (non-finite or beyond the bound)."""


@dataclass(frozen=True)
class NoiseStream:
    """Seed material for one trajectory's fine Brownian increments."""

    base_seed: int
    system_id: str
    param_index: int = 0
    ic_index: int = 0
    noise_index: int = 0
    attempt: int = 0

    @property
    def key(self) -> int:
        return _rng.mix_key(
            self.base_seed, _rng.system_code(self.system_id), _rng.TAG_NOISE,
            self.param_index, self.ic_index, self.noise_index, self.attempt,
        )

    def increments(self, steps: int, channels: int, dt: float) -> np.ndarray:
        """``(steps, channels)`` array of N(0, dt) draws."""
        return _rng.normals(self.key, steps * channels).reshape(steps, channels) * math.sqrt(dt)


@dataclass
class TrajectoryPair:
    system_id: str
    params: dict
    x0: np.ndarray
    dt: float
    k: int
    coarse: np.ndarray          # (N+1, d) at t_n = n k dt
    fine_at_coarse: np.ndarray  # (N+1, d)
    agg_noise: np.ndarray       # (N, m)
    fine: np.ndarray | None = None  # (kN+1, d) at t_m = m dt when kept
    ok: bool = True
    seed: tuple = field(default=(), compare=False)

    @property
    def n_coarse(self) -> int:
        return self.coarse.shape[0] - 1

    @property
    def err(self) -> np.ndarray:
        return self.fine_at_coarse - self.coarse

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_coarse + 1) * (self.k * self.dt)


def em_step(system, params: dict, x, t: float, dt: float, dW) -> np.ndarray:
    """One explicit Euler-Maruyama step; ``x`` may carry leading batch axes."""
    system = _resolve(system)
    if dt <= 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != system.noise_dim:
        raise ValueError(f"{system.id}: dW has {dW.shape[-1]} channels, expected {system.noise_dim}")
    x = system.lift(np.asarray(x, dtype=float))
    G = system.diffusion_fn(params, x, t)
    with np.errstate(all="ignore"):
        out = x + system.drift_fn(params, x, t) * dt + np.einsum("...dm,...m->...d", G, dW)
    if not np.all(np.isfinite(out)):
        raise BlowUpError(f"{system.id}: non-finite state after EM step at t={t}")
    return out


def diffusion_derivative(system: SdeSystem, params: dict, x, t: float) -> np.ndarray:
    """d(sigma)/dx for a 1-D system, analytic where registered."""
    x = np.asarray(x, dtype=float)
    if system.diffusion_dx is not None:
        return system.diffusion_dx(params, x, t)
    h = 1e-6 * (1.0 + np.abs(x[..., 0]))
    up = system.diffusion_fn(params, x + h[..., None], t)[..., 0, 0]
    dn = system.diffusion_fn(params, x - h[..., None], t)[..., 0, 0]
    return (up - dn) / (2.0 * h)


def milstein_step(system, params: dict, x, t: float, dt: float, dW) -> np.ndarray:
    """EM step plus the 1/2 sigma sigma' (dW^2 - dt) correction (1-D only)."""
    system = _resolve(system)
    if system.internal_dim != 1 or system.noise_dim != 1:
        raise ValueError(f"{system.id}: Milstein stepping needs a scalar SDE")
    x = np.asarray(x, dtype=float)
    dW = np.asarray(dW, dtype=float)
    base = em_step(system, params, x, t, dt, dW)
    s = system.diffusion_fn(params, x, t)[..., 0, 0]
    ds = diffusion_derivative(system, params, x, t)
    w = dW[..., 0]
    return base + (0.5 * s * ds * (w * w - dt))[..., None]


def simulate_pair(system, params: dict, x0, noise: NoiseStream, n_coarse: int | None = None,
                  k: int | None = None, bound: float = DEFAULT_BOUND,
                  dt: float | None = None) -> TrajectoryPair:
    """Reference (step-by-step) paired simulation of a single trajectory.

    The coarse path steps with ``k*dt`` using the sum of the ``k`` fine
    increments it spans, so both paths see the same Brownian motion.
    """
    system = _resolve(system)
    N = system.horizon_steps_coarse if n_coarse is None else n_coarse
    k = system.stride_k if k is None else k
    dt = system.dt_fine if dt is None else dt
    dW = noise.increments(N * k, system.noise_dim, dt)
    xf = system.lift(np.asarray(x0, dtype=float))
    xc = xf.copy()
    fine = np.empty((N * k + 1, system.internal_dim))
    coarse = np.empty((N + 1, system.internal_dim))
    agg = np.zeros((N, system.noise_dim))
    fine[0] = xf
    coarse[0] = xc
    ok = True
    try:
        for n in range(N):
            acc = np.zeros(system.noise_dim)
            for i in range(k):
                m = n * k + i
                xf = em_step(system, params, xf, m * dt, dt, dW[m])
                acc += dW[m]
                if not np.all(np.abs(xf) <= bound):
                    raise BlowUpError(f"{system.id}: fine path exceeded {bound:g}")
                fine[m + 1] = xf
            agg[n] = acc
            xc = em_step(system, params, xc, n * (k * dt), k * dt, acc)
            if not np.all(np.abs(xc) <= bound):
                raise BlowUpError(f"{system.id}: coarse path exceeded {bound:g}")
            coarse[n + 1] = xc
    except BlowUpError:
        ok = False
    obs = system.observe
    return TrajectoryPair(
        system.id, dict(params), np.asarray(x0, dtype=float), dt, k,
        coarse=obs(coarse), fine_at_coarse=obs(fine[::k]), agg_noise=agg,
        fine=obs(fine), ok=ok,
        seed=(noise.base_seed, noise.param_index, noise.ic_index, noise.noise_index, noise.attempt),
    )


@dataclass
class BatchPaths:
    coarse: np.ndarray          # (B, N+1, d)
    fine_at_coarse: np.ndarray  # (B, N+1, d)
    agg_noise: np.ndarray       # (B, N, m)
    ok: np.ndarray              # (B,)
    fine: np.ndarray | None = None

    @property
    def err(self) -> np.ndarray:
        return self.fine_at_coarse - self.coarse


def _as_keys(keys) -> np.ndarray:
    # never route Python ints through np.asarray: a list straddling 2**63 becomes float64
    if isinstance(keys, np.ndarray):
        if keys.dtype.kind not in "iu":
            raise TypeError(f"noise keys must be integers, got {keys.dtype}")
        return keys.astype(np.uint64).reshape(-1)
    if isinstance(keys, (int, np.integer)):
        keys = [keys]
    return np.array([int(k) for k in keys], dtype=np.uint64)


def simulate_batch(system, params, x0, keys, n_coarse: int | None = None,
                   k: int | None = None, dt: float | None = None,
                   bound: float = DEFAULT_BOUND, keep_fine: bool = False,
                   impl=None) -> BatchPaths:
    """Many trajectories through the selected kernel backend.

    ``params`` is ``(B, P)`` in ``system.param_names`` order (a single row is
    broadcast), ``x0`` is ``(B, state_dim)``, ``keys`` are noise-stream keys.
    """
    system = _resolve(system)
    impl = kernels if impl is None else impl
    N = system.horizon_steps_coarse if n_coarse is None else n_coarse
    k = system.stride_k if k is None else k
    dt = system.dt_fine if dt is None else dt
    x0 = system.lift(np.atleast_2d(np.asarray(x0, dtype=float)))
    B = x0.shape[0]
    params = np.ascontiguousarray(np.broadcast_to(np.atleast_2d(np.asarray(params, dtype=float)),
                                                  (B, len(system.param_spec)))).copy()
    keys = _as_keys(keys)
    fs, cs, ag, ok, full = impl.simulate_pairs(system, params, x0, keys, N, k, dt, bound, keep_fine)
    obs = system.observe
    return BatchPaths(obs(cs), obs(fs), ag, np.asarray(ok, dtype=bool),
                      None if full is None else obs(full))


# -- convergence probes --------------------------------------------------------

@dataclass
class OrderProbeResult:
    h: np.ndarray
    errors: np.ndarray
    ci95: np.ndarray
    slope: float
    method: str = "em"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "mean_strong_error", "ci95"])
            for row in zip(self.h, self.errors, self.ci95):
                w.writerow([repr(float(v)) for v in row])


def fit_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


DEFAULT_H = (1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2)


def strong_order_probe(system="gbm", h_list=DEFAULT_H, M: int = 2000, method: str = "em",
                       mu: float = 0.1, sigma: float = 0.5, x0: float = 1.0,
                       T: float = 1.0, seed: int = 0) -> OrderProbeResult:
    """Strong error E[max_j |X_j - Y(t_j)|] against the exact GBM solution."""
    system = _resolve(system)
    if system.id != "gbm":
        raise ValueError("the strong-order probe needs an exact solution; only gbm has one")
    h_list = np.sort(np.asarray(h_list, dtype=float))
    if h_list.size < 2:
        raise ValueError("need at least two step sizes")
    if method not in ("em", "milstein"):
        raise ValueError(f"unknown method {method!r}")
    h0 = h_list[0]
    n_fine = int(round(T / h0))
    ratios = np.rint(h_list / h0).astype(int)
    if not np.allclose(ratios * h0, h_list, rtol=1e-9) or np.any(n_fine % ratios):
        raise ValueError("step sizes must be integer multiples of the smallest one and divide T")
    base = _rng.mix_key(seed, _rng.system_code(system.id), _rng.TAG_MISC)
    dW = np.empty((M, n_fine))
    for p in range(M):
        kernels.fill_normals(_rng.mix_key(base, p), 0, dW[p])
    dW *= math.sqrt(h0)
    params = {"mu": mu, "sigma": sigma}
    W = np.concatenate([np.zeros((M, 1)), np.cumsum(dW, axis=1)], axis=1)
    stepper = em_step if method == "em" else milstein_step
    errors, ci = [], []
    for r in ratios:
        n = n_fine // r
        h = r * h0
        tj = np.arange(n + 1) * h
        exact = x0 * np.exp((mu - 0.5 * sigma * sigma) * tj + sigma * W[:, ::r])
        incr = dW.reshape(M, n, r).sum(axis=2)
        x = np.full((M, 1), x0)
        worst = np.zeros(M)
        for j in range(n):
            x = stepper(system, params, x, j * h, h, incr[:, j:j + 1])
            worst = np.maximum(worst, np.abs(x[:, 0] - exact[:, j + 1]))
        errors.append(worst.mean())
        ci.append(1.96 * worst.std(ddof=1) / math.sqrt(M))
    errors = np.array(errors)
    return OrderProbeResult(h_list, errors, np.array(ci), fit_slope(h_list, errors), method)


def coarse_error_scaling_probe(system, params: dict, k_list=(2, 5, 10, 20, 50), M: int = 2000,
                               x0=None, n_coarse: int = 1, dt: float | None = None,
                               seed: int = 0):
    """Mean |err_N| against the coarse step k*dt, reusing one fine noise path per sample.

    Returns ``(coarse_steps, mean_abs_err, slope)``. With ``n_coarse=1`` this
    measures the one-step (local) error of the coarse scheme.
    """
    system = _resolve(system)
    dt = system.dt_fine if dt is None else dt
    k_list = sorted(int(k) for k in k_list)
    if x0 is None:
        x0 = [0.5 * (lo + hi) for lo, hi in system.ic_box]
    steps = max(k_list) * n_coarse
    base = _rng.mix_key(seed, _rng.system_code(system.id), _rng.TAG_MISC, 1)
    dW = np.empty((M, steps * system.noise_dim))
    for p in range(M):
        kernels.fill_normals(_rng.mix_key(base, p), 0, dW[p])
    dW = dW.reshape(M, steps, system.noise_dim) * math.sqrt(dt)
    start = system.lift(np.broadcast_to(np.asarray(x0, dtype=float), (M, system.state_dim)))
    means = []
    for k in k_list:
        xf = start.copy()
        xc = start.copy()
        for n in range(n_coarse):
            for i in range(k):
                m = n * k + i
                xf = em_step(system, params, xf, m * dt, dt, dW[:, m])
            agg = dW[:, n * k:(n + 1) * k].sum(axis=1)
            xc = em_step(system, params, xc, n * k * dt, k * dt, agg)
        diff = system.observe(xf - xc)
        means.append(np.linalg.norm(diff, axis=-1).mean())
    h = np.array(k_list) * dt
    means = np.array(means)
    slope = fit_slope(h, means) if np.all(means > 0) else float("nan")
    return h, means, slope
