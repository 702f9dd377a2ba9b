"""Inference-time correction of coarse paths, one block at a time or rolled out."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import MAX_DIM, Demo, Normalizer, _same_source, assemble_icl_sample, embed_prompt_stub


class RolloutError(RuntimeError):
    pass


# -- correctors ----------------------------------------------------------------
# A corrector maps (demos, queries) to error estimates of shape (Q, n, 3) in
# physical units. Queries carry times, noise and coarse values; their ``err``
# field is only read by the oracle.

class ZeroCorrector:
    def __call__(self, demos, queries):
        return np.zeros((len(queries), queries[0].n_columns, MAX_DIM))


class OracleCorrector:
    """Returns each query's stored reference error; a test double for the pipeline."""

    def __call__(self, demos, queries):
        return np.stack([q.err for q in queries])


class ModelCorrector:
    def __init__(self, model, normalizer: Normalizer | dict | None, prompt: str | None = None):
        if normalizer is None:
            raise ValueError("model correction needs the training normalisation statistics")
        self.model = model
        self.normalizer = Normalizer.from_json(normalizer) if isinstance(normalizer, dict) else normalizer
        self.prompt = None
        if prompt:
            cfg = model.config
            self.prompt = embed_prompt_stub(prompt, cfg.d_model, cfg.max_prompt_tokens)

    def __call__(self, demos, queries):
        context = assemble_icl_sample(demos, queries[0], self.prompt, self.normalizer)
        z = self.model.predict_queries(context, queries)
        mask = np.stack([q.dim_mask for q in queries])[:, None, :]
        return self.normalizer.err_from_model(z.astype(np.float64)) * mask


# -- results -------------------------------------------------------------------

@dataclass
class CorrectionResult:
    times: np.ndarray        # (Q, n)
    coarse: np.ndarray       # (Q, n, d)  coarse values the corrections were added to
    err_hat: np.ndarray      # (Q, n, d)
    corrected: np.ndarray    # (Q, n, d)
    reference: np.ndarray | None = None  # (Q, n, d) fine path when known
    shifts: list = field(default_factory=list)  # per block, (Q, d) offsets added to the coarse path
    demos: list = field(default_factory=list, repr=False)

    @property
    def residual(self):
        return None if self.reference is None else self.corrected - self.reference

    def to_csv(self, path, q: int = 0) -> None:
        d = self.coarse.shape[-1]
        head = ["n", "t"]
        for name in ("coarse", "predicted_err", "corrected") + (("fine",) if self.reference is not None else ()):
            head += [f"{name}{i + 1}" for i in range(d)]
        rows = [head]
        for n in range(self.times.shape[1]):
            row = [n, repr(float(self.times[q, n]))]
            arrs = [self.coarse, self.err_hat, self.corrected]
            if self.reference is not None:
                arrs.append(self.reference)
            for a in arrs:
                row += [repr(float(v)) for v in a[q, n]]
            rows.append(row)
        with open(os.fspath(path), "w", newline="") as fh:
            csv.writer(fh).writerows(rows)


def _check_sources(demos, queries):
    for q in queries:
        for d in demos:
            if not _same_source(d, q):
                raise ValueError("demos and queries must share system and parameters")


def correct_block(corrector, demos, queries, reference=None) -> CorrectionResult:
    """Add predicted errors to each query's coarse block; the first error is pinned to 0."""
    queries = [queries] if isinstance(queries, Demo) else list(queries)
    _check_sources(demos, queries)
    d = queries[0].state_dim
    err = np.asarray(corrector(demos, queries), dtype=np.float64)[..., :d].copy()
    if err.shape != (len(queries), queries[0].n_columns, d):
        raise ValueError(f"corrector returned shape {err.shape}")
    err[:, 0] = 0.0
    coarse = np.stack([q.coarse[:, :d] for q in queries])
    ref = None if reference is None else np.asarray(reference, dtype=np.float64)
    return CorrectionResult(np.stack([q.times for q in queries]), coarse, err, coarse + err,
                            ref, demos=list(demos))


def rollout(corrector, times, coarse, noise, demos, block: int, fine=None, system_id=None,
            params=None) -> CorrectionResult:
    """Correct long coarse paths block by block with additive boundary alignment.

    ``times`` is ``(L+1,)``, ``coarse`` ``(Q, L+1, d)``, ``noise`` ``(Q, L, m)``
    aggregated increments in token channel order. Block ``b`` reuses the same
    demos, restarts its clock at 0 and sees the coarse path offset so that its
    first value equals the corrected value at the end of block ``b-1``.
    """
    coarse = np.asarray(coarse, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    Q, L1, d = coarse.shape
    L = L1 - 1
    if block <= 0 or L <= 0:
        raise ValueError("need a positive block length and at least one coarse step")
    if noise.shape[:2] != (Q, L):
        raise ValueError(f"noise shape {noise.shape} does not match {Q} paths of {L} steps")
    fine = None if fine is None else np.asarray(fine, dtype=np.float64)
    sid = system_id or demos[0].system_id
    prm = params if params is not None else demos[0].params
    mask = np.zeros(MAX_DIM)
    mask[:d] = 1.0
    out = np.empty_like(coarse)
    err_all = np.zeros_like(coarse)
    shifted = np.empty_like(coarse)
    shifts = []
    start_vals = coarse[:, 0].copy()
    b = 0
    for j0 in range(0, L, block):
        j1 = min(j0 + block, L)
        idx = slice(j0, j1 + 1)
        # offset form keeps the block's first value bit-identical to start_vals
        xs = (coarse[:, idx] - coarse[:, j0:j0 + 1]) + start_vals[:, None]
        shifts.append(start_vals - coarse[:, j0])
        n = j1 - j0 + 1
        qs = []
        for q in range(Q):
            nz = np.zeros((n, MAX_DIM))
            nz[:-1, : noise.shape[2]] = noise[q, j0:j1]
            ref_err = np.zeros((n, MAX_DIM))
            if fine is not None:
                ref_err[:, :d] = fine[q, idx] - xs[q]
            qs.append(Demo(sid, dict(prm), times[idx] - times[j0], nz,
                           _pad(xs[q]), ref_err, mask.copy()))
        try:
            res = correct_block(corrector, demos, qs)
        except Exception as exc:
            raise RolloutError(f"correction failed in block {b}: {exc}") from exc
        shifted[:, idx] = xs
        out[:, idx] = res.corrected
        err_all[:, idx] = res.err_hat
        start_vals = res.corrected[:, -1].copy()
        b += 1
    return CorrectionResult(np.broadcast_to(np.asarray(times, float), (Q, L1)).copy(), shifted,
                            err_all, out, fine, shifts, list(demos))


def _pad(a):
    out = np.zeros(a.shape[:-1] + (MAX_DIM,))
    out[..., : a.shape[-1]] = a
    return out
