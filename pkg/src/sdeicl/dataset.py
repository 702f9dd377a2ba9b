"""In-context samples built from trajectory pairs, and the binary shard format.

Token layout of a sample (one column per token)::

    [prompt x P | ex1 cond | ex1 err | ... | exK+1 cond | exK+1 err]

Each numeric token carries 11 raw features::

    [t, dW(3), value(3), dim_mask(3), dropped]

where ``value`` is the coarse state for condition tokens and the error term
for error tokens. Unused dimensions are zero with ``dim_mask = 0``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import multiprocessing as mp
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .integrate import DEFAULT_BOUND, NoiseStream, simulate_batch
from .systems import REGISTRY, SdeSystem, _resolve, sample_initial, sample_params

MAX_DIM = 3
FEATURE_DIM = 11
CAT_PROMPT, CAT_COND, CAT_ERR = 0, 1, 2
SHARD_MAGIC = b"FMSD"
SHARD_VERSION = 1


class ShardError(ValueError):
    pass


# -- demos ---------------------------------------------------------------------

@dataclass
class Demo:
    system_id: str
    params: dict
    times: np.ndarray     # (N+1,)
    noise: np.ndarray     # (N+1, 3); column n holds the increment over [t_n, t_n+1]
    coarse: np.ndarray    # (N+1, 3)
    err: np.ndarray       # (N+1, 3)
    dim_mask: np.ndarray  # (3,)

    @property
    def n_columns(self) -> int:
        return self.times.shape[0]

    @property
    def state_dim(self) -> int:
        return int(self.dim_mask.sum())

    def slice(self, start: int, stop: int) -> "Demo":
        return replace(self, times=self.times[start:stop], noise=self.noise[start:stop],
                       coarse=self.coarse[start:stop], err=self.err[start:stop])

    def to_csv(self, path_or_buf) -> None:
        d = self.state_dim
        rows = [["n", "t"] + [f"dW{i + 1}" for i in range(MAX_DIM)]
                + [f"X{i + 1}" for i in range(d)] + [f"err{i + 1}" for i in range(d)]]
        for n in range(self.n_columns):
            rows.append([n, repr(float(self.times[n]))]
                        + [repr(float(v)) for v in self.noise[n]]
                        + [repr(float(v)) for v in self.coarse[n, :d]]
                        + [repr(float(v)) for v in self.err[n, :d]])
        _write_rows(path_or_buf, rows)


def _write_rows(path_or_buf, rows):
    if isinstance(path_or_buf, (str, os.PathLike)):
        with open(path_or_buf, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    else:
        csv.writer(path_or_buf).writerows(rows)


def _pad(a: np.ndarray, width: int = MAX_DIM) -> np.ndarray:
    out = np.zeros(a.shape[:-1] + (width,))
    out[..., : a.shape[-1]] = a
    return out


def build_demo(pair, system: SdeSystem | str | None = None) -> Demo:
    """Transcribe a trajectory pair (or shard record) into a demo block."""
    system = _resolve(system or pair.system_id)
    coarse = np.asarray(pair.coarse, dtype=float)
    err = np.asarray(pair.err, dtype=float)
    d = coarse.shape[-1]
    if d > MAX_DIM:
        raise ValueError(f"state dimension {d} exceeds {MAX_DIM}")
    N = coarse.shape[0] - 1
    agg = np.asarray(pair.agg_noise, dtype=float)[:, list(system.token_noise_channels)]
    if agg.shape[0] != N or err.shape != coarse.shape:
        raise ValueError("inconsistent pair arrays")
    noise = np.zeros((N + 1, MAX_DIM))
    noise[:N, : agg.shape[1]] = agg
    mask = np.zeros(MAX_DIM)
    mask[:d] = 1.0
    times = np.arange(N + 1) * (pair.k * pair.dt)
    return Demo(system.id, dict(pair.params), times, noise, _pad(coarse), _pad(err), mask)


# -- normalisation -------------------------------------------------------------

@dataclass
class Normalizer:
    """Per-system affine scaling of times, noise, states and errors."""

    time_scale: float
    noise_scale: float
    value_mean: np.ndarray
    value_std: np.ndarray
    err_std: np.ndarray

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(1.0, 1.0, np.zeros(MAX_DIM), np.ones(MAX_DIM), np.ones(MAX_DIM))

    @classmethod
    def fit(cls, coarse, err, dt_coarse: float, n_coarse: int) -> "Normalizer":
        coarse = np.asarray(coarse, dtype=float).reshape(-1, np.shape(coarse)[-1])
        err = np.asarray(err, dtype=float).reshape(-1, np.shape(err)[-1])
        d = coarse.shape[1]
        mean, std, es = np.zeros(MAX_DIM), np.ones(MAX_DIM), np.ones(MAX_DIM)
        mean[:d] = coarse.mean(axis=0)
        std[:d] = np.maximum(coarse.std(axis=0), 1e-12)
        es[:d] = np.maximum(np.sqrt((err * err).mean(axis=0)), 1e-12)
        return cls(n_coarse * dt_coarse, math.sqrt(dt_coarse), mean, std, es)

    def to_json(self) -> dict:
        return {
            "time_scale": self.time_scale, "noise_scale": self.noise_scale,
            "value_mean": [float(v) for v in self.value_mean],
            "value_std": [float(v) for v in self.value_std],
            "err_std": [float(v) for v in self.err_std],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Normalizer":
        return cls(float(d["time_scale"]), float(d["noise_scale"]),
                   np.array(d["value_mean"], float), np.array(d["value_std"], float),
                   np.array(d["err_std"], float))

    def err_to_model(self, err):
        return np.asarray(err) / self.err_std

    def err_from_model(self, z):
        return np.asarray(z) * self.err_std


# -- samples -------------------------------------------------------------------

@dataclass
class IclSample:
    features: np.ndarray       # (T, 11); prompt rows are zero
    category: np.ndarray       # (T,)
    example: np.ndarray        # (T,); prompt tokens carry -1
    target: np.ndarray         # (T, 3) normalised err at cond positions
    target_mask: np.ndarray    # (T, 3) valid dims at cond positions
    loss_mask: np.ndarray      # (T,) bool
    col: np.ndarray            # (T,) column index n within the example block
    prompt: np.ndarray | None = None  # (P, d_model)
    demos: list = field(default_factory=list, repr=False)
    normalizer: Normalizer | None = field(default=None, repr=False)

    @property
    def n_tokens(self) -> int:
        return self.features.shape[0]

    @property
    def n_prompt(self) -> int:
        return 0 if self.prompt is None else self.prompt.shape[0]

    @property
    def n_examples(self) -> int:
        return int(self.example.max()) + 1

    def cond_positions(self, example: int | None = None) -> np.ndarray:
        sel = self.category == CAT_COND
        if example is not None:
            sel &= self.example == example
        return np.flatnonzero(sel)

    def layout_key(self) -> tuple:
        return (self.n_tokens, self.n_prompt, self.category.tobytes(), self.example.tobytes())


def token_count(K: int, N: int, n_prompt: int = 0) -> int:
    return n_prompt + (K + 1) * 2 * (N + 1)


def _tokens(demo: Demo, norm: Normalizer, category: int) -> np.ndarray:
    n = demo.n_columns
    f = np.zeros((n, FEATURE_DIM))
    f[:, 0] = demo.times / norm.time_scale
    f[:, 1:4] = demo.noise / norm.noise_scale
    if category == CAT_COND:
        f[:, 4:7] = (demo.coarse - norm.value_mean) / norm.value_std * demo.dim_mask
    else:
        f[:, 4:7] = demo.err / norm.err_std * demo.dim_mask
    f[:, 7:10] = demo.dim_mask
    return f


def _same_source(a: Demo, b: Demo) -> bool:
    if a.system_id != b.system_id or a.params.keys() != b.params.keys():
        return False
    return all(_param_close(a.params[k], b.params[k]) for k in a.params)


def _param_close(a, b) -> bool:
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        a, b = float(a), float(b)
        return abs(a - b) <= 1e-6 * abs(b)
    return bool(np.allclose(a, b, rtol=1e-6, atol=0))


def assemble_icl_sample(demos, query: Demo, prompt: np.ndarray | None = None,
                        normalizer: Normalizer | None = None) -> IclSample:
    """Lay out ``K`` demos plus a query as one token sequence."""
    norm = normalizer or Normalizer.identity()
    examples = list(demos) + [query]
    for d in examples[1:]:
        if not _same_source(examples[0], d):
            raise ValueError("all examples must come from the same system and parameters")
    feats, cats, exs, tgts, tmask, cols = [], [], [], [], [], []
    P = 0 if prompt is None else int(prompt.shape[0])
    if P:
        feats.append(np.zeros((P, FEATURE_DIM)))
        cats.append(np.full(P, CAT_PROMPT))
        exs.append(np.full(P, -1))
        tgts.append(np.zeros((P, MAX_DIM)))
        tmask.append(np.zeros((P, MAX_DIM)))
        cols.append(np.arange(P))
    for e, demo in enumerate(examples):
        n = demo.n_columns
        for cat in (CAT_COND, CAT_ERR):
            feats.append(_tokens(demo, norm, cat))
            cats.append(np.full(n, cat))
            exs.append(np.full(n, e))
            cols.append(np.arange(n))
            if cat == CAT_COND:
                tgts.append(norm.err_to_model(demo.err) * demo.dim_mask)
                tmask.append(np.broadcast_to(demo.dim_mask, (n, MAX_DIM)).copy())
            else:
                tgts.append(np.zeros((n, MAX_DIM)))
                tmask.append(np.zeros((n, MAX_DIM)))
    category = np.concatenate(cats)
    example = np.concatenate(exs)
    first_scored = 0 if P else 1
    loss_mask = (category == CAT_COND) & (example >= first_scored)
    return IclSample(
        np.concatenate(feats), category, example, np.concatenate(tgts), np.concatenate(tmask),
        loss_mask, np.concatenate(cols), None if prompt is None else np.asarray(prompt, float),
        examples, norm,
    )


def apply_timestamp_dropout(sample: IclSample, fraction: float, rng: _rng.RngStream) -> IclSample:
    """Hide the noise and value rows of a random subset of condition columns."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("dropout fraction must lie in [0, 1)")
    if fraction == 0.0:
        return sample
    last = sample.n_examples - 1
    eligible = np.flatnonzero((sample.category == CAT_COND)
                              & ~((sample.example == last) & (sample.col == 0)))
    count = int(round(fraction * eligible.size))
    if count == 0:
        return sample
    picked = eligible[rng.choice(eligible.size, count)]
    feats = sample.features.copy()
    feats[picked, 1:7] = 0.0
    feats[picked, 10] = 1.0
    loss = sample.loss_mask.copy()
    loss[picked] = False
    return replace(sample, features=feats, loss_mask=loss)


def embed_prompt_stub(text: str, d_model: int, n_tokens: int = 8) -> np.ndarray:
    """Deterministic hash embedding standing in for a pretrained text encoder.

    Word ``i`` contributes a Gaussian vector (seeded by its SHA-256 digest) to
    slot ``i % n_tokens``; each slot is scaled to unit norm.
    """
    out = np.zeros((n_tokens, d_model))
    for i, word in enumerate(text.split()):
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        key = int.from_bytes(digest[:8], "little")
        out[i % n_tokens] += _rng.normals(key, d_model)
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    np.divide(out, norms, out=out, where=norms > 0)
    return out


_PROMPTS = None


def system_prompts(system_id: str) -> list[str]:
    global _PROMPTS
    if _PROMPTS is None:
        with open(os.path.join(os.path.dirname(__file__), "prompts.json")) as fh:
            _PROMPTS = json.load(fh)
    return _PROMPTS.get(system_id, [])


# -- shards --------------------------------------------------------------------

@dataclass
class ShardRecord:
    system_id: str
    params: dict
    coarse: np.ndarray
    err: np.ndarray
    agg_noise: np.ndarray
    dt: float
    k: int
    index: tuple

    @property
    def fine_at_coarse(self):
        return self.coarse + self.err


@dataclass
class Shard:
    manifest: dict
    params: np.ndarray   # (R, P)
    coarse: np.ndarray   # (R, N+1, d)
    err: np.ndarray      # (R, N+1, d)
    agg_noise: np.ndarray  # (R, N, m)
    index: np.ndarray    # (R, 3) param / ic / noise indices

    def __len__(self):
        return self.coarse.shape[0]

    @property
    def system(self) -> SdeSystem:
        return _resolve(self.manifest["system_id"])

    @property
    def normalizer(self) -> Normalizer:
        stats = self.manifest.get("stats")
        if stats is None:
            raise ShardError("shard carries no normalisation statistics")
        return Normalizer.from_json(stats)

    def record(self, r: int) -> ShardRecord:
        s = self.system
        return ShardRecord(
            s.id, {n: float(v) for n, v in zip(s.param_names, self.params[r])},
            self.coarse[r].astype(float), self.err[r].astype(float),
            self.agg_noise[r].astype(float), float(self.manifest["dt_fine"]),
            int(self.manifest["stride_k"]), tuple(int(v) for v in self.index[r]),
        )

    def __iter__(self):
        return (self.record(r) for r in range(len(self)))

    def records_for_param(self, p: int) -> np.ndarray:
        return np.flatnonzero(self.index[:, 0] == p)


def _record_layout(P, N, d, m):
    return {"params": [P], "coarse": [N + 1, d], "err": [N + 1, d], "agg_noise": [N, m]}


def write_shard(path, system, params, coarse, err, agg_noise, index, *, base_seed=0,
                counts=None, rejected: int = 0, stats: Normalizer | None | str = "fit") -> dict:
    """Write records to ``path`` plus a JSON manifest at ``path + '.json'``."""
    system = _resolve(system)
    params = np.asarray(params, dtype=np.float64).reshape(-1, len(system.param_spec))
    R = params.shape[0]
    N = int(np.shape(coarse)[1]) - 1 if R else system.horizon_steps_coarse
    d, m = system.state_dim, system.noise_dim
    coarse = np.asarray(coarse, dtype=np.float64).reshape(R, N + 1, d)
    err = np.asarray(err, dtype=np.float64).reshape(R, N + 1, d)
    agg_noise = np.asarray(agg_noise, dtype=np.float64).reshape(R, N, m)
    per = len(system.param_spec) + 2 * (N + 1) * d + N * m
    payload = np.concatenate(
        [params, coarse.reshape(R, -1), err.reshape(R, -1), agg_noise.reshape(R, -1)], axis=1
    ).astype("<f4") if R else np.zeros((0, per), "<f4")
    blob = payload.tobytes()
    header = SHARD_MAGIC + struct.pack("<III", SHARD_VERSION, R, per)
    if isinstance(stats, str):
        stats = (Normalizer.fit(coarse.astype(np.float32), err.astype(np.float32),
                                system.stride_k * system.dt_fine, N) if R else None)
    dt_coarse = system.stride_k * system.dt_fine
    manifest = {
        "format_version": SHARD_VERSION,
        "system_id": system.id,
        "counts": counts or {"params": None, "ics": None, "noises": None},
        "records": R,
        "n_coarse": N,
        "stride_k": system.stride_k,
        "dt_fine": system.dt_fine,
        "dt_coarse": dt_coarse,
        "seed": {"base_seed": int(base_seed)},
        "param_names": list(system.param_names),
        "record_layout": _record_layout(len(system.param_spec), N, d, m),
        "floats_per_record": per,
        "offsets": [len(header) + r * per * 4 for r in range(R)],
        "record_index": np.asarray(index, dtype=int).reshape(R, 3).tolist(),
        "rejected": int(rejected),
        "checksum": hashlib.sha256(blob).hexdigest(),
        "stats": None if stats is None else stats.to_json(),
    }
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(blob)
    with open(f"{path}.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def read_shard(path) -> Shard:
    try:
        with open(f"{path}.json") as fh:
            manifest = json.load(fh)
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError as exc:
        raise ShardError(f"missing shard file: {exc.filename}") from None
    if manifest.get("format_version") != SHARD_VERSION:
        raise ShardError(f"{path}: unsupported manifest version {manifest.get('format_version')}")
    if raw[:4] != SHARD_MAGIC or len(raw) < 16:
        raise ShardError(f"{path}: not a shard file")
    version, R, per = struct.unpack("<III", raw[4:16])
    if version != SHARD_VERSION:
        raise ShardError(f"{path}: unsupported shard version {version}")
    blob = raw[16:]
    if hashlib.sha256(blob).hexdigest() != manifest["checksum"]:
        raise ShardError(f"{path}: checksum mismatch (truncated or corrupted payload)")
    if R != manifest["records"] or per != manifest["floats_per_record"]:
        raise ShardError(f"{path}: header disagrees with manifest")
    offs = manifest["offsets"]
    if any(b <= a for a, b in zip(offs, offs[1:])):
        raise ShardError(f"{path}: offsets are not strictly increasing")
    lay = manifest["record_layout"]
    data = np.frombuffer(blob, dtype="<f4").reshape(R, per)
    P = lay["params"][0]
    n1, d = lay["coarse"]
    N, m = lay["agg_noise"]
    a = P
    b = a + n1 * d
    c = b + n1 * d
    return Shard(
        manifest,
        data[:, :P].copy(),
        data[:, a:b].reshape(R, n1, d).copy(),
        data[:, b:c].reshape(R, n1, d).copy(),
        data[:, c:].reshape(R, N, m).copy(),
        np.asarray(manifest["record_index"], dtype=int).reshape(R, 3),
    )


# -- dataset protocol ----------------------------------------------------------

def param_vector(system: SdeSystem, seed: int, p: int) -> np.ndarray:
    r = _rng.RngStream.from_fields(seed, _rng.system_code(system.id), _rng.TAG_PARAMS, p)
    return system.param_array(sample_params(system, r))


def initial_state(system: SdeSystem, seed: int, p: int, i: int) -> np.ndarray:
    r = _rng.RngStream.from_fields(seed, _rng.system_code(system.id), _rng.TAG_IC, p, i)
    return sample_initial(system, r)


def simulate_indices(system: SdeSystem, seed: int, pv, idx, n_coarse: int,
                     bound: float = DEFAULT_BOUND, max_attempts: int = 20):
    """Simulate the pairs named by ``(param, ic, noise)`` index triples under one parameter vector.

    Blown-up paths are redrawn with the next attempt index of their noise stream.
    Returns ``(BatchPaths, rejected_count)``.
    """
    idx = [tuple(int(v) for v in t) for t in idx]
    x0 = np.array([initial_state(system, seed, p, i) for p, i, _ in idx])
    attempt = np.zeros(len(idx), dtype=int)
    out = None
    todo = np.arange(len(idx))
    rejected = 0
    while todo.size:
        keys = [NoiseStream(seed, system.id, *idx[j], attempt=int(attempt[j])).key for j in todo]
        res = simulate_batch(system, pv, x0[todo], keys, n_coarse=n_coarse, bound=bound)
        if out is None:
            out = res
        else:
            out.coarse[todo] = res.coarse
            out.fine_at_coarse[todo] = res.fine_at_coarse
            out.agg_noise[todo] = res.agg_noise
        bad = todo[~res.ok]
        rejected += bad.size
        attempt[bad] += 1
        if bad.size and attempt[bad].max() >= max_attempts:
            raise RuntimeError(f"{system.id}: parameter set {idx[bad[0]][0]} keeps blowing up "
                               f"after {max_attempts} noise resamples")
        todo = bad
    return out, rejected


def _simulate_param(args):
    system, seed, p, n_ics, n_noises, N, bound, max_attempts, param_override = args
    system = _resolve(system)
    pv = param_vector(system, seed, p) if param_override is None else np.asarray(param_override)
    idx = [(p, i, n) for i in range(n_ics) for n in range(n_noises)]
    out, rejected = simulate_indices(system, seed, pv, idx, N, bound, max_attempts)
    return pv, out.coarse, out.err, out.agg_noise, np.array(idx), rejected


def generate_dataset(system, n_params: int, n_ics: int, n_noises: int, seed: int = 0,
                     n_coarse: int | None = None, workers: int = 1,
                     bound: float = DEFAULT_BOUND, max_attempts: int = 20,
                     param_offset: int = 0, fixed_params: dict | None = None) -> dict:
    """Simulate ``n_params x n_ics x n_noises`` pairs; blown-up paths are resampled.

    Output is independent of ``workers``: every trajectory's randomness is a
    function of its (param, ic, noise, attempt) indices alone.
    """
    system = _resolve(system)
    N = system.horizon_steps_coarse if n_coarse is None else n_coarse
    override = None if fixed_params is None else system.param_array({**system.defaults(), **fixed_params})
    # workers get the registry id when there is one; system objects need not pickle
    ref = system.id if REGISTRY.get(system.id) is system else system
    jobs = [(ref, seed, param_offset + p, n_ics, n_noises, N, bound, max_attempts, override)
            for p in range(n_params)]
    if workers > 1:
        with mp.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_simulate_param, jobs, chunksize=max(1, len(jobs) // (4 * workers)))
    else:
        parts = [_simulate_param(j) for j in jobs]
    P = len(system.param_spec)
    d, m = system.state_dim, system.noise_dim
    if not parts:
        return {"params": np.zeros((0, P)), "coarse": np.zeros((0, N + 1, d)),
                "err": np.zeros((0, N + 1, d)), "agg_noise": np.zeros((0, N, m)),
                "index": np.zeros((0, 3), int), "rejected": 0}
    per = n_ics * n_noises
    return {
        "params": np.concatenate([np.repeat(pv[None], per, axis=0) for pv, *_ in parts]),
        "coarse": np.concatenate([q[1] for q in parts]),
        "err": np.concatenate([q[2] for q in parts]),
        "agg_noise": np.concatenate([q[3] for q in parts]),
        "index": np.concatenate([q[4] for q in parts]),
        "rejected": int(sum(q[5] for q in parts)),
    }


def generate_shard(path, system, n_params, n_ics, n_noises, seed=0, n_coarse=None,
                   workers=1, **kw) -> dict:
    system = _resolve(system)
    data = generate_dataset(system, n_params, n_ics, n_noises, seed, n_coarse, workers, **kw)
    return write_shard(
        path, system, data["params"], data["coarse"], data["err"], data["agg_noise"],
        data["index"], base_seed=seed, rejected=data["rejected"],
        counts={"params": n_params, "ics": n_ics, "noises": n_noises},
    )


# -- evaluation sets -----------------------------------------------------------

@dataclass
class EvalSet:
    """Per equation: ``K`` demos plus ``m`` query realisations from one initial state."""

    system_id: str
    params: list          # n_eq parameter dicts
    demos: list           # n_eq lists of K Demos
    queries: list         # n_eq lists of m Demos (err holds the reference)
    coarse: np.ndarray    # (n_eq, m, L+1, d)
    fine: np.ndarray      # (n_eq, m, L+1, d)
    agg_noise: np.ndarray  # (n_eq, m, L, channels) in token channel order
    times: np.ndarray     # (L+1,)

    @property
    def n_eq(self) -> int:
        return len(self.demos)


def make_eval_set(system, n_eq: int, m: int, K: int = 4, seed: int = 1, n_coarse: int | None = None,
                  fixed_params: dict | None = None, **kw) -> EvalSet:
    """Equation ``e`` uses parameter draw ``e``; queries share initial state 0 and
    differ in noise, demos use initial states ``1..K``. Query paths may be longer
    than the demos (``n_coarse``) for roll-out experiments.
    """
    system = _resolve(system)
    N = system.horizon_steps_coarse
    L = N if n_coarse is None else n_coarse
    override = None if fixed_params is None else system.param_array({**system.defaults(), **fixed_params})
    params, demos, queries, coarse, fine, noise = [], [], [], [], [], []
    ch = list(system.token_noise_channels)
    for e in range(n_eq):
        pv = param_vector(system, seed, e) if override is None else override
        prm = system.params_from_array(pv)
        dp, _ = simulate_indices(system, seed, pv, [(e, 1 + j, 0) for j in range(K)], N, **kw)
        qp, _ = simulate_indices(system, seed, pv, [(e, 0, w) for w in range(m)], L, **kw)
        demos.append([build_demo(_Pair(system.id, prm, system, dp, j)) for j in range(K)])
        queries.append([build_demo(_Pair(system.id, prm, system, qp, w)) for w in range(m)])
        params.append(prm)
        coarse.append(qp.coarse)
        fine.append(qp.fine_at_coarse)
        noise.append(qp.agg_noise[..., ch])
    times = np.arange(L + 1) * system.stride_k * system.dt_fine
    return EvalSet(system.id, params, demos, queries, np.array(coarse), np.array(fine),
                   np.array(noise), times)


@dataclass
class _Pair:
    system_id: str
    params: dict
    system: SdeSystem
    paths: object
    j: int

    @property
    def coarse(self):
        return self.paths.coarse[self.j]

    @property
    def err(self):
        return self.paths.fine_at_coarse[self.j] - self.paths.coarse[self.j]

    @property
    def agg_noise(self):
        return self.paths.agg_noise[self.j]

    @property
    def k(self):
        return self.system.stride_k

    @property
    def dt(self):
        return self.system.dt_fine
