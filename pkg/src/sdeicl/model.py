"""Decoder-only in-context transformer predicting error terms at condition tokens."""

from __future__ import annotations

import functools
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as _rng
from .dataset import CAT_COND, CAT_ERR, CAT_PROMPT, FEATURE_DIM, MAX_DIM, Demo, IclSample

CKPT_MAGIC = b"FMCK"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 2
    n_heads: int = 1
    d_model: int = 64
    d_ff: int = 128
    max_examples: int = 5        # K demos + 1 query
    max_prompt_tokens: int = 8
    feature_dim: int = FEATURE_DIM
    out_dim: int = MAX_DIM
    head_dim: int | None = None  # defaults to d_model // n_heads
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("n_layers", "n_heads", "d_model", "d_ff", "max_examples"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.head_dim is None and self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.head_dim is not None and self.head_dim <= 0:
            raise ValueError("head_dim must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def hd(self) -> int:
        return self.head_dim or self.d_model // self.n_heads

    @property
    def inner(self) -> int:
        return self.hd * self.n_heads

    @property
    def n_positions(self) -> int:
        return 2 * self.max_examples + 1

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        """Full-size configuration: six layers, eight 256-wide heads, d_model 256."""
        return cls(n_layers=6, n_heads=8, d_model=256, d_ff=1024, head_dim=256)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, i, f = cfg.d_model, cfg.inner, cfg.d_ff
    s = {"embed.w": (cfg.feature_dim, d), "embed.b": (d,), "pos": (cfg.n_positions, d)}
    for l in range(cfg.n_layers):
        p = f"l{l}."
        s.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            # no key bias: it shifts every score in a row equally, so softmax ignores it
            p + "wq": (d, i), p + "bq": (i,), p + "wk": (d, i),
            p + "wv": (d, i), p + "bv": (i,), p + "wo": (i, d), p + "bo": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "w1": (d, f), p + "b1": (f,), p + "w2": (f, d), p + "b2": (d,),
        })
    s.update({"lnf.g": (d,), "lnf.b": (d,), "head.w1": (d, d), "head.b1": (d,),
              "head.w2": (d, cfg.out_dim), "head.b2": (cfg.out_dim,)})
    return s


def param_count(cfg: ModelConfig) -> int:
    """Closed form; equals the sum over :func:`param_shapes`."""
    d, i, f, L = cfg.d_model, cfg.inner, cfg.d_ff, cfg.n_layers
    per_layer = 4 * d + 4 * d * i + 2 * i + d + 2 * d * f + f + d
    return (cfg.feature_dim * d + d + cfg.n_positions * d + L * per_layer
            + 2 * d + d * d + d + d * cfg.out_dim + cfg.out_dim)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, ad.Tensor]:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains."""
    out = {}
    dt = np.dtype(cfg.dtype)
    for j, (name, shape) in enumerate(param_shapes(cfg).items()):
        leaf = name.rsplit(".", 1)[-1]
        if len(shape) == 2:
            lim = glorot_limit(*shape)
            u = _rng.uniforms(_rng.mix_key(seed, _rng.TAG_MISC, j), shape[0] * shape[1])
            arr = ((2.0 * u - 1.0) * lim).reshape(shape)
        elif leaf == "g":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        out[name] = ad.Tensor(arr.astype(dt), requires_grad=True, name=name)
    return out


# -- layout --------------------------------------------------------------------

def build_attention_mask(category, example) -> np.ndarray:
    """Boolean ``allowed[query, key]`` for a token layout."""
    cat = np.asarray(category)
    ex = np.asarray(example)
    bad = ~np.isin(cat, (CAT_PROMPT, CAT_COND, CAT_ERR))
    if bad.any():
        raise ValueError(f"unknown token category {cat[bad][0]} at position {np.flatnonzero(bad)[0]}")
    T = cat.size
    pos = np.arange(T)
    qc, kc = cat[:, None], cat[None, :]
    qe, ke = ex[:, None], ex[None, :]
    q_prompt = qc == CAT_PROMPT
    k_prompt = kc == CAT_PROMPT
    earlier = (~k_prompt) & (ke < qe)
    own_cond = (ke == qe) & (kc == CAT_COND)
    own_err = (qc == CAT_ERR) & (kc == CAT_ERR) & (ke == qe) & (pos[None, :] <= pos[:, None])
    return np.where(q_prompt, k_prompt, k_prompt | earlier | own_cond | own_err)


@functools.lru_cache(maxsize=64)
def _layout_tables(cat: bytes, ex: bytes, cat_dt: str, ex_dt: str):
    category, example = np.frombuffer(cat, cat_dt), np.frombuffer(ex, ex_dt)
    allowed = build_attention_mask(category, example)
    mask_add = np.where(allowed, 0.0, ad.MASK_SENTINEL)
    mask_add.flags.writeable = False
    return mask_add, attention_blocks(category, example, allowed)


def attention_blocks(category, example, allowed=None) -> list[tuple[int, int, int]]:
    """``(r0, r1, key_limit)`` per run of tokens sharing (category, example).

    Every key at or beyond ``key_limit`` is masked for rows ``r0:r1``, so
    attention for the run only needs the key prefix.
    """
    cat, ex = np.asarray(category), np.asarray(example)
    if allowed is None:
        allowed = build_attention_mask(cat, ex)
    T = cat.size
    last = T - np.argmax(allowed[:, ::-1], axis=1)
    cuts = np.flatnonzero((cat[1:] != cat[:-1]) | (ex[1:] != ex[:-1])) + 1
    bounds = np.concatenate([[0], cuts, [T]])
    return [(int(a), int(b), int(last[a:b].max())) for a, b in zip(bounds[:-1], bounds[1:])]


def position_index(category, example) -> np.ndarray:
    """Row of the positional table: 0 for prompt, ``1 + 2e + (cat - 1)`` otherwise."""
    cat = np.asarray(category)
    ex = np.asarray(example)
    return np.where(cat == CAT_PROMPT, 0, 1 + 2 * ex + (cat - CAT_COND))


@dataclass
class Batch:
    features: np.ndarray     # (B, T, 11)
    category: np.ndarray     # (T,)
    example: np.ndarray      # (T,)
    target: np.ndarray       # (B, T, 3)
    weights: np.ndarray      # (B, T, 3) loss_mask * target_mask
    loss_mask: np.ndarray    # (B, T)
    prompt: np.ndarray | None = None  # (B, P, d_model)
    mask_add: np.ndarray = field(init=False, repr=False)
    blocks: list = field(init=False, repr=False)

    def __post_init__(self):
        self.mask_add, self.blocks = _layout_tables(
            self.category.tobytes(), self.example.tobytes(),
            self.category.dtype.str, self.example.dtype.str)

    @property
    def cond_rows(self) -> np.ndarray:
        return np.flatnonzero(self.category == CAT_COND)

    @property
    def cond_blocks(self) -> list:
        return [b for b in self.blocks if self.category[b[0]] == CAT_COND]

    @property
    def n_prompt(self) -> int:
        return 0 if self.prompt is None else self.prompt.shape[1]


def collate(samples: list[IclSample]) -> Batch:
    first = samples[0]
    key = first.layout_key()
    for s in samples[1:]:
        if s.layout_key() != key:
            raise ValueError("samples in a batch must share one token layout")
    prompt = None if first.prompt is None else np.stack([s.prompt for s in samples])
    lm = np.stack([s.loss_mask for s in samples])
    tm = np.stack([s.target_mask for s in samples])
    return Batch(
        np.stack([s.features for s in samples]), first.category, first.example,
        np.stack([s.target for s in samples]), lm[..., None] * tm, lm, prompt,
    )


# -- model ---------------------------------------------------------------------

class Transformer:
    def __init__(self, config: ModelConfig, params: dict[str, ad.Tensor] | None = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        want = param_shapes(config)
        if set(want) != set(self.params):
            raise ValueError("parameter names do not match the configuration")
        for n, s in want.items():
            if self.params[n].shape != s:
                raise ValueError(f"parameter {n}: shape {self.params[n].shape} != {s}")

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def _check_layout(self, batch: Batch) -> None:
        cfg = self.config
        if batch.features.shape[-1] != cfg.feature_dim:
            raise ValueError(f"feature width {batch.features.shape[-1]} != model's {cfg.feature_dim}")
        if int(batch.example.max()) + 1 > cfg.max_examples:
            raise ValueError(f"sample has {int(batch.example.max()) + 1} examples; "
                             f"model supports {cfg.max_examples}")
        if batch.n_prompt > cfg.max_prompt_tokens:
            raise ValueError(f"{batch.n_prompt} prompt tokens exceed the model's {cfg.max_prompt_tokens}")
        if batch.prompt is not None and batch.prompt.shape[-1] != cfg.d_model:
            raise ValueError("prompt embedding width does not match d_model")

    def forward(self, batch: Batch) -> ad.Tensor:
        """Outputs ``(B, #cond tokens, out_dim)`` at condition positions, in token order."""
        self._check_layout(batch)
        cfg, P = self.config, self.params
        dt = self.dtype
        B, T, _ = batch.features.shape
        Pn = batch.n_prompt
        feats = batch.features[:, Pn:].astype(dt)
        x = ad.add(ad.matmul(feats, P["embed.w"]), P["embed.b"])
        if Pn:
            x = ad.concat([ad.Tensor(batch.prompt.astype(dt)), x], axis=1)
        x = ad.add(x, ad.gather(P["pos"], position_index(batch.category, batch.example)))
        mask_add = batch.mask_add.astype(dt)
        for l in range(cfg.n_layers):
            # Only condition rows of the final layer reach the head.
            last = l == cfg.n_layers - 1
            x = self._block(x, l, mask_add, batch.cond_blocks if last else batch.blocks,
                            batch.cond_rows if last else None, B, T)
            if not np.isfinite(x.data).all():
                raise FloatingPointError(f"non-finite activations after layer {l}")
        x = ad.layer_norm(x, P["lnf.g"], P["lnf.b"])
        h = ad.gelu(ad.add(ad.matmul(x, P["head.w1"]), P["head.b1"]))
        return ad.add(ad.matmul(h, P["head.w2"]), P["head.b2"])

    def _heads(self, x, B, T):
        cfg = self.config
        return ad.transpose(ad.reshape(x, (B, T, cfg.n_heads, cfg.hd)), (0, 2, 1, 3))

    def _block(self, x, l, mask_add, blocks, rows, B, T):
        cfg, P = self.config, self.params
        p = f"l{l}."
        h = ad.layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
        q = self._heads(ad.add(ad.matmul(h, P[p + "wq"]), P[p + "bq"]), B, T)
        k = self._heads(ad.matmul(h, P[p + "wk"]), B, T)
        v = self._heads(ad.add(ad.matmul(h, P[p + "wv"]), P[p + "bv"]), B, T)
        a = ad.block_attention(q, k, v, mask_add, blocks, 1.0 / math.sqrt(cfg.hd))
        R = a.shape[2]
        o = ad.reshape(ad.transpose(a, (0, 2, 1, 3)), (B, R, cfg.inner))
        if rows is not None:
            x = ad.index_rows(x, rows, axis=1)
        x = ad.add(x, ad.add(ad.matmul(o, P[p + "wo"]), P[p + "bo"]))
        h = ad.layer_norm(x, P[p + "ln2.g"], P[p + "ln2.b"])
        h = ad.gelu(ad.add(ad.matmul(h, P[p + "w1"]), P[p + "b1"]))
        return ad.add(x, ad.add(ad.matmul(h, P[p + "w2"]), P[p + "b2"]))

    def loss(self, batch: Batch) -> ad.Tensor:
        rows = batch.cond_rows
        return msd_loss(self.forward(batch), batch.target[:, rows], batch.loss_mask[:, rows],
                        batch.weights[:, rows])

    def predict(self, sample: IclSample) -> np.ndarray:
        """Normalised predictions ``(#cond tokens, out_dim)`` in token order."""
        return self.forward(collate([sample])).data[0]

    # -- inference fast path -------------------------------------------------

    def predict_queries(self, context: IclSample, queries: list[Demo]) -> np.ndarray:
        """Normalised predictions ``(Q, N+1, out_dim)`` for many queries sharing one context.

        ``context`` is any sample whose last example is a query; its demos and
        prompt are reused. The demo prefix is encoded once. Query condition
        tokens see the whole prefix and their own condition block, so the
        query error tokens never need to be materialised.
        """
        from .dataset import _tokens

        cfg, P = self.config, self.params
        dt = self.dtype
        norm = context.normalizer
        q_ex = context.n_examples - 1
        pre = context.example < q_ex
        pre_batch = Batch(context.features[None, pre], context.category[pre], context.example[pre],
                          context.target[None, pre], context.target_mask[None, pre] * 0,
                          context.loss_mask[None, pre],
                          None if context.prompt is None else context.prompt[None])
        self._check_layout(pre_batch)
        kv = self._prefix_cache(pre_batch)
        xq = np.stack([_tokens(q, norm, CAT_COND) for q in queries]).astype(dt)
        Q, n, _ = xq.shape
        x = xq @ P["embed.w"].data + P["embed.b"].data
        x = x + P["pos"].data[1 + 2 * q_ex]
        H, hd = cfg.n_heads, cfg.hd
        scale = dt.type(1.0 / math.sqrt(hd))
        for l in range(cfg.n_layers):
            p = f"l{l}."
            h = _ln(x, P[p + "ln1.g"].data, P[p + "ln1.b"].data)
            # Heads lead so each head's prefix scores are one (Q*n, Tp) product.
            q = _split((h @ P[p + "wq"].data + P[p + "bq"].data) * scale, (Q * n, H, hd), (1, 0, 2))
            k = _split(h @ P[p + "wk"].data, (Q, n, H, hd), (2, 0, 3, 1))
            v = _split(h @ P[p + "wv"].data + P[p + "bv"].data, (Q, n, H, hd), (2, 0, 1, 3))
            kp, vp = kv[l]  # (H, Tp, hd + 1); last column holds 1 for the row sums
            o = _query_attention(q, k, v, kp, vp, Q, n)
            o = o.transpose(1, 2, 0, 3).reshape(Q, n, cfg.inner)
            x = _residual(x, o, P[p + "wo"].data, P[p + "bo"].data)
            h = _ln(x, P[p + "ln2.g"].data, P[p + "ln2.b"].data)
            x = _residual(x, _gelu(h @ P[p + "w1"].data + P[p + "b1"].data), P[p + "w2"].data, P[p + "b2"].data)
        x = _ln(x, P["lnf.g"].data, P["lnf.b"].data)
        return _gelu(x @ P["head.w1"].data + P["head.b1"].data) @ P["head.w2"].data + P["head.b2"].data

    def _prefix_cache(self, batch: Batch):
        """Per-layer keys and values of the context prefix, computed without a tape."""
        cfg, P = self.config, self.params
        dt = self.dtype
        B, T, _ = batch.features.shape
        Pn = batch.n_prompt
        x = batch.features[0, Pn:].astype(dt) @ P["embed.w"].data + P["embed.b"].data
        if Pn:
            x = np.concatenate([batch.prompt[0].astype(dt), x])
        x = x + P["pos"].data[position_index(batch.category, batch.example)]
        mask_add = batch.mask_add.astype(dt)
        H, hd = cfg.n_heads, cfg.hd
        cache = []
        for l in range(cfg.n_layers):
            p = f"l{l}."
            h = _ln(x, P[p + "ln1.g"].data, P[p + "ln1.b"].data)
            k = _split(h @ P[p + "wk"].data, (T, H, hd), (1, 0, 2))
            v = _split(h @ P[p + "wv"].data + P[p + "bv"].data, (T, H, hd), (1, 0, 2))
            cache.append((k, np.concatenate([v, np.ones((H, T, 1), dt)], axis=-1)))
            if l == cfg.n_layers - 1:
                break  # queries read only this layer's keys and values
            q = _split(h @ P[p + "wq"].data + P[p + "bq"].data, (T, H, hd), (1, 0, 2))
            # in place throughout: fresh large temporaries cost more than the arithmetic
            s = q @ np.swapaxes(k, -1, -2)
            s *= dt.type(1.0 / math.sqrt(hd))
            s += mask_add
            s -= s.max(-1, keepdims=True)
            np.exp(s, out=s)
            s /= s.sum(-1, keepdims=True)
            o = (s @ v).transpose(1, 0, 2).reshape(T, cfg.inner)
            x = _residual(x, o, P[p + "wo"].data, P[p + "bo"].data)
            h = _ln(x, P[p + "ln2.g"].data, P[p + "ln2.b"].data)
            x = _residual(x, _gelu(h @ P[p + "w1"].data + P[p + "b1"].data), P[p + "w2"].data, P[p + "b2"].data)
        return cache


def _residual(x, h, w, b):
    y = h @ w
    y += b
    y += x
    return y


def _split(a, shape, axes):
    return np.ascontiguousarray(a.reshape(shape).transpose(axes))


def _query_attention(q, k, v, kp, vp, Q, n):
    """Softmax attention of query rows over [prefix keys, own condition keys].

    Scores are shifted by the Cauchy-Schwarz bound ``|q| max|k|`` instead of
    the exact row maximum so the shift rides along inside the GEMM (as an
    extra column) and the row sums come out of the value GEMM via a column of
    ones. Softmax is shift invariant, so only rounding differs; rows whose
    bound is loose enough to underflow are recomputed with the exact maximum.
    """
    H, _, hd = q.shape
    dt = q.dtype
    qn = np.sqrt((q * q).sum(-1, keepdims=True))
    kmax = np.sqrt(max(float((kp * kp).sum(-1).max()), float((k * k).sum(-2).max())))
    shift = qn * dt.type(kmax)
    qa = np.concatenate([q, -shift], axis=-1)                          # (H, Q*n, hd+1)
    ka = np.concatenate([kp, np.ones(kp.shape[:-1] + (1,), dt)], axis=-1)
    s_pre = qa @ np.swapaxes(ka, -1, -2)                                # (H, Q*n, Tp)
    np.exp(s_pre, out=s_pre)
    acc = (s_pre @ vp).reshape(H, Q, n, hd + 1)
    s_own = q.reshape(H, Q, n, hd) @ k - shift.reshape(H, Q, n, 1)      # (H, Q, n, n)
    np.exp(s_own, out=s_own)
    acc[..., :hd] += s_own @ v
    acc[..., hd] += s_own.sum(-1)
    z = acc[..., hd:]
    if z.min() < 1e-30:
        return _query_attention_exact(q, k, v, kp, vp[..., :hd], Q, n)
    return acc[..., :hd] / z


def _query_attention_exact(q, k, v, kp, vp, Q, n):
    H, _, hd = q.shape
    s_pre = (q @ np.swapaxes(kp, -1, -2)).reshape(H, Q, n, -1)
    s_own = q.reshape(H, Q, n, hd) @ k
    m = np.maximum(s_pre.max(-1, keepdims=True), s_own.max(-1, keepdims=True))
    e_pre, e_own = np.exp(s_pre - m), np.exp(s_own - m)
    z = e_pre.sum(-1, keepdims=True) + e_own.sum(-1, keepdims=True)
    return (e_pre @ vp[:, None] + e_own @ v) / z


def _ln(x, g, b, eps=ad.LN_EPS):
    xc = x - x.mean(-1, keepdims=True)
    var = np.einsum("...i,...i->...", xc, xc)[..., None]
    var *= x.dtype.type(1.0 / x.shape[-1])
    var += x.dtype.type(eps)
    np.sqrt(var, out=var)
    xc /= var
    xc *= g
    xc += b
    return xc


_C1 = -2 * ad._GC * 0.044715
_C2 = -2 * ad._GC


def _gelu(v):
    """In-place-friendly tape-free GELU; same formula as the autodiff primitive."""
    t = v * v
    t *= v.dtype.type(_C1)
    t += v.dtype.type(_C2)
    t *= v
    with np.errstate(over="ignore"):
        np.exp(t, out=t)
    t += 1.0
    np.divide(v, t, out=t)
    return t


# -- loss ----------------------------------------------------------------------

def msd_loss(pred, target, loss_mask, weights=None) -> ad.Tensor:
    """Mean over scored positions of the squared distance across valid dims."""
    pred = pred if isinstance(pred, ad.Tensor) else ad.Tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    lm = np.asarray(loss_mask, dtype=np.float64)
    if weights is None:
        weights = np.broadcast_to(lm[..., None], pred.shape)
    denom = float(lm.sum())
    if denom == 0:
        raise ValueError("loss mask selects no positions")
    return ad.weighted_sq_error(pred, target, np.asarray(weights, dtype=np.float64), denom)


def msd_unsquared(pred, target, loss_mask, weights=None) -> float:
    """Mean over scored positions of the (unsquared) Euclidean distance."""
    pred = np.asarray(pred.data if isinstance(pred, ad.Tensor) else pred, dtype=np.float64)
    lm = np.asarray(loss_mask, dtype=bool)
    if not lm.any():
        raise ValueError("loss mask selects no positions")
    w = np.broadcast_to(lm[..., None], pred.shape) if weights is None else np.asarray(weights)
    dist = np.sqrt((w * (pred - np.asarray(target)) ** 2).sum(-1))
    return float(dist[lm].mean())


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: Transformer, extra_tensors: dict | None = None,
                    meta: dict | None = None) -> None:
    """Header ``FMCK | u32 version | u32 header bytes | JSON`` followed by an f32 blob."""
    tensors = {n: t.data for n, t in model.params.items()}
    tensors.update(extra_tensors or {})
    index, parts, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        parts.append(a.tobytes())
        offset += a.size
    header = json.dumps({"config": model.config.to_json(), "tensors": index,
                         "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for p in parts:
            fh.write(p)


def load_checkpoint(path):
    """Returns ``(model, extra_tensors, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen])
    blob = np.frombuffer(raw[12 + hlen:], dtype="<f4")
    cfg = ModelConfig.from_json(header["config"])
    dt = np.dtype(cfg.dtype)
    shapes = param_shapes(cfg)
    params, extra = {}, {}
    for rec in header["tensors"]:
        a = blob[rec["offset"]: rec["offset"] + rec["count"]]
        if a.size != rec["count"]:
            raise CheckpointError(f"{path}: truncated tensor {rec['name']}")
        a = a.reshape(rec["shape"])
        if rec["name"] in shapes:
            params[rec["name"]] = ad.Tensor(a.astype(dt), requires_grad=True, name=rec["name"])
        else:
            extra[rec["name"]] = a.astype(np.float64)
    return Transformer(cfg, params), extra, header["meta"]
