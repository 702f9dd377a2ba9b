"""Minimal reverse-mode autodiff over dense numpy arrays.

Operations called inside an active :class:`Tape` record a backward closure
whenever an input requires a gradient. ``Tape.backward(loss)`` replays the
records in reverse and accumulates ``.grad`` on every participating tensor.

Broadcasting is deliberately narrow: a right operand may omit leading axes
(bias rows, positional tables, shared weight matrices) and nothing else.
"""

from __future__ import annotations

import math

import numpy as np

MASK_SENTINEL = -1e30
LN_EPS = 1e-5

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar for readability in model code.
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Context manager collecting operation records for one backward pass."""

    def __init__(self):
        self.records: list = []
        self.used = False

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        if self.used:
            raise RuntimeError("tape already consumed; re-run the forward pass before calling backward again")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self.used = True
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.records):
            if out.grad is not None:
                fn(out.grad)
        self.records = []


def _record(out: Tensor, inputs, fn) -> Tensor:
    if _ACTIVE and any(isinstance(i, Tensor) and i.requires_grad for i in inputs):
        out.requires_grad = True
        _ACTIVE[-1].records.append((out, fn))
    return out


def _acc(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.shape:
        g = g.reshape((-1,) + t.shape).sum(axis=0)
    if t.grad is None:
        t.grad = g.copy() if g.base is not None or g is t.data else g
    else:
        t.grad = t.grad + g


def _check_trailing(a: Tensor, b: Tensor, op: str) -> None:
    if b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- primitives ----------------------------------------------------------------

def add(a, b) -> Tensor:
    """``a + b`` where ``b`` matches ``a`` or a trailing slice of its shape."""
    a, b = _t(a), _t(b)
    _check_trailing(a, b, "add")
    out = Tensor(a.data + b.data)

    def back(g):
        _acc(a, g)
        _acc(b, g)

    return _record(out, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_trailing(a, b, "sub")
    out = Tensor(a.data - b.data)

    def back(g):
        _acc(a, g)
        _acc(b, -g)

    return _record(out, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)

    def back(g):
        _acc(a, g * b.data)
        _acc(b, g * a.data)

    return _record(out, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _t(a)
    out = Tensor(a.data * a.data.dtype.type(c))
    return _record(out, (a,), lambda g: _acc(a, g * c))


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """Batched ``a @ b`` (or ``a @ b^T``); a 2-D ``b`` is shared across batch axes."""
    a, b = _t(a), _t(b)
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != bd.shape[-2] or (
        b.ndim > 2 and a.shape[:-2] != b.shape[:-2]
    ):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}"
                         + (" (b transposed)" if transpose_b else ""))
    out = Tensor(a.data @ bd)

    def back(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(bd, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                a2 = a.data.reshape(-1, a.shape[-1])
                g2 = g.reshape(-1, g.shape[-1])
                gb = a2.T @ g2
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _acc(b, np.swapaxes(gb, -1, -2) if transpose_b else gb)

    return _record(out, (a, b), back)


def row_softmax_masked(x, mask_add=None) -> Tensor:
    """Softmax over the last axis after adding ``mask_add`` (0 or the sentinel)."""
    x = _t(x)
    y = x.data.copy() if mask_add is None else x.data + mask_add
    y -= y.max(axis=-1, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def back(g):
        gx = g - (g * y).sum(axis=-1, keepdims=True)
        gx *= y
        _acc(x, gx)

    return _record(out, (x,), back)


def block_attention(q, k, v, mask_add, blocks, scale: float) -> Tensor:
    """Fused masked softmax attention evaluated over row segments.

    ``q``, ``k``, ``v`` are ``(B, H, T, hd)``. Each block ``(r0, r1, lim)``
    attends query rows ``r0:r1`` to keys ``0:lim``; ``mask_add`` supplies the
    remaining masking inside that window. Keys past ``lim`` must be masked
    for those rows, so skipping them is exact. Output rows are the blocks'
    rows concatenated in block order.
    """
    q, k, v = _t(q), _t(k), _t(v)
    if q.ndim != 4 or k.shape != v.shape or q.shape[:2] != k.shape[:2] or q.shape[3] != k.shape[3]:
        raise ShapeError(f"block_attention: incompatible shapes {q.shape}, {k.shape}, {v.shape}")
    dt = q.data.dtype
    c = dt.type(scale)
    probs, outs = [], []
    for r0, r1, lim in blocks:
        sc = q.data[:, :, r0:r1] @ np.swapaxes(k.data[:, :, :lim], -1, -2)
        sc *= c
        sc += mask_add[r0:r1, :lim]
        sc -= sc.max(axis=-1, keepdims=True)
        np.exp(sc, out=sc)
        sc /= sc.sum(axis=-1, keepdims=True)
        probs.append(sc)
        outs.append(sc @ v.data[:, :, :lim])
    out = Tensor(np.concatenate(outs, axis=2) if len(outs) > 1 else outs[0])

    def back(g):
        gq = np.zeros_like(q.data) if q.requires_grad else None
        gk = np.zeros_like(k.data) if k.requires_grad else None
        gv = np.zeros_like(v.data) if v.requires_grad else None
        row = 0
        for (r0, r1, lim), p in zip(blocks, probs):
            go = g[:, :, row:row + r1 - r0]
            row += r1 - r0
            if gv is not None:
                gv[:, :, :lim] += np.swapaxes(p, -1, -2) @ go
            gp = go @ np.swapaxes(v.data[:, :, :lim], -1, -2)
            gp -= (gp * p).sum(axis=-1, keepdims=True)
            gp *= p
            gp *= c
            if gq is not None:
                gq[:, :, r0:r1] += gp @ k.data[:, :, :lim]
            if gk is not None:
                gk[:, :, :lim] += np.swapaxes(gp, -1, -2) @ q.data[:, :, r0:r1]
        for t, gt in ((q, gq), (k, gk), (v, gv)):
            if gt is not None:
                _acc(t, gt)

    return _record(out, (q, k, v), back)


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = Tensor(xh * gamma.data + beta.data)

    def back(g):
        _acc(beta, g)
        _acc(gamma, g * xh)
        if x.requires_grad:
            gx = g * gamma.data
            _acc(x, inv * (gx - gx.mean(axis=-1, keepdims=True)
                           - xh * (gx * xh).mean(axis=-1, keepdims=True)))

    return _record(out, (x, gamma, beta), back)


_GC = math.sqrt(2.0 / math.pi)


def _gelu_parts(v):
    # tanh-approximation GELU written as v * sigmoid(2u): exp is far cheaper than tanh.
    v2 = v * v
    u2 = v * (v2 * (2 * _GC * 0.044715) + 2 * _GC)
    with np.errstate(over="ignore"):
        sig = 1.0 / (1.0 + np.exp(-u2))
    return v2, sig


def gelu_value(v):
    return v * _gelu_parts(v)[1]


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = _t(x)
    v = x.data
    v2, sig = _gelu_parts(v)
    out = Tensor(v * sig)

    def back(g):
        # d/dv [v sig(u2)] = sig + v sig (1 - sig) du2/dv
        du2 = v2 * (6 * _GC * 0.044715) + 2 * _GC
        s = 1.0 - sig
        s *= sig
        s *= du2
        s *= v
        s += sig
        s *= g
        _acc(x, s)

    return _record(out, (x,), back)


def gather(table, idx) -> Tensor:
    """Rows ``table[idx]``; gradients scatter-add back into the table."""
    table = _t(table)
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise ShapeError(f"gather: integer indices required, got {idx.dtype}")
    out = Tensor(table.data[idx])

    def back(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx, g)
            _acc(table, gt)

    return _record(out, (table,), back)


def mean_sq(x, target=0.0) -> Tensor:
    """Mean of ``(x - target)**2`` as a scalar."""
    x = _t(x)
    diff = x.data - np.asarray(target, dtype=x.data.dtype)
    n = diff.size
    out = Tensor(np.asarray((diff.astype(np.float64) ** 2).sum() / n))
    return _record(out, (x,), lambda g: _acc(x, (2.0 / n) * g * diff))


def weighted_sq_error(pred, target, weights, denom: float) -> Tensor:
    """``sum(weights * (pred - target)**2) / denom``, accumulated in f64."""
    pred = _t(pred)
    target = np.asarray(target)
    weights = np.asarray(weights)
    if target.shape != pred.shape or weights.shape != pred.shape:
        raise ShapeError(f"weighted_sq_error: shapes {pred.shape}, {target.shape}, {weights.shape}")
    if denom <= 0:
        raise ValueError("weighted_sq_error: empty mask")
    diff = pred.data.astype(np.float64) - target
    out = Tensor(np.asarray((weights * diff * diff).sum() / denom))
    return _record(out, (pred,), lambda g: _acc(pred, (2.0 / denom) * g * weights * diff))


def total(x) -> Tensor:
    x = _t(x)
    out = Tensor(np.asarray(x.data.astype(np.float64).sum()))
    return _record(out, (x,), lambda g: _acc(x, np.broadcast_to(g, x.shape)))


def reshape(x, shape) -> Tensor:
    x = _t(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: _acc(x, g.reshape(x.shape)))


def transpose(x, axes) -> Tensor:
    x = _t(x)
    inv = np.argsort(axes)
    # Contiguous copies keep later matmuls on the BLAS fast path.
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    return _record(out, (x,), lambda g: _acc(x, np.ascontiguousarray(g.transpose(inv))))


def concat(xs, axis: int = 0) -> Tensor:
    xs = [_t(x) for x in xs]
    out = Tensor(np.concatenate([x.data for x in xs], axis=axis))
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, cuts, axis=axis)):
            _acc(x, part)

    return _record(out, xs, back)


def index_rows(x, idx, axis: int = -2) -> Tensor:
    """Select positions along ``axis``; used to read outputs at scored tokens."""
    x = _t(x)
    idx = np.asarray(idx)
    out = Tensor(np.take(x.data, idx, axis=axis))

    def back(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            ax = axis % x.ndim
            sl = [slice(None)] * x.ndim
            sl[ax] = idx
            np.add.at(gx, tuple(sl), g)
            _acc(x, gx)

    return _record(out, (x,), back)


# -- checking ------------------------------------------------------------------

def grad_check(f, params, eps: float = 1e-5, max_coords: int | None = None, seed: int = 0) -> float:
    """Largest relative gap between tape gradients and central differences.

    ``f`` builds a scalar tensor from ``params`` (a list of tensors). With
    ``max_coords`` only that many coordinates per tensor are probed.
    """
    for p in params:
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        g_ad = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for c in coords:
            old = flat[c]
            flat[c] = old + eps
            up = f().item()
            flat[c] = old - eps
            dn = f().item()
            flat[c] = old
            g_fd = (up - dn) / (2 * eps)
            worst = max(worst, abs(g_ad.reshape(-1)[c] - g_fd) / (abs(g_fd) + 1e-8))
    return worst
