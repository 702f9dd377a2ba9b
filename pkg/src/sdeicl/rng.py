"""Counter-based random streams.

Every draw is a pure function of ``(key, counter)``: the generator is the
SplitMix64 output function applied to ``key + counter * GOLDEN``. Substream
keys are derived by folding integer fields into a base seed, so a trajectory's
noise depends only on its seed material and never on which worker produced it.

Gaussian variates use the polar Box-Muller method. Each attempt consumes two
counters; rejected attempts are skipped, accepted ones yield two normals in
order.
"""

from __future__ import annotations

import numpy as np

from ._backend import kernels

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# domain-separation tags for derived keys
TAG_PARAMS = 0x5041524D
TAG_IC = 0x49434943
TAG_NOISE = 0x4E4F4953
TAG_MISC = 0x4D495343


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def mix_key(*fields: int) -> int:
    """Fold integer fields into one 64-bit stream key."""
    h = 0x6A09E667F3BCC909
    for f in fields:
        h = splitmix64(h ^ splitmix64((int(f) + GOLDEN) & MASK64))
    return h


def system_code(system_id: str) -> int:
    # stable across interpreter runs, unlike hash()
    h = 0xCBF29CE484222325
    for b in system_id.encode():
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def normals(key: int, n: int, start: int = 0) -> np.ndarray:
    """``n`` standard normals from stream ``key`` beginning at ``start``."""
    out = np.empty(n, dtype=np.float64)
    kernels.fill_normals(key & MASK64, start, out)
    return out


def uniforms(key: int, n: int, start: int = 0) -> np.ndarray:
    out = np.empty(n, dtype=np.float64)
    kernels.fill_uniforms(key & MASK64, start, out)
    return out


class RngStream:
    """Sequential view over one counter-based stream.

    Owned by a single worker; draws advance an internal counter. Gaussian and
    uniform draws come from disjoint sub-keys so interleaving them is stable.
    """

    def __init__(self, key: int):
        self.key = key & MASK64
        self._ukey = mix_key(self.key, 1)
        self._nkey = mix_key(self.key, 2)
        self._ucount = 0
        self._ncount = 0
        self._spare = None  # second normal of a pair not yet handed out

    @classmethod
    def from_fields(cls, *fields: int) -> "RngStream":
        return cls(mix_key(*fields))

    def uniform(self, n: int | None = None, low: float = 0.0, high: float = 1.0):
        m = 1 if n is None else n
        u = uniforms(self._ukey, m, self._ucount)
        self._ucount += m
        v = low + (high - low) * u
        return float(v[0]) if n is None else v

    def normal(self, n: int) -> np.ndarray:
        """Split requests return the same sequence as one bulk request."""
        head = [] if self._spare is None or n == 0 else [self._spare]
        if head:
            self._spare = None
        need = n - len(head)
        buf = np.empty(need + (need & 1), dtype=np.float64)
        self._ncount = kernels.fill_normals(self._nkey, self._ncount, buf)
        if need & 1:
            self._spare = float(buf[-1])
        return np.concatenate([head, buf[:need]])

    def integers(self, high: int, n: int | None = None):
        u = self.uniform(n)
        r = np.minimum((np.asarray(u) * high).astype(np.int64), high - 1)
        return int(r) if n is None else r

    def choice(self, population: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(population)``."""
        if size > population:
            raise ValueError(f"cannot draw {size} distinct items from {population}")
        keys = self.uniform(population)
        return np.argsort(keys, kind="stable")[:size]

    def state(self) -> dict:
        return {"key": self.key, "u": self._ucount, "n": self._ncount, "spare": self._spare}

    @classmethod
    def from_state(cls, state: dict) -> "RngStream":
        r = cls(int(state["key"]))
        r._ucount = int(state["u"])
        r._ncount = int(state["n"])
        r._spare = state.get("spare")
        return r
