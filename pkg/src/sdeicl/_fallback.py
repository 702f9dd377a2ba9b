"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or disabled with
``SDEICL_PURE_PYTHON=1``. Results agree with the compiled kernels up to
last-bit differences in ``log``.
"""

import numpy as np

NAME = "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _uniform_at(key, counters):
    z = np.uint64(key) + counters.astype(np.uint64) * _GOLDEN
    return (_mix(z) >> np.uint64(11)).astype(np.float64) * _INV53


def fill_uniforms(key, start, out):
    with np.errstate(over="ignore"):
        out[:] = _uniform_at(key, np.arange(start, start + out.shape[0], dtype=np.uint64))


def fill_normals(key, start, out):
    """Polar Box-Muller; returns the counter following the last attempt used."""
    n = out.shape[0]
    filled = 0
    counter = int(start)
    while filled < n:
        need = (n - filled + 1) // 2
        attempts = int(need * 1.3) + 16
        c = np.arange(counter, counter + 2 * attempts, dtype=np.uint64)
        with np.errstate(over="ignore"):
            u = 2.0 * _uniform_at(key, c) - 1.0
        u1, u2 = u[0::2], u[1::2]
        s = u1 * u1 + u2 * u2
        ok = (s > 0.0) & (s < 1.0)
        idx = np.flatnonzero(ok)[:need]
        f = np.sqrt(-2.0 * np.log(s[idx]) / s[idx])
        z = np.empty(2 * idx.size)
        z[0::2] = u1[idx] * f
        z[1::2] = u2[idx] * f
        take = min(z.size, n - filled)
        out[filled:filled + take] = z[:take]
        filled += take
        if idx.size == need:
            counter += 2 * (int(idx[-1]) + 1)
        else:
            counter += 2 * attempts
    return counter


def simulate_pairs(system, params, x0, keys, n_coarse, k, dt, bound, keep_fine=False):
    """Fine (step dt) and coarse (step k*dt) Euler-Maruyama paths over shared noise.

    ``params`` is ``(B, P)``, ``x0`` is ``(B, D)`` in internal coordinates and
    ``keys`` holds one noise-stream key per trajectory. Returns
    ``(fine_at_coarse_stamps, coarse, agg_noise, ok, fine_full_or_None)``.
    """
    params = np.ascontiguousarray(params, dtype=np.float64)
    B, D = x0.shape
    M = system.noise_dim
    steps = n_coarse * k
    p = system.params_from_array(params)
    sq = np.sqrt(dt)
    dW = np.empty((B, steps, M))
    for b in range(B):
        flat = dW[b].reshape(-1)
        fill_normals(int(keys[b]), 0, flat)
    dW *= sq

    fine = np.array(x0, dtype=np.float64)
    coarse = fine.copy()
    fine_st = np.empty((B, n_coarse + 1, D))
    coarse_st = np.empty((B, n_coarse + 1, D))
    agg = np.zeros((B, n_coarse, M))
    fine_st[:, 0] = fine
    coarse_st[:, 0] = coarse
    full = None
    if keep_fine:
        full = np.empty((B, steps + 1, D))
        full[:, 0] = fine
    ok = np.ones(B, dtype=bool)
    hdt = k * dt
    with np.errstate(all="ignore"):
        for n in range(n_coarse):
            acc = np.zeros((B, M))
            for i in range(k):
                m = n * k + i
                w = dW[:, m]
                t = m * dt
                G = system.diffusion_fn(p, fine, t)
                fine = fine + system.drift_fn(p, fine, t) * dt + np.einsum("bdm,bm->bd", G, w)
                acc += w
                bad = ~(np.abs(fine) <= bound).all(axis=1)
                if bad.any():
                    ok &= ~bad
                    fine[bad] = 0.0
                if keep_fine:
                    full[:, m + 1] = fine
            agg[:, n] = acc
            t = n * hdt
            G = system.diffusion_fn(p, coarse, t)
            coarse = coarse + system.drift_fn(p, coarse, t) * hdt + np.einsum("bdm,bm->bd", G, acc)
            bad = ~(np.abs(coarse) <= bound).all(axis=1)
            if bad.any():
                ok &= ~bad
                coarse[bad] = 0.0
            fine_st[:, n + 1] = fine
            coarse_st[:, n + 1] = coarse
    return fine_st, coarse_st, agg, ok, full
