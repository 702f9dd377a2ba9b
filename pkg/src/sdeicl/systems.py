"""Registry of the SDE families used for data generation and evaluation.

Drift and diffusion evaluators are vectorised: ``x`` has shape ``(..., D)``
where ``D`` is the internal state dimension, parameters are scalars or arrays
broadcastable against ``x[..., 0]``. Diffusion is always returned as a dense
``(..., D, M)`` matrix.

The fluxgate system carries three colored-noise components inside its
internal state; only the first three (magnetic) components are observed.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .rng import RngStream

TWO_PI = 2.0 * math.pi


class UnknownSystemError(KeyError):
    pass


@dataclass(frozen=True)
class MuellerShape:
    a: tuple = (-1.0, -1.0, -6.5, 0.7)
    b: tuple = (0.0, 0.0, 11.0, 0.6)
    c: tuple = (-10.0, -10.0, -6.5, 0.7)
    D: tuple = (-200.0, -100.0, -170.0, 15.0)
    X: tuple = (1.0, 0.0, -0.5, -1.0)
    Y: tuple = (0.0, 0.5, 1.5, 1.0)
    a_scale: float = 1.0
    b_scale: float = 1.0
    c_scale: float = 1.0
    D_scale: float = 1.0
    X_shift: float = 0.0
    Y_shift: float = 0.0
    beta: float = 1.0

    @classmethod
    def from_params(cls, p: dict) -> "MuellerShape":
        names = ("a_scale", "b_scale", "c_scale", "D_scale", "X_shift", "Y_shift", "beta")
        return cls(**{n: float(p[n]) for n in names})


_MB = MuellerShape()
MUELLER_A = np.array(_MB.a)
MUELLER_B = np.array(_MB.b)
MUELLER_C = np.array(_MB.c)
MUELLER_D = np.array(_MB.D)
MUELLER_X = np.array(_MB.X)
MUELLER_Y = np.array(_MB.Y)


def _mueller_terms(x1, x2, a_s, b_s, c_s, d_s, x_sh, y_sh):
    x1 = np.asarray(x1, dtype=float)[..., None]
    x2 = np.asarray(x2, dtype=float)[..., None]
    a = np.asarray(a_s)[..., None] * MUELLER_A
    b = np.asarray(b_s)[..., None] * MUELLER_B
    c = np.asarray(c_s)[..., None] * MUELLER_C
    d = np.asarray(d_s)[..., None] * MUELLER_D
    dx = x1 - (np.asarray(x_sh)[..., None] + MUELLER_X)
    dy = x2 - (np.asarray(y_sh)[..., None] + MUELLER_Y)
    e = d * np.exp(a * dx * dx + b * dx * dy + c * dy * dy)
    g1 = (e * (2.0 * a * dx + b * dy)).sum(-1)
    g2 = (e * (b * dx + 2.0 * c * dy)).sum(-1)
    return e.sum(-1), g1, g2


def mueller_potential(x1: float, x2: float, shape: MuellerShape = _MB):
    """Value and gradient of the (scaled, shifted) Mueller potential."""
    if not (math.isfinite(x1) and math.isfinite(x2)):
        raise ValueError(f"non-finite point ({x1}, {x2})")
    v, g1, g2 = _mueller_terms(
        x1, x2, shape.a_scale, shape.b_scale, shape.c_scale, shape.D_scale,
        shape.X_shift, shape.Y_shift,
    )
    return float(v), np.array([float(g1), float(g2)])


# -- drift / diffusion evaluators -------------------------------------------

def _diag(entries):
    """Stack per-dimension diagonal entries into ``(..., D, D)``."""
    entries = np.broadcast_arrays(*entries)
    d = len(entries)
    out = np.zeros(entries[0].shape + (d, d))
    for i, e in enumerate(entries):
        out[..., i, i] = e
    return out


def _gbm_drift(p, x, t):
    return (np.asarray(p["mu"]) * x[..., 0])[..., None]


def _gbm_diff(p, x, t):
    return (np.asarray(p["sigma"]) * x[..., 0])[..., None, None]


def _mueller_drift(p, x, t):
    _, g1, g2 = _mueller_terms(
        x[..., 0], x[..., 1], p["a_scale"], p["b_scale"], p["c_scale"],
        p["D_scale"], p["X_shift"], p["Y_shift"],
    )
    return -np.stack([g1, g2], axis=-1)


def _langevin_diff(p, x, t):
    s = np.sqrt(2.0 / np.asarray(p["beta"], dtype=float)) * np.ones(x.shape[:-1])
    return _diag([s, s])


def _periodic_drift(p, x, t):
    w = TWO_PI / np.asarray(p["omega"])
    big = np.asarray(p["Omega"])
    x1, x2 = x[..., 0], x[..., 1]
    g = 1.0 + np.sqrt(x1 * x1 + x2 * x2) * (np.cos(TWO_PI * t) - 1.0)
    return np.stack([w * (-big * x2 + x1 * g), w * (big * x1 + x2 * g)], axis=-1)


def _periodic_diff(p, x, t):
    s = np.asarray(p["sigma"]) * np.sqrt(TWO_PI / np.asarray(p["omega"]))
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([s * x1 * x2, s * x2 * x2], axis=-1)[..., None]


def _lorenz_drift(p, x, t):
    X, Y, Z = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([
        p["sigma"] * (Y - X),
        X * (p["rho"] - Z) - Y,
        X * Y - p["beta"] * Z,
    ], axis=-1)


def _lorenz_diff(p, x, t):
    ones = np.ones(x.shape[:-1])
    return _diag([p["eta1"] * ones, p["eta2"] * ones, p["eta3"] * ones])


def _ou_drift(p, x, t):
    return (np.asarray(p["theta"]) * (np.asarray(p["mu"]) - x[..., 0]))[..., None]


def _additive_1d(p, x, t):
    return (np.asarray(p["sigma"]) * np.ones(x.shape[:-1]))[..., None, None]


def _iou_drift(p, x, t):
    a, w, th = (np.asarray(p[n]) for n in ("a", "omega", "theta"))
    return (a * np.cos(w * t) - th * x[..., 0])[..., None]


def _dw_drift(p, x, t):
    x1, x2 = x[..., 0], x[..., 1]
    return -np.stack([4.0 * x1 * (x1 * x1 - 1.0), 2.0 * np.asarray(p["alpha"]) * x2], axis=-1)


def _cdw_drift(p, x, t):
    x1, x2 = x[..., 0], x[..., 1]
    al = np.asarray(p["alpha"])
    return -np.stack([4.0 * x1 * (x1 * x1 - 1.0) + al * x2, x2 + al * x1], axis=-1)


def _duffing_drift(p, x, t):
    X, V = x[..., 0], x[..., 1]
    d, al, be, ga, w = (np.asarray(p[n]) for n in ("delta", "alpha", "beta", "gamma", "omega"))
    return np.stack([V * np.ones_like(X), -d * V - al * X - be * X ** 3 + ga * np.cos(w * t)], axis=-1)


def _duffing_diff(p, x, t):
    s = np.sqrt(np.asarray(p["epsilon"])) * np.ones(x.shape[:-1])
    return np.stack([np.zeros_like(s), s], axis=-1)[..., None]


def _limit_cycle_drift(p, x, t):
    T = np.asarray(p["period"])
    x1, x2 = x[..., 0], x[..., 1]
    r2 = x1 * x1 + x2 * x2
    return np.stack([T * (x1 - x2 - x1 * r2), T * (x1 + x2 - x2 * r2)], axis=-1)


def _limit_cycle_diff(p, x, t):
    s = np.asarray(p["sigma"]) * np.sqrt(np.asarray(p["period"]))
    x1, x2 = x[..., 0], x[..., 1]
    return _diag([s * x1 * x2, s * x2 * x2])


def _pp_drift(p, x, t):
    X, y1, y2 = x[..., 0], x[..., 1], x[..., 2]
    return np.stack([
        X * (p["r"] - p["a"] * X + p["s"] * y1 - p["b"] * y2),
        p["k"] * X * y2 - y1 * (p["g"] * X + p["D"] + p["v1"]),
        p["D"] * y1 - p["v2"] * y2,
    ], axis=-1)


def _pp_diff(p, x, t):
    return _diag([p["sigma1"] * x[..., 0], p["sigma2"] * x[..., 1], p["sigma3"] * x[..., 2]])


def _ppv_diff(p, x, t):
    X, y1, y2 = x[..., 0], x[..., 1], x[..., 2]
    out = np.zeros(x.shape[:-1] + (3, 4))
    out[..., 0, 0] = p["sigma1"] * X
    out[..., 1, 1] = p["sigma2"] * y1
    out[..., 1, 2] = p["sigma4"] * X * y2
    out[..., 2, 3] = p["sigma3"] * y2
    return out


def _flux_drift(p, x, t):
    c, lam, om = (np.asarray(p[n]) for n in ("c", "lam", "omega"))
    xs = [x[..., i] for i in range(3)]
    ys = [x[..., 3 + i] for i in range(3)]
    dx = [-xs[j] + np.tanh(c * (xs[j] + lam * xs[(j + 1) % 3] + ys[j])) for j in range(3)]
    dy = [-om * ys[j] for j in range(3)]
    return np.stack(dx + dy, axis=-1)


def _flux_diff(p, x, t):
    s = np.asarray(p["omega"]) * np.sqrt(np.asarray(p["epsilon"])) * np.ones(x.shape[:-1])
    out = np.zeros(x.shape[:-1] + (6, 3))
    for j in range(3):
        out[..., 3 + j, j] = s
    return out


# -- registry ----------------------------------------------------------------

@dataclass(frozen=True)
class SdeSystem:
    id: str
    state_dim: int
    noise_dim: int
    param_spec: tuple
    dt_fine: float
    stride_k: int
    ic_box: tuple
    drift_fn: Callable = field(repr=False, compare=False)
    diffusion_fn: Callable = field(repr=False, compare=False)
    horizon_steps_coarse: int = 50
    internal_dim: int = 0
    autonomous: bool = True
    # analytic d(sigma)/dx for 1-D systems; None means finite differences
    diffusion_dx: Callable | None = field(default=None, repr=False, compare=False)
    # which noise channels are shown to the model (at most three)
    token_noise_channels: tuple = ()
    kernel_code: int = -1

    def __post_init__(self):
        if self.internal_dim == 0:
            object.__setattr__(self, "internal_dim", self.state_dim)
        if not self.token_noise_channels:
            object.__setattr__(self, "token_noise_channels", tuple(range(min(3, self.noise_dim))))
        if not 1 <= self.state_dim <= 3:
            raise ValueError(f"{self.id}: state_dim must be 1..3")
        if self.stride_k < 2 or self.dt_fine <= 0:
            raise ValueError(f"{self.id}: need stride_k >= 2 and dt_fine > 0")
        for name, lo, hi in self.param_spec:
            if lo > hi:
                raise ValueError(f"{self.id}: empty range for {name}")

    @property
    def param_names(self) -> tuple:
        return tuple(n for n, _, _ in self.param_spec)

    @property
    def coarse_dt(self) -> float:
        return self.dt_fine * self.stride_k

    @property
    def horizon(self) -> float:
        return self.coarse_dt * self.horizon_steps_coarse

    def param_array(self, params: dict) -> np.ndarray:
        return np.array([params[n] for n in self.param_names], dtype=float)

    def params_from_array(self, arr) -> dict:
        arr = np.asarray(arr, dtype=float)
        return {n: arr[..., i] for i, n in enumerate(self.param_names)}

    def defaults(self) -> dict:
        """Midpoint of every parameter range."""
        return {n: 0.5 * (lo + hi) for n, lo, hi in self.param_spec}

    def lift(self, x) -> np.ndarray:
        """Observed state -> internal state (hidden components start at zero)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] == self.internal_dim:
            return x
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"{self.id}: state has length {x.shape[-1]}, expected {self.state_dim}")
        pad = np.zeros(x.shape[:-1] + (self.internal_dim - self.state_dim,))
        return np.concatenate([x, pad], axis=-1)

    def observe(self, x) -> np.ndarray:
        return np.asarray(x)[..., : self.state_dim]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "state_dim": self.state_dim,
            "noise_dim": self.noise_dim,
            "dt_fine": self.dt_fine,
            "stride_k": self.stride_k,
            "horizon_steps_coarse": self.horizon_steps_coarse,
            "param_spec": [list(p) for p in self.param_spec],
            "ic_box": [list(b) for b in self.ic_box],
        }


def _gbm_diff_dx(p, x, t):
    return np.asarray(p["sigma"]) * np.ones_like(x[..., 0])


def _zero_dx(p, x, t):
    return np.zeros_like(x[..., 0])


PI = math.pi
_SYSTEMS = [
    SdeSystem(
        "gbm", 1, 1, (("mu", 0.01, 0.15), ("sigma", 0.01, 0.2)),
        dt_fine=5e-4, stride_k=100, ic_box=((50.0, 100.0),),
        drift_fn=_gbm_drift, diffusion_fn=_gbm_diff,
        diffusion_dx=_gbm_diff_dx,
        kernel_code=0,
    ),
    SdeSystem(
        "mueller", 2, 2,
        (("a_scale", 0.8, 1.2), ("b_scale", 0.8, 1.2), ("c_scale", 0.8, 1.2),
         ("D_scale", 0.7, 1.3), ("X_shift", -0.1, 0.1), ("Y_shift", -0.1, 0.1),
         ("beta", 0.05, 2.0)),
        dt_fine=1e-5, stride_k=100, ic_box=((-0.5, 0.5), (-0.5, 1.5)),
        drift_fn=_mueller_drift, diffusion_fn=_langevin_diff, kernel_code=1,
    ),
    SdeSystem(
        "periodic_oscillator", 2, 1,
        (("omega", PI, 2 * PI), ("Omega", 0.1, PI), ("sigma", 0.01, 1.0)),
        dt_fine=1e-5, stride_k=10, ic_box=((-1.0, 1.0), (-1.0, 1.0)),
        drift_fn=_periodic_drift, diffusion_fn=_periodic_diff, autonomous=False,
        kernel_code=2,
    ),
    SdeSystem(
        "stochastic_lorenz", 3, 3,
        (("sigma", 5.0, 15.0), ("rho", 20.0, 40.0), ("beta", 1.0, 3.0),
         ("eta1", 0.1, 2.0), ("eta2", 0.1, 2.0), ("eta3", 0.1, 2.0)),
        dt_fine=1e-4, stride_k=100, ic_box=((-1.0, 1.0),) * 3,
        drift_fn=_lorenz_drift, diffusion_fn=_lorenz_diff, kernel_code=3,
    ),
    SdeSystem(
        "ou", 1, 1, (("theta", 0.1, 0.5), ("mu", 1.0, 5.0), ("sigma", 0.1, 0.5)),
        dt_fine=1e-3, stride_k=100, ic_box=((50.0, 100.0),),
        drift_fn=_ou_drift, diffusion_fn=_additive_1d,
        diffusion_dx=_zero_dx, kernel_code=4,
    ),
    SdeSystem(
        "inhomogeneous_ou", 1, 1,
        (("a", 0.5, 2.0), ("omega", PI, 4 * PI), ("theta", 0.5, 2.0), ("sigma", 0.1, 0.5)),
        dt_fine=1e-3, stride_k=100, ic_box=((50.0, 100.0),),
        drift_fn=_iou_drift, diffusion_fn=_additive_1d, autonomous=False,
        diffusion_dx=_zero_dx, kernel_code=5,
    ),
    SdeSystem(
        "double_well", 2, 2, (("alpha", 0.1, 0.5), ("beta", 5.0, 20.0)),
        dt_fine=1e-5, stride_k=100, ic_box=((-1.0, 1.0), (-1.0, 1.0)),
        drift_fn=_dw_drift, diffusion_fn=_langevin_diff, kernel_code=6,
    ),
    SdeSystem(
        "coupled_double_well", 2, 2, (("alpha", 0.1, 0.5), ("beta", 5.0, 20.0)),
        dt_fine=1e-5, stride_k=100, ic_box=((-1.0, 1.0), (-1.0, 1.0)),
        drift_fn=_cdw_drift, diffusion_fn=_langevin_diff, kernel_code=7,
    ),
    SdeSystem(
        "duffing", 2, 1,
        (("delta", 0.05, 0.5), ("alpha", -1.0, 1.0), ("beta", 1.0, 10.0),
         ("gamma", 0.1, 1.0), ("omega", 0.5, 6.0), ("epsilon", 0.01, 0.1)),
        dt_fine=1e-4, stride_k=100, ic_box=((-1.0, 1.0), (-1.0, 1.0)),
        drift_fn=_duffing_drift, diffusion_fn=_duffing_diff, autonomous=False,
        kernel_code=8,
    ),
    SdeSystem(
        "perturbed_limit_cycle", 2, 2, (("period", 0.01, 2 * PI), ("sigma", 0.01, 1.0)),
        dt_fine=1e-5, stride_k=100, ic_box=((-1.0, 1.0), (-1.0, 1.0)),
        drift_fn=_limit_cycle_drift, diffusion_fn=_limit_cycle_diff, kernel_code=9,
    ),
    SdeSystem(
        "predator_prey", 3, 3,
        (("r", 0.4, 0.4), ("a", 0.02, 0.02), ("s", 0.35, 0.35), ("b", 0.4, 0.4),
         ("k", 0.4, 0.4), ("g", 0.5, 0.5), ("D", 0.4, 0.4), ("v1", 0.25, 0.25),
         ("v2", 0.25, 0.25), ("sigma1", 0.15, 0.15), ("sigma2", 0.12, 0.12),
         ("sigma3", 0.1, 0.1)),
        dt_fine=1e-3, stride_k=100, ic_box=((0.8, 1.2), (0.48, 0.72), (0.32, 0.48)),
        drift_fn=_pp_drift, diffusion_fn=_pp_diff, kernel_code=10,
    ),
    SdeSystem(
        "predator_prey_variant", 3, 4,
        (("r", 0.4, 0.4), ("a", 0.02, 0.02), ("s", 0.35, 0.35), ("b", 0.4, 0.4),
         ("k", 0.4, 0.4), ("g", 0.5, 0.5), ("D", 0.4, 0.4), ("v1", 0.25, 0.25),
         ("v2", 0.25, 0.25), ("sigma1", 0.15, 0.15), ("sigma2", 0.12, 0.12),
         ("sigma3", 0.1, 0.1), ("sigma4", 0.005, 0.005)),
        dt_fine=1e-3, stride_k=100, ic_box=((0.8, 1.2), (0.48, 0.72), (0.32, 0.48)),
        drift_fn=_pp_drift, diffusion_fn=_ppv_diff, kernel_code=11,
        # channel 2 only enters through the tiny sigma4 cross term
        token_noise_channels=(0, 1, 3),
    ),
    SdeSystem(
        "fluxgate", 3, 3,
        (("c", 3.0, 5.0), ("lam", 0.1, 1.0), ("epsilon", 0.1, 0.5), ("omega", 3.0, 3.0)),
        dt_fine=1e-3, stride_k=100, ic_box=((-1.0, 1.0),) * 3,
        drift_fn=_flux_drift, diffusion_fn=_flux_diff, internal_dim=6, kernel_code=12,
    ),
]

REGISTRY: dict[str, SdeSystem] = {s.id: s for s in _SYSTEMS}
PRETRAIN_SYSTEMS = ("gbm", "mueller", "periodic_oscillator", "stochastic_lorenz")

# parameter presets for regime studies (point values)
PRESETS = {
    "duffing": {
        "chaotic": dict(delta=1.0, alpha=-1.0, beta=1.0, gamma=1.0, omega=1.4, epsilon=0.2),
        "overdamped": dict(delta=1.5, alpha=-1.0, beta=1.0, gamma=0.1, omega=1.0, epsilon=0.1),
        "resonance": dict(delta=0.5, alpha=-1.0, beta=1.0, gamma=0.5, omega=1.0, epsilon=0.05),
    },
    "predator_prey": {
        "coexistence": dict(s=0.0, g=0.4),
        "large_cycles": dict(s=0.2, g=0.4),
        "prey_dominated": dict(s=0.2, g=0.6),
    },
    "stochastic_lorenz": {
        **{f"rho_{r:g}": dict(sigma=10.0, rho=r, beta=8.0 / 3.0, eta1=0.8, eta2=0.8, eta3=0.8)
           for r in (0.5, 1.0, 13.926, 20.0, 24.06, 24.5, 24.76, 100.0)},
        "rho_28_eta_2": dict(sigma=10.0, rho=28.0, beta=8.0 / 3.0, eta1=2.0, eta2=2.0, eta3=2.0),
    },
}


def get_system(system_id: str) -> SdeSystem:
    try:
        return REGISTRY[system_id]
    except KeyError:
        raise UnknownSystemError(
            f"unknown system {system_id!r}; known: {', '.join(REGISTRY)}"
        ) from None


def with_jitter(system: SdeSystem, fraction: float) -> SdeSystem:
    """Widen every point-valued parameter to ``value * (1 +- fraction)``."""
    spec = []
    for name, lo, hi in system.param_spec:
        if lo == hi and lo != 0.0:
            a, b = sorted((lo * (1 - fraction), lo * (1 + fraction)))
            spec.append((name, a, b))
        else:
            spec.append((name, lo, hi))
    return dataclasses.replace(system, param_spec=tuple(spec))


def _resolve(system) -> SdeSystem:
    return get_system(system) if isinstance(system, str) else system


def _check_inputs(system: SdeSystem, params: dict, x) -> np.ndarray:
    missing = [n for n in system.param_names if n not in params]
    if missing:
        raise ValueError(f"{system.id}: missing parameters {missing}")
    x = system.lift(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{system.id}: non-finite state {x}")
    for n in system.param_names:
        if not np.all(np.isfinite(params[n])):
            raise ValueError(f"{system.id}: non-finite parameter {n}={params[n]}")
    return x


def drift(system, params: dict, x, t: float = 0.0) -> np.ndarray:
    system = _resolve(system)
    full = _check_inputs(system, params, x)
    out = system.drift_fn(params, full, t)
    return out if np.shape(x)[-1] == system.internal_dim else system.observe(out)


def diffusion(system, params: dict, x, t: float = 0.0) -> np.ndarray:
    system = _resolve(system)
    full = _check_inputs(system, params, x)
    out = system.diffusion_fn(params, full, t)
    if np.shape(x)[-1] == system.internal_dim:
        return out
    return out[..., : system.state_dim, :]


def sample_params(system, rng: RngStream) -> dict:
    system = _resolve(system)
    u = rng.uniform(len(system.param_spec))
    return {n: lo + (hi - lo) * ui for (n, lo, hi), ui in zip(system.param_spec, u)}


def sample_initial(system, rng: RngStream) -> np.ndarray:
    system = _resolve(system)
    u = rng.uniform(len(system.ic_box))
    return np.array([lo + (hi - lo) * ui for (lo, hi), ui in zip(system.ic_box, u)])


def dump_registry(systems=None) -> str:
    systems = list(REGISTRY.values()) if systems is None else systems
    return json.dumps([s.to_json() for s in systems], indent=2)


def load_registry(text: str) -> dict[str, SdeSystem]:
    """Rebuild systems from a JSON dump; numeric settings override the defaults."""
    out = {}
    for entry in json.loads(text):
        base = get_system(entry["id"])
        if entry["state_dim"] != base.state_dim or entry["noise_dim"] != base.noise_dim:
            raise ValueError(f"{entry['id']}: dimensions do not match the registered system")
        out[entry["id"]] = dataclasses.replace(
            base,
            dt_fine=float(entry["dt_fine"]),
            stride_k=int(entry["stride_k"]),
            horizon_steps_coarse=int(entry["horizon_steps_coarse"]),
            param_spec=tuple((n, float(lo), float(hi)) for n, lo, hi in entry["param_spec"]),
            ic_box=tuple((float(lo), float(hi)) for lo, hi in entry["ic_box"]),
        )
    return out
