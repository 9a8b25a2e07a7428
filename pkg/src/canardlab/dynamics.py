"""Network data types, right-hand sides and the heterogeneity bound.

Each oscillator carries five state variables (v, u, x, y, z): (v, u) fast,
x intermediate, (y, z) slow.  The intrinsic drift of oscillator i is

    dv/dt = h1(v, u, x, y, z; mu_i)
    du/dt = h2(...)
    dx/dt = eps_ts * f(...)
    dy/dt = eps_ts * delta * g1(...)
    dz/dt = eps_ts * delta * g2(...)

and an all-to-all diffusive term k*(vbar - v_i) enters the v-equation only.

Evaluators must broadcast: the state arguments may be scalars or equal-shape
arrays, and ``mu`` has shape (..., m) with leading dims matching the state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EvaluationError

__all__ = [
    "TimeScales", "OscillatorParams", "ModelDefinition", "NetworkConfig",
    "NetworkState", "StateBox", "HeterogeneityBound",
    "eval_intrinsic", "coupling_term", "network_rhs", "network_flow",
    "heterogeneity_bound", "make_reference_model", "make_reference_network",
    "REFERENCE_COEFFS",
]

_EPS_GUARD = 1e-12


@dataclass(frozen=True)
class TimeScales:
    """Separation parameters: eps_ts (fast to intermediate), delta (to slowest)."""

    eps_ts: float = 0.05
    delta: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.eps_ts < 1.0):
            raise ValueError(f"eps_ts must lie in (0,1), got {self.eps_ts}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if self.eps_ts * self.delta < _EPS_GUARD:
            raise ValueError(
                f"eps_ts*delta={self.eps_ts * self.delta:.3e} below guard {_EPS_GUARD}"
            )


class OscillatorParams:
    """Control parameter vector mu of one oscillator (immutable)."""

    __slots__ = ("mu",)

    def __init__(self, mu):
        arr = np.atleast_1d(np.asarray(mu, dtype=float)).copy()
        if arr.ndim != 1:
            raise ValueError("mu must be a vector")
        if not np.all(np.isfinite(arr)):
            raise ValueError("mu entries must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "mu", arr)

    def __setattr__(self, *args):
        raise AttributeError("OscillatorParams is immutable")

    def __repr__(self):
        return f"OscillatorParams(mu={self.mu.tolist()})"

    def __eq__(self, other):
        return isinstance(other, OscillatorParams) and np.array_equal(self.mu, other.mu)


@dataclass(frozen=True)
class ModelDefinition:
    """Evaluators for the five intrinsic drift functions plus optional analytics.

    ``fast_jacobian`` returns the 2x2 Jacobian of (h1, h2) with respect to
    (v, u); ``f_gradient`` the gradient of f with respect to (v, u, x).  Both
    are optional; callers fall back to central finite differences.
    """

    model_id: str
    h1: Callable
    h2: Callable
    f: Callable
    g1: Callable
    g2: Callable
    coefficients: dict = field(default_factory=dict)
    fast_jacobian: Optional[Callable] = None
    f_gradient: Optional[Callable] = None

    def evaluators(self):
        return (("h1", self.h1), ("h2", self.h2), ("f", self.f),
                ("g1", self.g1), ("g2", self.g2))


@dataclass(frozen=True)
class NetworkConfig:
    """Oscillator count and coupling strength; coupling is all-to-all a_ij=1/N."""

    n_osc: int
    k: float = 0.0

    def __post_init__(self):
        if self.n_osc < 1:
            raise ValueError("n_osc must be >= 1")
        if self.k < 0:
            raise ValueError("coupling strength k must be >= 0")

    @property
    def row_weight(self):
        return 1.0 / self.n_osc


@dataclass
class NetworkState:
    """Time plus the N x 5 state matrix; the one mutable type in the package."""

    t: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 5:
            raise ValueError(f"states must be (N,5), got {self.states.shape}")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states must be finite")

    @property
    def n_osc(self):
        return self.states.shape[0]

    @property
    def v(self):
        return self.states[:, 0]

    def copy(self):
        return NetworkState(self.t, self.states.copy())


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box in (v, u, x, y, z)."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lo)
        hi = tuple(float(b) for b in self.hi)
        if len(lo) != 5 or len(hi) != 5:
            raise ValueError("box needs 5 lower and 5 upper bounds")
        if any(b < a for a, b in zip(lo, hi)):
            raise ValueError("box upper bounds must be >= lower bounds")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def inflate(self, factor):
        lo, hi = np.array(self.lo), np.array(self.hi)
        center, half = (lo + hi) / 2, (hi - lo) / 2
        pad = half * factor + 1e-9
        return StateBox(tuple(center - half - pad), tuple(center + half + pad))

    @staticmethod
    def of_trajectory(states_2d):
        st = np.asarray(states_2d, dtype=float).reshape(-1, 5)
        return StateBox(tuple(st.min(axis=0)), tuple(st.max(axis=0)))


# ---------------------------------------------------------------------------
# Built-in reference model: a Hindmarsh-Rose-style fast subsystem with a
# stiff intermediate relaxation driven by the slow variable y.
#
#   h1 = u - a v^3 + b v^2 - x + I + mu
#   h2 = c - d v^2 - u
#   f  = s (v - v0) - kappa_x (x - q y - x0)
#   g1 = v - y + e1
#   g2 = y - z
#
# The fast critical manifold is the S-shaped cubic x = -a v^3 + (b-d) v^2 + C
# (C = c + I + mu) with fold condition 3 a v^2 + 2 (d-b) v = 0, i.e. exact
# fold coordinates v = 0 and v = 2(b-d)/(3a).  With the default s = 0 the
# slow manifold is x = q y + x0, traversed at the eps_ts*delta pace of g1.
# ---------------------------------------------------------------------------

REFERENCE_COEFFS = {
    "a": 1.0, "b": 3.0, "c": 1.0, "d": 5.0,
    "s": 0.0, "v0": -1.6, "kappa_x": 6.0, "q": 1.0, "x0": 0.0,
    "current": 3.2, "e1": 3.85, "mu0": 0.0,
}


def _mu_offset(mu):
    mu = np.asarray(mu, dtype=float)
    return mu[..., 0]


def _ref_h1(v, u, x, y, z, scales, mu, coeffs):
    a, b, cur = coeffs["a"], coeffs["b"], coeffs["current"]
    return u - a * v ** 3 + b * v ** 2 - x + cur + _mu_offset(mu)


def _ref_h2(v, u, x, y, z, scales, mu, coeffs):
    return coeffs["c"] - coeffs["d"] * v ** 2 - u


def _ref_f(v, u, x, y, z, scales, mu, coeffs):
    s, v0 = coeffs["s"], coeffs["v0"]
    kap, q, x0 = coeffs["kappa_x"], coeffs["q"], coeffs["x0"]
    return s * (v - v0) - kap * (x - q * y - x0)


def _ref_g1(v, u, x, y, z, scales, mu, coeffs):
    return v - y + coeffs["e1"]


def _ref_g2(v, u, x, y, z, scales, mu, coeffs):
    return y - z


def _ref_fast_jacobian(v, u, x, y, z, scales, mu, coeffs):
    a, b, d = coeffs["a"], coeffs["b"], coeffs["d"]
    return np.array([[-3.0 * a * v ** 2 + 2.0 * b * v, 1.0],
                     [-2.0 * d * v, -1.0]])


def _ref_f_gradient(v, u, x, y, z, scales, mu, coeffs):
    return np.array([coeffs["s"], 0.0, -coeffs["kappa_x"]])


def make_reference_model(coefficients=None) -> ModelDefinition:
    """Build the reference model, optionally overriding coefficients."""
    coeffs = dict(REFERENCE_COEFFS)
    if coefficients:
        unknown = set(coefficients) - set(coeffs)
        if unknown:
            raise ValueError(f"unknown reference coefficients: {sorted(unknown)}")
        coeffs.update({k: float(v) for k, v in coefficients.items()})
    if coeffs["a"] <= 0:
        raise ValueError("reference model requires a > 0")
    if coeffs["b"] == coeffs["d"]:
        raise ValueError("reference model requires b != d (fold collapse)")
    if coeffs["kappa_x"] == 0 and coeffs["s"] == 0:
        raise ValueError("intermediate drift is identically constant")
    return ModelDefinition(
        model_id="reference",
        h1=partial(_ref_h1, coeffs=coeffs),
        h2=partial(_ref_h2, coeffs=coeffs),
        f=partial(_ref_f, coeffs=coeffs),
        g1=partial(_ref_g1, coeffs=coeffs),
        g2=partial(_ref_g2, coeffs=coeffs),
        coefficients=coeffs,
        fast_jacobian=partial(_ref_fast_jacobian, coeffs=coeffs),
        f_gradient=partial(_ref_f_gradient, coeffs=coeffs),
    )


def make_reference_network(n_osc, heterogeneity_spread=0.0, seed=0,
                           coefficients=None, ):
    """Reference model plus mu_i drawn uniformly in [mu0-spread, mu0+spread].

    The draw uses the counter-based Philox generator so parameter lists are
    reproducible across platforms for a given seed.  spread=0 gives identical
    oscillators.
    """
    if n_osc < 1:
        raise ValueError("n_osc must be >= 1")
    if heterogeneity_spread < 0:
        raise ValueError("spread must be >= 0")
    model = make_reference_model(coefficients)
    mu0 = model.coefficients["mu0"]
    rng = np.random.Generator(np.random.Philox(int(seed)))
    if heterogeneity_spread == 0.0:
        mus = np.full(n_osc, mu0)
    else:
        mus = rng.uniform(mu0 - heterogeneity_spread, mu0 + heterogeneity_spread,
                          size=n_osc)
    params = [OscillatorParams([m]) for m in mus]
    return model, params


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def _check_finite(name, value, state):
    if not np.all(np.isfinite(value)):
        raise EvaluationError(name, np.asarray(state).tolist())


def eval_intrinsic(model: ModelDefinition, row, scales: TimeScales,
                   params: OscillatorParams) -> np.ndarray:
    """Scaled intrinsic drift (h1, h2, eps*f, eps*delta*g1, eps*delta*g2)."""
    v, u, x, y, z = (float(r) for r in row)
    out = np.empty(5)
    raw = []
    for name, fn in model.evaluators():
        val = float(fn(v, u, x, y, z, scales, params.mu))
        _check_finite(name, val, row)
        raw.append(val)
    eps, de = scales.eps_ts, scales.delta
    out[0], out[1] = raw[0], raw[1]
    out[2] = eps * raw[2]
    out[3] = eps * de * raw[3]
    out[4] = eps * de * raw[4]
    return out


def coupling_term(state: NetworkState, config: NetworkConfig) -> np.ndarray:
    """Per-oscillator diffusive term k*(vbar - v_i); sums to zero exactly."""
    v = state.v
    if v.shape[0] != config.n_osc:
        raise ValueError("state size does not match network config")
    return config.k * (v.mean() - v)


def _stack_mu(params_list):
    mus = np.stack([p.mu for p in params_list])
    if len({p.mu.shape[0] for p in params_list}) != 1:
        raise ValueError("all oscillators must share the mu dimension m")
    return mus


def network_rhs(model: ModelDefinition, state: NetworkState,
                config: NetworkConfig, scales: TimeScales,
                params_list: Sequence[OscillatorParams]) -> np.ndarray:
    """Coupled drift matrix; row i = intrinsic(i) + k*(vbar - v_i)*e1."""
    if len(params_list) != config.n_osc or state.n_osc != config.n_osc:
        raise ValueError("inconsistent dimensions")
    mus = _stack_mu(params_list)
    v, u, x, y, z = state.states.T
    out = np.empty_like(state.states)
    eps, de = scales.eps_ts, scales.delta
    for col, (name, fn) in enumerate(model.evaluators()):
        vals = np.asarray(fn(v, u, x, y, z, scales, mus), dtype=float)
        if not np.all(np.isfinite(vals)):
            bad = int(np.argmax(~np.isfinite(np.atleast_1d(vals))))
            raise EvaluationError(name, state.states[bad].tolist(),
                                  detail=f"oscillator {bad}")
        out[:, col] = vals
    out[:, 2] *= eps
    out[:, 3] *= eps * de
    out[:, 4] *= eps * de
    out[:, 0] += coupling_term(state, config)
    return out


def network_flow(model, config, scales, params_list):
    """Flat rhs(t, y) callable for the integrator; pure and thread-safe."""
    mus = _stack_mu(params_list)
    n = config.n_osc
    k = config.k
    eps, de = scales.eps_ts, scales.delta
    h1, h2, f, g1, g2 = model.h1, model.h2, model.f, model.g1, model.g2

    def rhs(t, flat):
        st = flat.reshape(n, 5)
        v, u, x, y, z = st.T
        dv = np.asarray(h1(v, u, x, y, z, scales, mus), dtype=float)
        if k != 0.0:
            dv = dv + k * (v.mean() - v)
        out = np.empty((n, 5))
        out[:, 0] = dv
        out[:, 1] = h2(v, u, x, y, z, scales, mus)
        out[:, 2] = eps * np.asarray(f(v, u, x, y, z, scales, mus))
        out[:, 3] = eps * de * np.asarray(g1(v, u, x, y, z, scales, mus))
        out[:, 4] = eps * de * np.asarray(g2(v, u, x, y, z, scales, mus))
        return out.ravel()

    return rhs


# ---------------------------------------------------------------------------
# Heterogeneity bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeterogeneityBound:
    """sup |h1_i| over a sampled box, with the grid used to measure it."""

    value: float
    grid_counts: tuple
    box: StateBox
    source: str = "grid"


def heterogeneity_bound(model: ModelDefinition, box: StateBox,
                        params_list: Sequence[OscillatorParams],
                        grid_counts=(17, 17, 17, 5, 5),
                        scales: TimeScales = TimeScales()) -> HeterogeneityBound:
    """Grid-measured sup over the box and all oscillators of |h1_i|.

    Monotone non-decreasing under grid refinement (refined linspace grids
    contain the coarse nodes) and under box enlargement.
    """
    counts = tuple(int(c) for c in grid_counts)
    if len(counts) != 5 or any(c < 2 for c in counts):
        raise ValueError("grid_counts needs 5 entries, each >= 2")
    if not isinstance(box, StateBox):
        box = StateBox(*box)  # raises on inverted (empty) bounds
    lo, hi = np.array(box.lo), np.array(box.hi)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("box must be bounded")
    axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(5)]
    grids = np.meshgrid(*axes, indexing="ij")
    flat = [g.ravel() for g in grids]
    best = 0.0
    for p in params_list:
        vals = np.abs(model.h1(flat[0], flat[1], flat[2], flat[3], flat[4],
                               scales, p.mu))
        if not np.all(np.isfinite(vals)):
            raise EvaluationError("h1", "grid scan", detail="non-finite on box")
        best = max(best, float(vals.max()))
    return HeterogeneityBound(best, counts, box)
