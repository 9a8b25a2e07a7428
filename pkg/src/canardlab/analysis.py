"""Synchronization error, coupling threshold, and bound verification.

The synchronization error is the population variance V_v of the fast
v-coordinates; W = sqrt(V_v).  The sufficient coupling threshold is

    k* = max( 2M/sqrt(eps_tol),  (1/(delta*t_min)) * ln(2 W0 / sqrt(eps_tol)) )

with the second term floored at zero when its logarithm is non-positive
(the transient requirement is vacuous there).  Along a run that stays on the
attracting branch, W is bounded by the exponential envelope

    W(t) <= (W0 - 2M/k) exp(-k t) + 2M/k.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .dynamics import (ModelDefinition, NetworkConfig, NetworkState,
                       OscillatorParams, TimeScales)
from .integrate import Trajectory

__all__ = [
    "variance", "sync_trace", "SyncTrace", "ThresholdInputs",
    "coupling_threshold", "gronwall_envelope", "check_variance_identity",
    "IdentityReport", "VerificationReport", "verify_theorem", "branch_membership",
]


def variance(state: NetworkState):
    """Population variance of the v-column and its mean: (V_v, vbar)."""
    v = state.v
    vbar = float(v.mean())
    return float(np.mean((v - vbar) ** 2)), vbar


@dataclass
class SyncTrace:
    """Time series of the synchronization error along a trajectory."""

    times: np.ndarray
    v_var: np.ndarray
    w: np.ndarray
    vbar: np.ndarray
    envelope: Optional[np.ndarray] = None
    residual: Optional[np.ndarray] = None
    cs_slack: Optional[np.ndarray] = None

    def to_csv(self, path):
        cols = ["t", "V_v", "W", "vbar"]
        data = [self.times, self.v_var, self.w, self.vbar]
        for name, arr in (("envelope", self.envelope), ("residual", self.residual),
                          ("cs_slack", self.cs_slack)):
            if arr is not None:
                cols.append(name)
                data.append(arr)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for row in zip(*data):
                fh.write(",".join("%.17g" % v for v in row) + "\n")


def _vcols(ys):
    return ys[:, 0::5]


def sync_trace(traj: Trajectory) -> SyncTrace:
    """Per-sample V_v, W and vbar for a stacked network trajectory."""
    if traj.dim % 5 != 0:
        raise ValueError("trajectory does not hold stacked 5-variable oscillators")
    v = _vcols(traj.ys)
    vbar = v.mean(axis=1)
    vv = ((v - vbar[:, None]) ** 2).mean(axis=1)
    return SyncTrace(traj.ts.copy(), vv, np.sqrt(vv), vbar)


@dataclass(frozen=True)
class ThresholdInputs:
    """Inputs of the sufficient-coupling condition.

    ``t_branch`` is the horizon T over which branch membership is validated;
    assumption (iv) requires t_min <= T/delta, i.e. T >= delta*t_min (taken
    non-strict; the report carries a strictness flag).
    """

    het_bound: float            # M
    eps_tol: float              # synchronization tolerance (variance units)
    delta: float
    t_min: float                # synchronization window (fast time)
    w0: float                   # bound on W(0)
    t_branch: Optional[float] = None

    def __post_init__(self):
        if self.het_bound < 0:
            raise ValueError("M must be >= 0")
        if self.eps_tol <= 0:
            raise ValueError("eps_tol must be > 0")
        if not (0 < self.delta <= 1):
            raise ValueError("delta must lie in (0,1]")
        if self.t_min <= 0:
            raise ValueError("t_min must be > 0")
        if self.w0 < 0:
            raise ValueError("W0 must be >= 0")

    @property
    def horizon(self):
        return self.delta * self.t_min if self.t_branch is None else self.t_branch


def coupling_threshold(inputs: ThresholdInputs) -> float:
    """Sufficient coupling strength k* for V_v(t_min) < eps_tol."""
    sq = np.sqrt(inputs.eps_tol)
    steady = 2.0 * inputs.het_bound / sq
    if inputs.w0 == 0.0:
        transient = 0.0
    else:
        transient = np.log(2.0 * inputs.w0 / sq) / (inputs.delta * inputs.t_min)
    return float(max(steady, max(0.0, transient)))


def gronwall_envelope(w0, het_bound, k, times) -> np.ndarray:
    """Envelope (W0 - 2M/k) e^{-k t} + 2M/k at the given times; needs k > 0."""
    if k <= 0:
        raise ValueError("envelope requires k > 0")
    times = np.asarray(times, dtype=float)
    floor = 2.0 * het_bound / k
    return (w0 - floor) * np.exp(-k * times) + floor


# ---------------------------------------------------------------------------
# Variance identity along a trajectory
# ---------------------------------------------------------------------------

@dataclass
class IdentityReport:
    times: np.ndarray
    residual: np.ndarray
    max_residual: float
    cs_slack: np.ndarray
    min_cs_slack: float
    meanfield_residual: np.ndarray
    max_meanfield_residual: float


def _h1_matrix(model, ys, scales, mus):
    """h1_i evaluated at every sample (rows) and oscillator (cols)."""
    n = ys.shape[1] // 5
    st = ys.reshape(ys.shape[0], n, 5)
    v, u, x, y, z = (st[:, :, j] for j in range(5))
    return np.asarray(model.h1(v, u, x, y, z, scales, mus), dtype=float)


def check_variance_identity(traj_or_samples, model: ModelDefinition,
                            config: NetworkConfig, scales: TimeScales,
                            params_list: Sequence[OscillatorParams],
                            het_bound=None, dt=None) -> IdentityReport:
    """Residual of dV_v/dt = -2k V_v + (2/N) sum (v_i - vbar)(h1_i - h1bar).

    The left side uses centered finite differences on V_v(t); the right side
    is evaluated exactly at the samples.  Also returns the Cauchy-Schwarz
    slack 4M sqrt(V_v) - |heterogeneity term| (must be >= -numeric slack when
    M genuinely bounds |h1_i|) and the mean-field residual |dvbar/dt - h1bar|.
    """
    if isinstance(traj_or_samples, Trajectory):
        if dt is not None:
            ts, ys = traj_or_samples.sample(dt=dt)
        else:
            ts, ys = traj_or_samples.ts, traj_or_samples.ys
    else:
        ts, ys = traj_or_samples
    ts = np.asarray(ts, dtype=float)
    if ts.size < 3:
        raise ValueError("need at least 3 samples for centered differences")
    n = config.n_osc
    v = _vcols(ys)
    vbar = v.mean(axis=1)
    vv = ((v - vbar[:, None]) ** 2).mean(axis=1)

    mus = np.stack([p.mu for p in params_list])
    h1 = _h1_matrix(model, ys, scales, mus)
    h1bar = h1.mean(axis=1)
    het_term = 2.0 / n * ((v - vbar[:, None]) * (h1 - h1bar[:, None])).sum(axis=1)
    rhs = -2.0 * config.k * vv + het_term

    # centered differences on a possibly nonuniform grid
    t0, t1, t2 = ts[:-2], ts[1:-1], ts[2:]
    f0, f1, f2 = vv[:-2], vv[1:-1], vv[2:]
    dl, dr = t1 - t0, t2 - t1
    dvv = (f2 * dl ** 2 - f0 * dr ** 2 + f1 * (dr ** 2 - dl ** 2)) / (dl * dr * (dl + dr))
    residual = np.abs(dvv - rhs[1:-1])

    dvbar = (vbar[2:] * dl ** 2 - vbar[:-2] * dr ** 2
             + vbar[1:-1] * (dr ** 2 - dl ** 2)) / (dl * dr * (dl + dr))
    mf_res = np.abs(dvbar - h1bar[1:-1])

    if het_bound is None:
        cs = np.full_like(vv, np.nan)
        min_cs = np.nan
    else:
        cs = 4.0 * het_bound * np.sqrt(vv) - np.abs(het_term)
        min_cs = float(np.min(cs))
    return IdentityReport(
        times=ts[1:-1], residual=residual, max_residual=float(residual.max()),
        cs_slack=cs, min_cs_slack=min_cs,
        meanfield_residual=mf_res, max_meanfield_residual=float(mf_res.max()),
    )


# ---------------------------------------------------------------------------
# Theorem verification
# ---------------------------------------------------------------------------

def branch_membership(charts, state_row, v_tol=0.3):
    """True when the state sits near an attracting-labeled chart node.

    Nearest node over the supplied sheets in (v,u,x,y,z); membership needs
    the label attracting and the v-offset from the node below v_tol.
    """
    best = None
    for chart in charts:
        node, d = chart.nearest_node(state_row)
        if node is None:
            continue
        if best is None or d < best[0]:
            best = (d, chart.labels[node], chart.node_state(*node))
    if best is None:
        return False
    _, label, node_state = best
    return bool(label == 1 and abs(state_row[0] - node_state[0]) <= v_tol)


@dataclass
class VerificationReport:
    """Outcome of the sufficient-condition check on one simulated run."""

    k_used: float
    k_star: float
    eps_tol: float
    t_min: float
    proof_time: float                  # delta * t_min
    v_var_at_proof_time: float
    v_var_at_t_min: float
    w0: float
    het_bound: float
    het_bound_source: str
    envelope_max_violation: float
    envelope_checked: bool
    transient_vacuous: bool
    assumption_iv_ok: bool
    assumption_iv_first_violation: Optional[float]
    branch_horizon: float
    strict_horizon_inequality: bool
    invalid: bool
    passes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return (not self.invalid) and all(self.passes.values())

    def to_json(self, path=None):
        payload = asdict(self)
        payload["passed"] = self.passed
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def verify_theorem(traj: Trajectory, model: ModelDefinition, config: NetworkConfig,
                   scales: TimeScales, params_list, inputs: ThresholdInputs,
                   charts_per_osc=None, envelope_slack=None,
                   branch_v_tol=0.3) -> VerificationReport:
    """Check the sufficient-condition conclusion along a simulated run.

    Evaluates V_v at the proof's evaluation point delta*t_min and at the
    stated point t_min (the pass criterion defaults to the latter, with the
    proof point recorded alongside); confirms branch membership of every
    oscillator over [0, T]; checks W(t) against the exponential envelope
    over the validated horizon.  A branch violation before delta*t_min marks
    the report invalid rather than failed.
    """
    n = config.n_osc
    k = config.k
    if traj.t1 + 1e-9 < inputs.t_min:
        raise ValueError(f"trajectory ends at {traj.t1:.6g} before t_min="
                         f"{inputs.t_min:.6g}")
    trace = sync_trace(traj)
    w0_measured = trace.w[0]
    w0 = max(inputs.w0, w0_measured)

    def vv_at(t):
        v = traj.interpolate(t)[0::5]
        return float(np.mean((v - v.mean()) ** 2))

    t_proof = inputs.delta * inputs.t_min
    vv_proof = vv_at(t_proof)
    vv_tmin = vv_at(inputs.t_min)

    horizon = min(inputs.horizon, traj.t1)
    strict_ok = inputs.t_min <= horizon / inputs.delta + 1e-12
    strictly = inputs.t_min < horizon / inputs.delta - 1e-12

    # assumption (iv): every oscillator near its attracting sheet on [0, T]
    iv_ok, first_bad = True, None
    if charts_per_osc is not None:
        mask = traj.ts <= horizon + 1e-12
        check_ts = traj.ts[mask]
        for j, t in enumerate(check_ts):
            st = traj.ys[mask][j].reshape(n, 5)
            for i in range(n):
                if not branch_membership(charts_per_osc[i], st[i], branch_v_tol):
                    iv_ok, first_bad = False, float(t)
                    break
            if not iv_ok:
                break
    invalid = (not iv_ok) and (first_bad is not None and first_bad < t_proof)

    env_checked = k > 0
    env_max_violation = 0.0
    transient_vacuous = w0 <= (2.0 * inputs.het_bound / k if k > 0 else np.inf)
    if env_checked:
        mask = trace.times <= horizon + 1e-12
        env = gronwall_envelope(w0, inputs.het_bound, k, trace.times[mask])
        viol = trace.w[mask] - env
        env_max_violation = float(viol.max()) if viol.size else 0.0
    slack = envelope_slack if envelope_slack is not None else 1e-6 * (1.0 + w0)

    k_star = coupling_threshold(inputs)
    passes = {
        "v_var_below_tol_at_t_min": vv_tmin < inputs.eps_tol,
        "v_var_below_tol_at_proof_time": vv_proof < inputs.eps_tol,
        "envelope_respected": (not env_checked) or env_max_violation <= slack,
        "assumption_iv": iv_ok,
    }
    return VerificationReport(
        k_used=k, k_star=k_star, eps_tol=inputs.eps_tol, t_min=inputs.t_min,
        proof_time=t_proof, v_var_at_proof_time=vv_proof, v_var_at_t_min=vv_tmin,
        w0=w0, het_bound=inputs.het_bound, het_bound_source="caller",
        envelope_max_violation=env_max_violation, envelope_checked=env_checked,
        transient_vacuous=transient_vacuous, assumption_iv_ok=iv_ok,
        assumption_iv_first_violation=first_bad, branch_horizon=horizon,
        strict_horizon_inequality=strictly, invalid=invalid, passes=passes,
    )
