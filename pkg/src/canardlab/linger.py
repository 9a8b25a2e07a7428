"""Poincare sections around the slow passage and linger-time computation.

The entry section sits on the hyperplane x_i = x_c - delta_x near the canard
point, the pre-jump section on x_i = x_f - delta_x' near the jump point; both
carry (y, z) acceptance windows.  The linger time of an oscillator is the
fast-time duration of the passage between them, computed two ways: by
quadrature of 1/(eps*delta*g1~) along the slow manifold (g1~ is g1 with the
fast and intermediate variables substituted by their manifold values, z
frozen at the canard value) and empirically from trajectory crossings.
"""
from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .dynamics import ModelDefinition, OscillatorParams, TimeScales
from .errors import (CanardLabError, CrossingNotFoundError, SingularPassageError)
from .integrate import EventRecord, Trajectory, trajectory_crossings
from .manifolds import CanardPoint, FoldPoint, SlowManifoldChart

__all__ = [
    "SectionOffsets", "PoincareSection", "build_sections", "default_offsets",
    "detect_section_crossing", "linger_time_quadrature", "linger_time_empirical",
    "sync_window", "LingerReport", "QuadratureResult",
]


@dataclass(frozen=True)
class SectionOffsets:
    """Entry offsets (delta_x, delta_y, delta_z) and pre-jump offsets
    (delta_x_prime, ...), all strictly positive, in state units."""

    delta_x: float
    delta_y: float
    delta_z: float
    delta_x_prime: float
    delta_y_prime: float
    delta_z_prime: float

    def __post_init__(self):
        for name, val in asdict(self).items():
            if not (val > 0):
                raise ValueError(f"section offset {name} must be > 0, got {val}")


def default_offsets(canard: CanardPoint, jump: FoldPoint,
                    slow_chart: SlowManifoldChart) -> SectionOffsets:
    """Proportional defaults: x-offsets 2% of the canard-fold gap, y/z
    offsets 5% of the slow-chart extents."""
    gap = abs(canard.x - jump.x)
    if gap <= 0:
        raise CanardLabError("canard and jump point coincide in x; no passage gap")
    y_ext = float(slow_chart.y_axis[-1] - slow_chart.y_axis[0]) or 1.0
    z_ext = float(slow_chart.z_axis[-1] - slow_chart.z_axis[0]) or y_ext
    return SectionOffsets(0.02 * gap, 0.05 * y_ext, 0.05 * z_ext,
                          0.02 * gap, 0.05 * y_ext, 0.05 * z_ext)


@dataclass(frozen=True)
class PoincareSection:
    """Anchor hyperplane x = anchor_x with a (y, z) acceptance window."""

    kind: str                 # "entry" | "pre-jump"
    anchor_x: float
    center_y: float
    center_z: float
    half_y: float
    half_z: float
    phi_v: float
    phi_u: float
    osc_index: int = 0

    def contains(self, row):
        return (abs(row[3] - self.center_y) < self.half_y
                and abs(row[4] - self.center_z) < self.half_z)


def _anchor_phi(fast_charts, model, params, x, y, z, scales, prefer_v=None):
    """Polished (v, u) anchor at (x, y, z), preferring the sheet whose root
    lies nearest prefer_v (or the first chart that succeeds)."""
    charts = fast_charts if isinstance(fast_charts, (list, tuple)) else [fast_charts]
    best = None
    for chart in charts:
        lo, hi = chart.x_range()
        if not (lo - 1e-9 <= x <= hi + 1e-9):
            continue
        try:
            v, u = chart.eval(model, params, x, y, z, scales)
        except CanardLabError:
            continue
        key = abs(v - prefer_v) if prefer_v is not None else 0.0
        if best is None or key < best[0]:
            best = (key, v, u)
    if best is None:
        raise CanardLabError(
            f"section anchor x={x:.6g} is outside every fast-manifold chart")
    return best[1], best[2]


def build_sections(canard: CanardPoint, jump: FoldPoint, offsets: SectionOffsets,
                   fast_charts, model: ModelDefinition, params: OscillatorParams,
                   scales: TimeScales = TimeScales()):
    """Entry and pre-jump sections for one oscillator.

    The entry anchor is x_c - delta_x with phi evaluated on the attracting
    sheet through the canard point; the pre-jump anchor is x_f - delta_x'
    where only the continuation across the fold exists, so the sheet with
    root nearest the fold v-coordinate supplies the anchor values.
    """
    if canard.osc_index != jump.osc_index:
        raise ValueError("canard and jump point belong to different oscillators")
    gap = abs(canard.x - jump.x)
    if offsets.delta_x >= gap:
        raise ValueError(
            f"delta_x={offsets.delta_x:.6g} must be smaller than the canard-fold "
            f"gap {gap:.6g} (sections would overlap)")
    x_entry = canard.x - offsets.delta_x
    v_e, u_e = _anchor_phi(fast_charts, model, params, x_entry, canard.y, canard.z,
                           scales, prefer_v=canard.v)
    entry = PoincareSection("entry", x_entry, canard.y, canard.z,
                            offsets.delta_y, offsets.delta_z, v_e, u_e,
                            canard.osc_index)
    x_pre = jump.x - offsets.delta_x_prime
    v_p, u_p = _anchor_phi(fast_charts, model, params, x_pre, jump.y, jump.z,
                           scales, prefer_v=jump.v)
    prejump = PoincareSection("pre-jump", x_pre, jump.y, jump.z,
                              offsets.delta_y_prime, offsets.delta_z_prime,
                              v_p, u_p, jump.osc_index)
    return entry, prejump


def detect_section_crossing(traj: Trajectory, section: PoincareSection,
                            osc_index=None, event_tolerance=1e-9,
                            direction=0) -> List[EventRecord]:
    """Crossings of the section's anchor hyperplane that fall inside its
    (y, z) windows, ordered by time.

    The trajectory holds N stacked oscillators (5 columns each); osc_index
    defaults to the section's oscillator.
    """
    i = section.osc_index if osc_index is None else osc_index
    if traj.dim % 5 != 0 or i * 5 + 4 >= traj.dim:
        raise ValueError(f"oscillator index {i} not present in trajectory "
                         f"of dim {traj.dim}")
    col = 5 * i + 2

    def g(t, ystate):
        return ystate[col] - section.anchor_x

    hits = trajectory_crossings(traj, g, event_tolerance, direction=direction,
                                name=f"{section.kind}[{i}]")
    out = []
    for rec in hits:
        row = rec.state[5 * i:5 * i + 5]
        if section.contains(row):
            out.append(rec)
    return out


# ---------------------------------------------------------------------------
# Linger time
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureResult:
    time: float
    error_estimate: float
    y_from: float
    y_to: float
    z_frozen: float


class _BranchPsi:
    """Branch-respecting slow-manifold evaluator over y at frozen z.

    Every evaluation seeds the (v, u, x) Newton solve from the nearest
    previously solved y, continuing the branch of the trusted seed point, so
    integrand evaluations cannot hop onto another intersection branch (every
    fast sheet can carry an f = 0 branch when f ignores the fast variables).
    """

    def __init__(self, model, params, scales, z, seed_y, seed_psi, tol=1e-11):
        self.model = model
        self.mu = params.mu
        self.scales = scales
        self.z = float(z)
        self.tol = tol
        self._ys = [float(seed_y)]
        self._psis = [np.asarray(seed_psi, dtype=float)]

    def __call__(self, y):
        from .manifolds import _newton_nd  # shared damped-Newton helper

        y = float(y)
        j = bisect.bisect_left(self._ys, y)
        if j < len(self._ys) and self._ys[j] == y:
            return self._psis[j]
        cand = [i for i in (j - 1, j) if 0 <= i < len(self._ys)]
        seed = self._psis[min(cand, key=lambda i: abs(self._ys[i] - y))]
        m, mu, sc, z = self.model, self.mu, self.scales, self.z

        def res(w):
            return [m.h1(w[0], w[1], w[2], y, z, sc, mu),
                    m.h2(w[0], w[1], w[2], y, z, sc, mu),
                    m.f(w[0], w[1], w[2], y, z, sc, mu)]

        sol = _newton_nd(res, seed, self.tol)
        if sol is None:
            # fold-adjacent points are ill-conditioned; retry with looser tol
            sol = _newton_nd(res, seed, 1e-8)
            if sol is None:
                raise CanardLabError(f"slow-manifold continuation failed at y={y:.8g}")
        psi = sol[0]
        self._ys.insert(j, y)
        self._psis.insert(j, psi)
        return psi


def linger_time_quadrature(model, params, scales: TimeScales,
                           slow_chart: SlowManifoldChart, y_from, y_to, z_c,
                           rel_tol=1e-9, sign_samples=512,
                           seed_point=None) -> QuadratureResult:
    """Passage duration by adaptive quadrature of 1/(eps*delta*g1~) over y.

    g1~ evaluates g1 on the slow manifold (z frozen at z_c), with the
    manifold values continued branch-wise from ``seed_point`` (a (v, u, x)
    triple on the lingering branch; defaults to the chart solution at
    y_from).  The integral is taken with orientation from y_from to y_to; a
    sign change or zero of g1~ on the range makes the passage time undefined
    and raises SingularPassageError.  The result must come out positive.
    """
    eps_de = scales.eps_ts * scales.delta
    mu = params.mu
    z_c = float(z_c)

    if seed_point is None:
        seed_y = float(y_from)
        seed_psi = slow_chart.eval(model, params, seed_y, z_c, scales)
    else:
        sp = tuple(float(v) for v in seed_point)
        seed_psi = sp[:3]
        seed_y = sp[3] if len(sp) > 3 else float(y_from)
    psi = _BranchPsi(model, params, scales, z_c, seed_y, seed_psi)

    def g1_tilde(y):
        pv, pu, px = psi(y)
        return float(model.g1(pv, pu, px, float(y), z_c, scales, mu))

    lo, hi = (y_from, y_to) if y_from <= y_to else (y_to, y_from)
    # interior probe points: manifold evaluation exactly at the fold endpoint
    # is ill-conditioned, and quadrature nodes stay interior anyway; sweep
    # outward from the seed so the continuation never takes a long jump
    probe = lo + (hi - lo) * (0.5 + np.arange(int(sign_samples))) / int(sign_samples)
    for y in sorted(probe, key=lambda yy: abs(yy - seed_y)):
        g1_tilde(y)
    vals = np.array([g1_tilde(y) for y in probe])
    if np.any(vals == 0.0) or (vals.min() < 0.0 < vals.max()):
        j = int(np.argmin(np.abs(vals)))
        raise SingularPassageError(
            f"g1~ changes sign or vanishes on the passage range "
            f"(|g1~| minimal at y={probe[j]:.6g}: {vals[j]:.3e}); "
            "the linger-time integral is undefined")

    val, err = quad(lambda y: 1.0 / (eps_de * g1_tilde(y)), y_from, y_to,
                    epsabs=0.0, epsrel=rel_tol, limit=400)
    if not np.isfinite(val) or val <= 0:
        raise SingularPassageError(
            f"linger quadrature returned non-positive duration {val:.6g}; "
            "orientation or drift sign violates the passage assumptions")
    return QuadratureResult(float(val), float(abs(err)), float(y_from),
                            float(y_to), z_c)


def linger_time_empirical(traj: Trajectory, entry: PoincareSection,
                          prejump: PoincareSection, osc_index=None,
                          event_tolerance=1e-9) -> float:
    """Time from the first entry crossing to the next pre-jump crossing.

    Later passages (if the burster re-enters) are not folded in; callers can
    slice the trajectory to study subsequent cycles.
    """
    i = entry.osc_index if osc_index is None else osc_index
    entries = detect_section_crossing(traj, entry, i, event_tolerance)
    pres = detect_section_crossing(traj, prejump, i, event_tolerance)
    if entries:
        t0 = entries[0].t
        after = [r for r in pres if r.t > t0]
        if after:
            return float(after[0].t - t0)
    raise CrossingNotFoundError(len(entries), len(pres))


def sync_window(linger_times) -> float:
    """Minimum linger time across the network (the synchronization deadline)."""
    times = list(linger_times)
    if not times:
        raise ValueError("sync_window needs at least one linger time")
    return float(min(times))


@dataclass
class LingerReport:
    """Per-oscillator linger times and the network minimum."""

    times_quadrature: List[float]
    times_empirical: List[Optional[float]]
    t_linger_min: float
    method: str
    quadrature_errors: List[float]
    sections: List[dict]

    @staticmethod
    def from_results(quads: Sequence[QuadratureResult],
                     empiricals: Sequence[Optional[float]],
                     sections_meta: Sequence[dict], method="quadrature"):
        tq = [q.time for q in quads]
        if any(t <= 0 for t in tq):
            raise ValueError("linger times must be positive")
        return LingerReport(
            times_quadrature=tq,
            times_empirical=list(empiricals),
            t_linger_min=sync_window(tq),
            method=method,
            quadrature_errors=[q.error_estimate for q in quads],
            sections=list(sections_meta),
        )

    def to_json(self, path=None):
        payload = {
            "t_linger_min": self.t_linger_min,
            "method": self.method,
            "oscillators": [
                {
                    "index": i,
                    "t_linger_quadrature": self.times_quadrature[i],
                    "quadrature_error": self.quadrature_errors[i],
                    "t_linger_empirical": self.times_empirical[i],
                }
                for i in range(len(self.times_quadrature))
            ],
            "sections": self.sections,
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text
