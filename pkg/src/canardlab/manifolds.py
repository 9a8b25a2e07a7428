"""Critical-manifold charts, fold curves, canard and jump points.

The fast critical manifold of one oscillator is the zero set of (h1, h2) for
frozen (x, y, z); it is computed sheet by sheet on a grid, each node carrying
the root (phi_v, phi_u) and a branch label from the fast-subsystem Jacobian
(attracting iff all eigenvalue real parts are negative).  The slow critical
manifold adds f = 0 and is parameterized over (y, z).  Fold points satisfy
det(D_(v,u)h) = 0 on the fast manifold; the jump point adds f = 0 to pin the
slow coordinate at which the slow manifold meets the fold.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .dynamics import ModelDefinition, OscillatorParams, TimeScales
from .errors import AssumptionViolation, CanardLabError, CanardNotFoundError

__all__ = [
    "FastManifoldChart", "SlowManifoldChart", "FoldPoint", "CanardPoint",
    "solve_fast_manifold", "find_fold_curve", "solve_slow_manifold",
    "find_canard_point", "find_jump_point", "fast_jacobian", "fast_eigenvalues",
    "ROOT_TOL",
]

ROOT_TOL = 1e-10
_NEWTON_MAX_ITER = 50


def _fd_step(val):
    return 1e-6 * (1.0 + abs(val))


def fast_jacobian(model, v, u, x, y, z, scales, mu):
    """2x2 Jacobian of (h1,h2) wrt (v,u); analytic if the model provides it."""
    if model.fast_jacobian is not None:
        return np.asarray(model.fast_jacobian(v, u, x, y, z, scales, mu), dtype=float)
    J = np.empty((2, 2))
    for j, (var, val) in enumerate((("v", v), ("u", u))):
        h = _fd_step(val)
        args_p = [v, u, x, y, z]
        args_m = [v, u, x, y, z]
        args_p[j] += h
        args_m[j] -= h
        for i, fn in enumerate((model.h1, model.h2)):
            J[i, j] = (fn(*args_p, scales, mu) - fn(*args_m, scales, mu)) / (2 * h)
    return J


def fast_eigenvalues(model, v, u, x, y, z, scales, mu):
    return np.linalg.eigvals(fast_jacobian(model, v, u, x, y, z, scales, mu))


def _is_attracting(J):
    # 2x2: all real parts negative iff det > 0 and trace < 0
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return det > 0.0 and (J[0, 0] + J[1, 1]) < 0.0


def _f_gradient(model, v, u, x, y, z, scales, mu):
    """Gradient of f wrt (v, u, x)."""
    if model.f_gradient is not None:
        return np.asarray(model.f_gradient(v, u, x, y, z, scales, mu), dtype=float)
    g = np.empty(3)
    for j, val in enumerate((v, u, x)):
        h = _fd_step(val)
        args_p = [v, u, x, y, z]
        args_m = [v, u, x, y, z]
        args_p[j] += h
        args_m[j] -= h
        g[j] = (model.f(*args_p, scales, mu) - model.f(*args_m, scales, mu)) / (2 * h)
    return g


def _newton2(model, v0, u0, x, y, z, scales, mu, tol=ROOT_TOL):
    """Damped Newton for (h1,h2)=0 in (v,u); returns (v,u,residual) or None.

    Scalar arithmetic throughout: this is the innermost loop of chart
    construction.
    """
    h1, h2 = model.h1, model.h2
    v, u = float(v0), float(u0)
    r0 = float(h1(v, u, x, y, z, scales, mu))
    r1 = float(h2(v, u, x, y, z, scales, mu))
    rn = max(abs(r0), abs(r1))
    for _ in range(_NEWTON_MAX_ITER):
        if rn <= tol:
            return v, u, rn
        J = fast_jacobian(model, v, u, x, y, z, scales, mu)
        a, b = float(J[0, 0]), float(J[0, 1])
        c, d = float(J[1, 0]), float(J[1, 1])
        det = a * d - b * c
        if det == 0.0 or not np.isfinite(det):
            return None
        sv = (d * r0 - b * r1) / det
        su = (-c * r0 + a * r1) / det
        lam = 1.0
        while lam >= 1.0 / 64:
            vn, un = v - lam * sv, u - lam * su
            n0 = float(h1(vn, un, x, y, z, scales, mu))
            n1 = float(h2(vn, un, x, y, z, scales, mu))
            rn_new = max(abs(n0), abs(n1))
            if np.isfinite(rn_new) and rn_new < rn:
                v, u, r0, r1, rn = vn, un, n0, n1, rn_new
                break
            lam /= 2.0
        else:
            return None
    return (v, u, rn) if rn <= tol else None


def _newton_nd(residual_fn, x0, tol=ROOT_TOL, max_iter=_NEWTON_MAX_ITER):
    """Damped Newton with finite-difference Jacobian for small systems."""
    x = np.asarray(x0, dtype=float).copy()
    r = np.asarray(residual_fn(x), dtype=float)
    rn = float(np.max(np.abs(r)))
    n = x.size
    for _ in range(max_iter):
        if rn <= tol:
            return x, rn
        J = np.empty((n, n))
        for j in range(n):
            h = _fd_step(x[j])
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            J[:, j] = (np.asarray(residual_fn(xp)) - np.asarray(residual_fn(xm))) / (2 * h)
        try:
            step = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return None
        lam = 1.0
        while lam >= 1.0 / 64:
            xn = x - lam * step
            r_new = np.asarray(residual_fn(xn), dtype=float)
            rn_new = float(np.max(np.abs(r_new)))
            if np.isfinite(rn_new) and rn_new < rn:
                x, r, rn = xn, r_new, rn_new
                break
            lam /= 2.0
        else:
            return None
    return (x, rn) if rn <= tol else None


# ---------------------------------------------------------------------------
# Fast manifold charts
# ---------------------------------------------------------------------------

@dataclass
class FastManifoldChart:
    """One sheet of the fast critical manifold on an (x, y, z) grid.

    Missing nodes (Newton non-convergence or sheet absent) hold NaN and
    label -1; labels are 1 attracting, 0 repelling.
    """

    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray
    phi_v: np.ndarray
    phi_u: np.ndarray
    labels: np.ndarray
    residuals: np.ndarray
    sheet_id: int
    osc_index: int = 0

    @property
    def filled(self):
        return ~np.isnan(self.phi_v)

    @property
    def n_holes(self):
        return int(self.phi_v.size - self.filled.sum())

    def node_state(self, ix, iy, iz):
        return np.array([self.phi_v[ix, iy, iz], self.phi_u[ix, iy, iz],
                         self.x_axis[ix], self.y_axis[iy], self.z_axis[iz]])

    def nearest_node(self, point):
        """Index and 5D distance of the nearest filled node to a state point."""
        pv, pu, px, py, pz = point
        mask = self.filled
        if not mask.any():
            return None, np.inf
        ixs, iys, izs = np.nonzero(mask)
        d2 = ((self.phi_v[ixs, iys, izs] - pv) ** 2
              + (self.phi_u[ixs, iys, izs] - pu) ** 2
              + (self.x_axis[ixs] - px) ** 2
              + (self.y_axis[iys] - py) ** 2
              + (self.z_axis[izs] - pz) ** 2)
        j = int(np.argmin(d2))
        return (int(ixs[j]), int(iys[j]), int(izs[j])), float(np.sqrt(d2[j]))

    def _nearest_index(self, axis, val):
        n = len(axis)
        if n == 1:
            return 0
        step = (axis[-1] - axis[0]) / (n - 1)
        i = int(round((val - axis[0]) / step))
        return 0 if i < 0 else (n - 1 if i >= n else i)

    def seed_at(self, x, y, z):
        """Nearest-node (v, u) seed for a root solve at (x, y, z)."""
        ix = self._nearest_index(self.x_axis, x)
        iy = self._nearest_index(self.y_axis, y)
        iz = self._nearest_index(self.z_axis, z)
        phi_v, phi_u = self.phi_v, self.phi_u
        val = phi_v[ix, iy, iz]
        if val == val:                      # fast path: node itself is filled
            return float(val), float(phi_u[ix, iy, iz])
        # fall back to the closest filled node in a small index neighbourhood
        best, bd = None, np.inf
        nx, ny, nz = phi_v.shape
        for dx in (-1, 1, -2, 2):
            jx = ix + dx
            if not (0 <= jx < nx):
                continue
            for dy in (0, -1, 1):
                jy = iy + dy
                if not (0 <= jy < ny):
                    continue
                for dz in (0, -1, 1):
                    jz = iz + dz
                    if not (0 <= jz < nz) or phi_v[jx, jy, jz] != phi_v[jx, jy, jz]:
                        continue
                    d = abs(jx - ix) + abs(jy - iy) + abs(jz - iz)
                    if d < bd:
                        best, bd = (jx, jy, jz), d
        if best is None:
            return None
        return float(phi_v[best]), float(phi_u[best])

    def eval(self, model, params, x, y, z, scales=TimeScales(), tol=ROOT_TOL):
        """Polished (phi_v, phi_u) at an off-grid point of this sheet."""
        seed = self.seed_at(x, y, z)
        if seed is None:
            raise CanardLabError("chart sheet has no filled node near the request")
        sol = _newton2(model, seed[0], seed[1], x, y, z, scales, params.mu, tol)
        if sol is None:
            raise CanardLabError(
                f"fast-manifold polish failed at (x,y,z)=({x:.6g},{y:.6g},{z:.6g})")
        return sol[0], sol[1]

    def x_range(self):
        mask = self.filled.any(axis=(1, 2))
        xs = self.x_axis[mask]
        return (float(xs.min()), float(xs.max())) if xs.size else (np.nan, np.nan)


def _dedupe_roots(roots, tol=1e-7):
    roots = sorted(roots)
    out = []
    for r in roots:
        if not out or abs(r[0] - out[-1][0]) > tol * (1 + abs(r[0])) \
                or abs(r[1] - out[-1][1]) > tol * (1 + abs(r[1])):
            out.append(r)
    return out


def solve_fast_manifold(model: ModelDefinition, params: OscillatorParams,
                        region, grid, v_window=(-4.0, 3.0), n_seeds=17,
                        scales: TimeScales = TimeScales(), tol=ROOT_TOL,
                        match_tol=0.35, osc_index=0) -> List[FastManifoldChart]:
    """All sheets of {h1=0, h2=0} over an (x,y,z) grid, classified by branch.

    ``region`` is ((x_lo,x_hi),(y_lo,y_hi),(z_lo,z_hi)) and ``grid`` the node
    counts per axis.  Roots are found by seeded damped Newton (seeds: the
    neighbouring node's roots for continuation plus a ladder over v_window)
    and grouped into sheets by continuity in v.
    """
    (xlo, xhi), (ylo, yhi), (zlo, zhi) = region
    nx, ny, nz = (int(g) for g in grid)
    if nx < 2 or ny < 1 or nz < 1:
        raise ValueError("grid must have nx >= 2 and ny, nz >= 1")
    x_axis = np.linspace(xlo, xhi, nx)
    y_axis = np.linspace(ylo, yhi, ny) if ny > 1 else np.array([0.5 * (ylo + yhi)])
    z_axis = np.linspace(zlo, zhi, nz) if nz > 1 else np.array([0.5 * (zlo + zhi)])
    ladder = np.linspace(v_window[0], v_window[1], int(n_seeds))
    mu = params.mu

    def u_seed(v, x, y, z):
        # 1D Newton on h2 in u; many models have h2 affine in u
        u = 0.0
        for _ in range(25):
            r = model.h2(v, u, x, y, z, scales, mu)
            if abs(r) < 1e-12:
                return u
            h = _fd_step(u)
            d = (model.h2(v, u + h, x, y, z, scales, mu)
                 - model.h2(v, u - h, x, y, z, scales, mu)) / (2 * h)
            if d == 0 or not np.isfinite(d):
                return u
            u -= r / d
        return u

    # node_roots[(ix,iy,iz)] = list of (v, u, residual, sheet_id)
    node_roots = {}
    sheet_counter = 0
    any_root = False

    for iz in range(len(z_axis)):
        for iy in range(len(y_axis)):
            for ix in range(nx):
                x, y, z = x_axis[ix], y_axis[iy], z_axis[iz]
                seeds = []
                # union of already-visited neighbours, nearest axis first
                pred = []
                for key in ((ix - 1, iy, iz), (ix, iy - 1, iz), (ix, iy, iz - 1)):
                    if min(key) >= 0:
                        pred.extend(node_roots.get(key, ()))
                if pred:
                    seeds.extend((r[0], r[1]) for r in pred)
                seeds.extend((v, u_seed(v, x, y, z)) for v in ladder)
                found = []
                for sv, su in seeds:
                    sol = _newton2(model, sv, su, x, y, z, scales, mu, tol)
                    if sol is not None and v_window[0] - 0.5 <= sol[0] <= v_window[1] + 0.5:
                        found.append(sol)
                found = _dedupe_roots(found)
                if found:
                    any_root = True
                # sheet assignment by v-continuity with the predecessor node
                assigned = []
                used_sheets = set()
                for v, u, res in found:
                    sid = None
                    if pred:
                        cand = [(abs(v - p[0]), p[3]) for p in pred
                                if p[3] not in used_sheets]
                        cand.sort()
                        if cand and cand[0][0] <= match_tol:
                            sid = cand[0][1]
                    if sid is None:
                        sid = sheet_counter
                        sheet_counter += 1
                    used_sheets.add(sid)
                    assigned.append((v, u, res, sid))
                node_roots[(ix, iy, iz)] = assigned

    if not any_root:
        raise CanardLabError("fast-manifold solve failed over the whole region")

    charts = []
    for sid in range(sheet_counter):
        shape = (nx, len(y_axis), len(z_axis))
        phi_v = np.full(shape, np.nan)
        phi_u = np.full(shape, np.nan)
        labels = np.full(shape, -1, dtype=np.int8)
        residuals = np.full(shape, np.nan)
        count = 0
        for (ix, iy, iz), roots in node_roots.items():
            for v, u, res, s in roots:
                if s != sid:
                    continue
                phi_v[ix, iy, iz] = v
                phi_u[ix, iy, iz] = u
                residuals[ix, iy, iz] = res
                J = fast_jacobian(model, v, u, x_axis[ix], y_axis[iy], z_axis[iz],
                                  scales, mu)
                labels[ix, iy, iz] = 1 if _is_attracting(J) else 0
                count += 1
        if count >= 2:
            charts.append(FastManifoldChart(x_axis, y_axis, z_axis, phi_v, phi_u,
                                            labels, residuals, sid, osc_index))
    return charts


# ---------------------------------------------------------------------------
# Fold curve and jump point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPoint:
    v: float
    u: float
    x: float
    y: float
    z: float
    osc_index: int = 0
    residual: float = 0.0

    @property
    def point(self):
        return np.array([self.v, self.u, self.x, self.y, self.z])


@dataclass(frozen=True)
class CanardPoint:
    v: float
    u: float
    x: float
    y: float
    z: float
    osc_index: int = 0
    residual: float = 0.0

    @property
    def point(self):
        return np.array([self.v, self.u, self.x, self.y, self.z])


def _det_fast(model, v, u, x, y, z, scales, mu):
    J = fast_jacobian(model, v, u, x, y, z, scales, mu)
    return J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]


def find_fold_curve(chart: FastManifoldChart, model, params,
                    scales: TimeScales = TimeScales(), tol=ROOT_TOL,
                    ) -> List[FoldPoint]:
    """Fold points reachable from one sheet, refined to residual <= tol.

    Two detectors run along every x grid line: interior sign changes of
    det(D_(v,u)h) between filled nodes, and sheet edges (a filled node next
    to a hole or the grid boundary) where the sheet terminates because the
    root annihilates at a fold.  Each detection seeds a Newton solve of
    (h1, h2, det) = 0 in (v, u, x); solutions that wander far from their
    seed cell are discarded.  Deduplicated, ordered by x.
    """
    mu = params.mu
    pts = []
    nx, ny, nz = chart.phi_v.shape
    dx = chart.x_axis[1] - chart.x_axis[0] if nx > 1 else 1.0
    x_lo, x_hi = chart.x_axis[0], chart.x_axis[-1]

    def refine(seed, y, z, seed_v):
        def res(w):
            return [model.h1(w[0], w[1], w[2], y, z, scales, mu),
                    model.h2(w[0], w[1], w[2], y, z, scales, mu),
                    _det_fast(model, w[0], w[1], w[2], y, z, scales, mu)]

        sol = _newton_nd(res, np.asarray(seed, dtype=float), tol)
        if sol is None:
            return None
        w, rn = sol
        if not (x_lo - 2 * dx <= w[2] <= x_hi + 2 * dx) or abs(w[0] - seed_v) > 0.75:
            return None
        return FoldPoint(w[0], w[1], w[2], y, z, chart.osc_index, rn)

    for iz in range(nz):
        for iy in range(ny):
            y, z = chart.y_axis[iy], chart.z_axis[iz]
            prev = None
            for ix in range(nx):
                if np.isnan(chart.phi_v[ix, iy, iz]):
                    if prev is not None:
                        # sheet ends: try a fold at the trailing edge
                        p = refine((prev[0][0], prev[0][1], prev[2]), y, z, prev[0][0])
                        if p is not None:
                            pts.append(p)
                    prev = None
                    continue
                v, u = chart.phi_v[ix, iy, iz], chart.phi_u[ix, iy, iz]
                det = _det_fast(model, v, u, chart.x_axis[ix], y, z, scales, mu)
                if prev is None and ix > 0:
                    # sheet begins mid-line: leading edge may sit at a fold
                    p = refine((v, u, chart.x_axis[ix]), y, z, v)
                    if p is not None:
                        pts.append(p)
                if prev is not None and (prev[1] < 0) != (det < 0):
                    seed = (0.5 * (prev[0][0] + v), 0.5 * (prev[0][1] + u),
                            0.5 * (prev[2] + chart.x_axis[ix]))
                    p = refine(seed, y, z, seed[0])
                    if p is not None:
                        pts.append(p)
                prev = ((v, u), det, chart.x_axis[ix])
            if prev is not None and abs(prev[1]) < 0.5:
                # sheet reaches the grid boundary with a small determinant
                p = refine((prev[0][0], prev[0][1], prev[2]), y, z, prev[0][0])
                if p is not None:
                    pts.append(p)
    seen = set()
    out = []
    for p in sorted(pts, key=lambda p: (p.x, p.y, p.z, p.v)):
        key = tuple(np.round([p.v, p.u, p.x, p.y, p.z], 7))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def find_jump_point(model, params, z_value, seed, scales: TimeScales = TimeScales(),
                    tol=ROOT_TOL, osc_index=0) -> FoldPoint:
    """Fold-curve point with f = 0: solves (h1, h2, f, det) = 0 in (v,u,x,y)
    at frozen z.  This pins the slow coordinate y_f at which the slow
    manifold meets the fold, i.e. where the lingering passage ends."""
    mu = params.mu
    z = float(z_value)

    def res(w):
        v, u, x, y = w
        return [model.h1(v, u, x, y, z, scales, mu),
                model.h2(v, u, x, y, z, scales, mu),
                model.f(v, u, x, y, z, scales, mu),
                _det_fast(model, v, u, x, y, z, scales, mu)]

    sol = _newton_nd(res, np.asarray(seed, dtype=float), tol)
    if sol is None:
        raise CanardLabError("jump-point solve did not converge from the seed")
    w, rn = sol
    return FoldPoint(w[0], w[1], w[2], w[3], z, osc_index, rn)


# ---------------------------------------------------------------------------
# Slow manifold
# ---------------------------------------------------------------------------

@dataclass
class SlowManifoldChart:
    """Slow critical manifold over (y, z): psi_v, psi_u, psi_x with residuals."""

    y_axis: np.ndarray
    z_axis: np.ndarray
    psi_v: np.ndarray
    psi_u: np.ndarray
    psi_x: np.ndarray
    residuals: np.ndarray
    min_abs_dfdx: float
    osc_index: int = 0

    @property
    def filled(self):
        return ~np.isnan(self.psi_x)

    def eval(self, model, params, y, z, scales=TimeScales(), fast_chart=None,
             tol=ROOT_TOL):
        """(psi_v, psi_u, psi_x) at an off-grid (y, z), polished to tol."""
        iy = int(np.clip(np.searchsorted(self.y_axis, y), 0, len(self.y_axis) - 1))
        iz = int(np.clip(np.searchsorted(self.z_axis, z), 0, len(self.z_axis) - 1))
        seed = None
        for dy in (0, -1, 1, -2, 2):
            jy = iy + dy
            if not (0 <= jy < len(self.y_axis)):
                continue
            for dz in (0, -1, 1):
                jz = iz + dz
                if 0 <= jz < len(self.z_axis) and not np.isnan(self.psi_x[jy, jz]):
                    seed = (self.psi_v[jy, jz], self.psi_u[jy, jz], self.psi_x[jy, jz])
                    break
            if seed:
                break
        if seed is None:
            raise CanardLabError("slow chart has no filled node near the request")
        mu = params.mu

        def res(w):
            return [model.h1(w[0], w[1], w[2], y, z, scales, mu),
                    model.h2(w[0], w[1], w[2], y, z, scales, mu),
                    model.f(w[0], w[1], w[2], y, z, scales, mu)]

        sol = _newton_nd(res, np.asarray(seed), tol)
        if sol is None:
            raise CanardLabError(f"slow-manifold polish failed at (y,z)=({y:.6g},{z:.6g})")
        w, rn = sol
        return w[0], w[1], w[2]


def solve_slow_manifold(model, params, fast_charts, y_axis, z_axis,
                        scales: TimeScales = TimeScales(), tol=ROOT_TOL,
                        dfdx_tol=1e-8, osc_index=0) -> SlowManifoldChart:
    """Solve f = 0 along the fast manifold for each (y, z) grid node.

    For each node the drift f is evaluated along the chart (bracketing in x),
    the bracket is refined, and the full 3-equation system h1 = h2 = f = 0 is
    polished by Newton.  Vanishing df/dx on the solution set violates the
    implicit-function hypothesis and raises AssumptionViolation.
    """
    charts = fast_charts if isinstance(fast_charts, (list, tuple)) else [fast_charts]
    y_axis = np.asarray(y_axis, dtype=float)
    z_axis = np.asarray(z_axis, dtype=float)
    mu = params.mu
    ny, nz = len(y_axis), len(z_axis)
    psi_v = np.full((ny, nz), np.nan)
    psi_u = np.full((ny, nz), np.nan)
    psi_x = np.full((ny, nz), np.nan)
    residuals = np.full((ny, nz), np.nan)
    min_dfdx = np.inf
    bad_node = None

    def f_along(chart, x, y, z):
        try:
            v, u = chart.eval(model, params, x, y, z, scales, tol)
        except CanardLabError:
            return None, None
        return model.f(v, u, x, y, z, scales, mu), (v, u)

    for iy, y in enumerate(y_axis):
        for iz, z in enumerate(z_axis):
            # collect one root per sheet, then prefer an attracting one:
            # every sheet can carry an f=0 branch when f ignores (v, u)
            found = []
            for chart in charts:
                solved = None
                xs = chart.x_axis[chart.filled.any(axis=(1, 2))]
                if xs.size < 2:
                    continue
                prev = None
                for x in xs:
                    fx, vu = f_along(chart, x, y, z)
                    if fx is None:
                        prev = None
                        continue
                    if abs(fx) < 1e-12:
                        solved = (vu[0], vu[1], x)
                    elif prev is not None and (prev[0] < 0) != (fx < 0):
                        xm = 0.5 * (prev[1] + x)
                        fm, vum = f_along(chart, xm, y, z)
                        seed = (vum[0], vum[1], xm) if fm is not None else (vu[0], vu[1], x)

                        def res(w, y=y, z=z):
                            return [model.h1(w[0], w[1], w[2], y, z, scales, mu),
                                    model.h2(w[0], w[1], w[2], y, z, scales, mu),
                                    model.f(w[0], w[1], w[2], y, z, scales, mu)]

                        sol = _newton_nd(res, np.asarray(seed), tol)
                        if sol is not None:
                            solved = (sol[0][0], sol[0][1], sol[0][2])
                    if solved:
                        break
                    prev = (fx, x)
                if solved:
                    J = fast_jacobian(model, solved[0], solved[1], solved[2],
                                      y, z, scales, mu)
                    found.append((not _is_attracting(J), solved))
            solved = None
            if found:
                found.sort(key=lambda t: t[0])   # attracting first, stable order
                solved = found[0][1]
            if solved:
                v, u, x = solved
                psi_v[iy, iz], psi_u[iy, iz], psi_x[iy, iz] = v, u, x
                residuals[iy, iz] = max(abs(model.h1(v, u, x, y, z, scales, mu)),
                                        abs(model.h2(v, u, x, y, z, scales, mu)),
                                        abs(model.f(v, u, x, y, z, scales, mu)))
                dfdx = abs(_f_gradient(model, v, u, x, y, z, scales, mu)[2])
                if dfdx < min_dfdx:
                    min_dfdx = dfdx
                if dfdx < dfdx_tol:
                    bad_node = (iy, iz, y, z)

    if bad_node is not None:
        raise AssumptionViolation(
            f"df/dx vanishes on the slow manifold at node (iy={bad_node[0]}, "
            f"iz={bad_node[1]}), (y,z)=({bad_node[2]:.6g},{bad_node[3]:.6g})")
    if not np.any(~np.isnan(psi_x)):
        raise AssumptionViolation(
            "slow-manifold bracketing failed at every (y,z) node: "
            "f has no root along the fast manifold in this region")
    return SlowManifoldChart(y_axis, z_axis, psi_v, psi_u, psi_x, residuals,
                             float(min_dfdx), osc_index)


# ---------------------------------------------------------------------------
# Canard point
# ---------------------------------------------------------------------------

def find_canard_point(model, params, fast_charts, slow_chart: SlowManifoldChart,
                      fold_points: Sequence[FoldPoint], window=None, index=0,
                      scales: TimeScales = TimeScales(), tol=ROOT_TOL,
                      osc_index=0) -> CanardPoint:
    """Attracting intersection of the fast and slow manifolds nearest the fold.

    Candidates are the slow-chart nodes inside ``window`` (a ((y_lo,y_hi),
    (z_lo,z_hi)) pair; default the whole chart), polished to residual <= tol
    and kept when the fast subsystem is attracting there (eigenvalue test,
    cross-checked against the nearest fast-chart node label).  Distance to
    the fold is measured in the (v, u, x) coordinates since the fold curve
    extends along the slow directions; ties break toward smaller (y, z), and
    ``index`` selects among the distance-sorted candidates.
    """
    charts = fast_charts if isinstance(fast_charts, (list, tuple)) else [fast_charts]
    if window is None:
        (ylo, yhi) = slow_chart.y_axis[0], slow_chart.y_axis[-1]
        (zlo, zhi) = slow_chart.z_axis[0], slow_chart.z_axis[-1]
    else:
        (ylo, yhi), (zlo, zhi) = window
    mu = params.mu
    cands = []
    for iy, y in enumerate(slow_chart.y_axis):
        if not (ylo - 1e-12 <= y <= yhi + 1e-12):
            continue
        for iz, z in enumerate(slow_chart.z_axis):
            if not (zlo - 1e-12 <= z <= zhi + 1e-12):
                continue
            if np.isnan(slow_chart.psi_x[iy, iz]):
                continue
            v, u, x = (slow_chart.psi_v[iy, iz], slow_chart.psi_u[iy, iz],
                       slow_chart.psi_x[iy, iz])

            def res(w, y=y, z=z):
                return [model.h1(w[0], w[1], w[2], y, z, scales, mu),
                        model.h2(w[0], w[1], w[2], y, z, scales, mu),
                        model.f(w[0], w[1], w[2], y, z, scales, mu)]

            sol = _newton_nd(res, np.array([v, u, x]), tol)
            if sol is None:
                continue
            (v, u, x), rn = sol
            J = fast_jacobian(model, v, u, x, y, z, scales, mu)
            if not _is_attracting(J):
                continue
            point = np.array([v, u, x, y, z])
            nearest_label = None
            best_d = np.inf
            for chart in charts:
                node, d = chart.nearest_node(point)
                if node is not None and d < best_d:
                    best_d = d
                    nearest_label = chart.labels[node]
            if nearest_label is not None and nearest_label != 1:
                continue
            cands.append((v, u, x, y, z, rn))

    if not cands:
        raise CanardNotFoundError(
            "no attracting intersection of the slow and fast manifolds in the "
            "search window (canard assumption unmet for this parameterization)")

    def dist_to_fold(c):
        if not fold_points:
            return 0.0
        p = np.array(c[:3])
        return min(float(np.linalg.norm(p - np.array([fp.v, fp.u, fp.x])))
                   for fp in fold_points)

    ranked = sorted(cands, key=lambda c: (round(dist_to_fold(c), 12), c[3], c[4]))
    # dedupe identical polished points
    unique = []
    for c in ranked:
        if not unique or np.max(np.abs(np.array(c[:5]) - np.array(unique[-1][:5]))) > 1e-8:
            unique.append(c)
    if index >= len(unique):
        raise CanardNotFoundError(
            f"canard candidate index {index} out of range ({len(unique)} found)")
    v, u, x, y, z, rn = unique[index]
    return CanardPoint(v, u, x, y, z, osc_index, rn)
