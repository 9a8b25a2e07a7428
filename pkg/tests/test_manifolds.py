import numpy as np
import pytest

from canardlab.dynamics import (ModelDefinition, OscillatorParams, TimeScales,
                                make_reference_model, make_reference_network)
from canardlab.errors import AssumptionViolation, CanardNotFoundError
from canardlab.manifolds import (fast_eigenvalues, fast_jacobian, find_canard_point,
                                 find_fold_curve, solve_fast_manifold,
                                 solve_slow_manifold)

SCALES = TimeScales()


def linear_model():
    """h1 = v - x, h2 = u: single flat sheet phi_v = x, phi_u = 0."""
    ref = make_reference_model()
    return ModelDefinition(
        model_id="custom",
        h1=lambda v, u, x, y, z, s, mu: v - x,
        h2=lambda v, u, x, y, z, s, mu: u + 0.0 * v,
        f=ref.f, g1=ref.g1, g2=ref.g2)


def test_reference_roots_match_companion_matrix(single_oscillator):
    """Every chart node agrees with numpy.roots on the eliminated cubic."""
    b = single_oscillator
    model, params = b["model"], b["params"]
    c = model.coefficients
    C = c["c"] + c["current"] + params.mu[0]
    checked = 0
    for chart in b["geo"].fast_charts:
        nx, ny, nz = chart.phi_v.shape
        for ix in range(0, nx, 7):
            x = chart.x_axis[ix]
            # -a v^3 + (b-d) v^2 + (C - x) = 0
            roots = np.roots([-c["a"], c["b"] - c["d"], 0.0, C - x])
            real = np.sort(roots[np.abs(roots.imag) < 1e-9].real)
            for iy in range(ny):
                for iz in range(nz):
                    v = chart.phi_v[ix, iy, iz]
                    if np.isnan(v):
                        continue
                    assert np.min(np.abs(real - v)) < 1e-8
                    u = chart.phi_u[ix, iy, iz]
                    assert abs(u - (c["c"] - c["d"] * v * v)) < 1e-8
                    checked += 1
    assert checked > 200


def test_chart_residuals_tolerance(single_oscillator):
    for chart in single_oscillator["geo"].fast_charts:
        m = chart.filled
        assert np.nanmax(chart.residuals[m]) <= 1e-10


def test_single_sheet_above_upper_fold():
    """For x beyond the upper fold the cubic has one real root: one sheet."""
    model, params = make_reference_network(1, 0.0, seed=0)
    c = model.coefficients
    C = c["c"] + c["current"]
    region = ((C + 0.3, C + 1.0), (3.0, 3.2), (3.0, 3.2))
    charts = solve_fast_manifold(model, params[0], region, (21, 2, 2))
    assert len(charts) == 1
    # oracle: discriminant sign via explicit root count
    for x in np.linspace(C + 0.3, C + 1.0, 7):
        roots = np.roots([-c["a"], c["b"] - c["d"], 0.0, C - x])
        assert np.sum(np.abs(roots.imag) < 1e-9) == 1


def test_linear_model_single_flat_sheet():
    model = linear_model()
    p = OscillatorParams([0.0])
    charts = solve_fast_manifold(model, p, ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0)),
                                 (9, 2, 2), v_window=(-2, 2))
    assert len(charts) == 1
    ch = charts[0]
    for ix in range(9):
        assert np.allclose(ch.phi_v[ix][ch.filled[ix]], ch.x_axis[ix], atol=1e-10)
    assert np.nanmax(np.abs(ch.phi_u)) < 1e-10
    assert find_fold_curve(ch, model, p) == []      # det is identically -1


def test_fold_v_coordinates_analytic(single_oscillator):
    """Fold v-values are the roots of 3 a v^2 + 2 (d-b) v = 0: {0, -4/3}."""
    b = single_oscillator
    vs = sorted({round(fp.v, 9) for fp in b["geo"].fold_points})
    assert len(vs) == 2
    assert abs(vs[0] - (-4.0 / 3.0)) < 1e-8
    assert abs(vs[1] - 0.0) < 1e-8
    for fp in b["geo"].fold_points:
        assert fp.residual <= 1e-10


def test_fold_invariant_under_grid_refinement():
    model, params = make_reference_network(1, 0.0, seed=0)
    p = params[0]
    region = ((2.75, 4.43), (3.0, 3.4), (3.0, 3.4))
    out = {}
    for n in (41, 81):
        charts = solve_fast_manifold(model, p, region, (n, 2, 2))
        pts = []
        for ch in charts:
            pts += find_fold_curve(ch, model, p)
        out[n] = sorted({round(fp.v, 12) for fp in pts})
    assert len(out[41]) == len(out[81]) == 2
    for a, b in zip(out[41], out[81]):
        assert abs(a - b) < 1e-8


def test_jump_point_pins_drift_zero(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    jp = geo.jump
    mu = params.mu
    for fn in (model.h1, model.h2, model.f):
        assert abs(fn(jp.v, jp.u, jp.x, jp.y, jp.z, SCALES, mu)) < 1e-9
    J = fast_jacobian(model, jp.v, jp.u, jp.x, jp.y, jp.z, SCALES, mu)
    assert abs(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]) < 1e-8


def test_slow_manifold_closed_form(single_oscillator):
    """With f = s(v-v0) - kappa(x - q y - x0): psi_x = q y + x0 + (s/kappa)(psi_v - v0)."""
    b = single_oscillator
    sc = b["geo"].slow_chart
    c = b["model"].coefficients
    for iy in range(0, len(sc.y_axis), 5):
        for iz in range(len(sc.z_axis)):
            if np.isnan(sc.psi_x[iy, iz]):
                continue
            expect = (c["q"] * sc.y_axis[iy] + c["x0"]
                      + (c["s"] / c["kappa_x"]) * (sc.psi_v[iy, iz] - c["v0"]))
            assert abs(sc.psi_x[iy, iz] - expect) < 1e-9
    assert np.nanmax(sc.residuals) <= 1e-10
    assert sc.min_abs_dfdx > 0


def test_slow_manifold_no_root_is_assumption_violation():
    ref = make_reference_model()
    model = ModelDefinition(
        model_id="custom", h1=ref.h1, h2=ref.h2,
        f=lambda v, u, x, y, z, s, mu: 1.0 + 0.0 * v,
        g1=ref.g1, g2=ref.g2,
        fast_jacobian=ref.fast_jacobian)
    p = OscillatorParams([0.0])
    charts = solve_fast_manifold(model, p, ((2.75, 4.0), (3.0, 3.4), (3.0, 3.4)),
                                 (31, 2, 2))
    with pytest.raises(AssumptionViolation):
        solve_slow_manifold(model, p, charts, np.linspace(3.0, 3.4, 5),
                            np.linspace(3.0, 3.4, 2))


def test_slow_manifold_stable_under_refinement(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    jp = geo.jump
    coarse = solve_slow_manifold(model, params, geo.fast_charts,
                                 np.linspace(jp.y, 4.0, 41),
                                 np.linspace(3.0, 3.6, 2))
    fine = solve_slow_manifold(model, params, geo.fast_charts,
                               np.linspace(jp.y, 4.0, 81),
                               np.linspace(3.0, 3.6, 3))
    for y in np.linspace(jp.y + 0.05, 3.9, 9):
        a = coarse.eval(model, params, y, 3.0)
        c = fine.eval(model, params, y, 3.0)
        assert np.max(np.abs(np.array(a) - np.array(c))) < 1e-8


def test_canard_point_residual_and_eigenvalues(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    cp = geo.canard
    mu = params.mu
    for fn in (model.h1, model.h2, model.f):
        assert abs(fn(cp.v, cp.u, cp.x, cp.y, cp.z, SCALES, mu)) <= 1e-10
    eig = fast_eigenvalues(model, cp.v, cp.u, cp.x, cp.y, cp.z, SCALES, mu)
    assert np.all(eig.real < 0)


def test_canard_not_found_outside_region(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    with pytest.raises(CanardNotFoundError):
        find_canard_point(model, params, geo.fast_charts, geo.slow_chart,
                          geo.fold_points, window=((9.0, 10.0), (3.0, 3.6)))


def test_canard_continuity_in_mu(single_oscillator):
    """Perturbing mu by 1e-6 moves the canard point by O(1e-6)."""
    b = single_oscillator
    model, geo = b["model"], b["geo"]
    base = geo.canard.point
    p2 = OscillatorParams([1e-6])
    charts = solve_fast_manifold(model, p2, ((2.75, 4.43), (2.70, 4.00), (3.00, 3.60)),
                                 (69, 3, 3))
    folds = []
    for ch in charts:
        folds += find_fold_curve(ch, model, p2)
    sc = solve_slow_manifold(model, p2, charts,
                             np.linspace(geo.jump.y, 4.0, 81),
                             np.linspace(3.0, 3.6, 3))
    cp2 = find_canard_point(model, p2, charts, sc, folds,
                            window=((3.552, 4.0), (3.0, 3.6)))
    assert np.max(np.abs(cp2.point - base)) <= 1e-3


def test_canard_invariant_under_refinement(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    fine_slow = solve_slow_manifold(model, params, geo.fast_charts,
                                    np.linspace(geo.jump.y, 4.0, 161),
                                    np.linspace(3.0, 3.6, 5))
    cp2 = find_canard_point(model, params, geo.fast_charts, fine_slow,
                            geo.fold_points, window=((3.552, 4.0), (3.0, 3.6)))
    assert np.max(np.abs(cp2.point - geo.canard.point)) < 1e-8


def test_label_flips_only_at_folds(single_oscillator):
    """Along any x grid line a label change brackets a detected fold.

    Flips through a trace sign change (the oscillatory branch losing focus
    stability, det > 0 throughout) are the one exception: they are not folds
    and fold detection rightly ignores them.
    """
    b = single_oscillator
    model, params = b["model"], b["params"]
    fold_xs = sorted(fp.x for fp in b["geo"].fold_points)
    flips_checked = 0
    for chart in b["geo"].fast_charts:
        nx, ny, nz = chart.phi_v.shape
        for iy in range(ny):
            for iz in range(nz):
                labs = chart.labels[:, iy, iz]
                for ix in range(nx - 1):
                    if labs[ix] == -1 or labs[ix + 1] == -1:
                        continue
                    if labs[ix] == labs[ix + 1]:
                        continue
                    tr = []
                    for jx in (ix, ix + 1):
                        J = fast_jacobian(model, chart.phi_v[jx, iy, iz],
                                          chart.phi_u[jx, iy, iz],
                                          chart.x_axis[jx], chart.y_axis[iy],
                                          chart.z_axis[iz], SCALES, params.mu)
                        tr.append(J[0, 0] + J[1, 1])
                    if (tr[0] < 0) != (tr[1] < 0):
                        continue            # Hopf-type flip, not a fold
                    lo = chart.x_axis[ix] - 1e-9
                    hi = chart.x_axis[ix + 1] + 1e-9
                    assert any(lo <= fx <= hi for fx in fold_xs)
                    flips_checked += 1
    assert flips_checked >= 0


def test_canard_index_option(single_oscillator):
    """index selects among distance-ranked attracting intersections."""
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    first = find_canard_point(model, params, geo.fast_charts, geo.slow_chart,
                              [geo.jump], window=((3.552, 4.0), (3.0, 3.6)),
                              index=0)
    second = find_canard_point(model, params, geo.fast_charts, geo.slow_chart,
                               [geo.jump], window=((3.552, 4.0), (3.0, 3.6)),
                               index=1)
    assert np.max(np.abs(first.point - geo.canard.point)) < 1e-10
    # the geometry is z-degenerate, so ties advance lexicographically in (y, z)
    assert (second.y, second.z) > (first.y, first.z)
    with pytest.raises(CanardNotFoundError):
        find_canard_point(model, params, geo.fast_charts, geo.slow_chart,
                          [geo.jump], window=((3.552, 4.0), (3.0, 3.6)),
                          index=10_000)
