import numpy as np
import pytest

from canardlab.dynamics import ModelDefinition, OscillatorParams, TimeScales
from canardlab.errors import CrossingNotFoundError, SingularPassageError
from canardlab.integrate import Trajectory
from canardlab.linger import (LingerReport, PoincareSection, SectionOffsets,
                              build_sections, default_offsets,
                              detect_section_crossing, linger_time_empirical,
                              linger_time_quadrature, sync_window)
from canardlab.manifolds import SlowManifoldChart

SCALES = TimeScales()


def straight_line_trajectory(n=201, t_end=1.0, y_const=0.0, z_const=0.0):
    """Single oscillator moving with x(t) = t, everything else frozen."""
    ts = np.linspace(0.0, t_end, n)
    ys = np.zeros((n, 5))
    ys[:, 2] = ts
    ys[:, 3] = y_const
    ys[:, 4] = z_const
    fs = np.zeros((n, 5))
    fs[:, 2] = 1.0
    return Trajectory(ts, ys, fs)


def flat_slow_chart(psi=(0.0, 0.0, 0.0), y_span=(0.0, 5.0), z_span=(0.0, 1.0)):
    y_axis = np.linspace(*y_span, 11)
    z_axis = np.linspace(*z_span, 2)
    shape = (11, 2)
    return SlowManifoldChart(y_axis, z_axis,
                             np.full(shape, psi[0]), np.full(shape, psi[1]),
                             np.full(shape, psi[2]), np.zeros(shape), 1.0)


def trivial_model(g1):
    """Fast/intermediate equations with roots at the origin; custom g1."""
    return ModelDefinition(
        model_id="custom",
        h1=lambda v, u, x, y, z, s, mu: v,
        h2=lambda v, u, x, y, z, s, mu: u,
        f=lambda v, u, x, y, z, s, mu: x,
        g1=g1,
        g2=lambda v, u, x, y, z, s, mu: 0.0 * v)


def test_section_offsets_positive():
    with pytest.raises(ValueError):
        SectionOffsets(0.0, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        SectionOffsets(1, 1, 1, 1, -2, 1)


def test_build_sections_anchor_positions(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    cp, jp = geo.canard, geo.jump
    gap = abs(cp.x - jp.x)
    for frac in (1e-6, 0.02):
        off = SectionOffsets(frac * gap, 0.05, 5.0, 0.01 * gap, 0.25, 5.0)
        entry, pre = build_sections(cp, jp, off, geo.fast_charts, model, params)
        assert entry.anchor_x == cp.x - frac * gap
        assert pre.anchor_x == jp.x - 0.01 * gap
        if frac == 1e-6:
            # delta_x -> 0 limit: the entry anchor approaches the canard x
            assert abs(entry.anchor_x - cp.x) < 1e-5


def test_build_sections_rejects_overlap(single_oscillator):
    b = single_oscillator
    geo = b["geo"]
    gap = abs(geo.canard.x - geo.jump.x)
    off = SectionOffsets(1.5 * gap, 0.05, 5.0, 0.01 * gap, 0.25, 5.0)
    with pytest.raises(ValueError, match="gap"):
        build_sections(geo.canard, geo.jump, off, geo.fast_charts,
                       b["model"], b["params"])


def test_anchored_phi_residuals(single_oscillator):
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    mu = params.mu
    for sec, (yy, zz) in ((geo.entry, (geo.canard.y, geo.canard.z)),
                          (geo.prejump, (geo.jump.y, geo.jump.z))):
        r1 = model.h1(sec.phi_v, sec.phi_u, sec.anchor_x, yy, zz, SCALES, mu)
        r2 = model.h2(sec.phi_v, sec.phi_u, sec.anchor_x, yy, zz, SCALES, mu)
        assert max(abs(r1), abs(r2)) <= 1e-10


def test_detect_crossing_and_window_filter():
    traj = straight_line_trajectory()
    wide = PoincareSection("entry", 0.5, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)
    hits = detect_section_crossing(traj, wide)
    assert len(hits) == 1
    assert abs(hits[0].t - 0.5) < 1e-9

    narrow = PoincareSection("entry", 0.5, 3.0, 0.0, 0.5, 1.0, 0.0, 0.0)
    assert detect_section_crossing(traj, narrow) == []


def test_empirical_linear_motion():
    traj = straight_line_trajectory()
    entry = PoincareSection("entry", 0.2, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)
    pre = PoincareSection("pre-jump", 0.8, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0)
    dt = linger_time_empirical(traj, entry, pre, event_tolerance=1e-9)
    assert abs(dt - 0.6) < 2e-9


def test_empirical_window_excludes():
    traj = straight_line_trajectory(y_const=4.0)
    entry = PoincareSection("entry", 0.2, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0)
    pre = PoincareSection("pre-jump", 0.8, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0)
    with pytest.raises(CrossingNotFoundError) as exc:
        linger_time_empirical(traj, entry, pre)
    assert exc.value.entry_count == 0


def test_quadrature_constant_drift():
    c = 2.5
    model = trivial_model(lambda v, u, x, y, z, s, mu: c + 0.0 * v)
    chart = flat_slow_chart()
    p = OscillatorParams([0.0])
    q = linger_time_quadrature(model, p, SCALES, chart, 1.0, 3.0, 0.5,
                               seed_point=(0.0, 0.0, 0.0))
    exact = (3.0 - 1.0) / (SCALES.eps_ts * SCALES.delta * c)
    assert q.time == pytest.approx(exact, rel=1e-12)


def test_quadrature_linear_drift_closed_form():
    alpha = 3.0
    model = trivial_model(lambda v, u, x, y, z, s, mu: alpha * y)
    chart = flat_slow_chart()
    p = OscillatorParams([0.0])
    q = linger_time_quadrature(model, p, SCALES, chart, 1.0, 2.0, 0.5,
                               seed_point=(0.0, 0.0, 0.0))
    exact = np.log(2.0) / (SCALES.eps_ts * SCALES.delta * alpha)
    assert q.time == pytest.approx(exact, rel=1e-8)


def test_quadrature_sign_change_is_singular():
    model = trivial_model(lambda v, u, x, y, z, s, mu: y - 2.0)
    chart = flat_slow_chart()
    p = OscillatorParams([0.0])
    with pytest.raises(SingularPassageError):
        linger_time_quadrature(model, p, SCALES, chart, 1.0, 3.0, 0.5,
                               seed_point=(0.0, 0.0, 0.0))


def test_quadrature_orientation_positive(single_oscillator):
    """Reference passage integrates downward in y yet returns positive time."""
    b = single_oscillator
    geo = b["geo"]
    q = linger_time_quadrature(b["model"], b["params"], SCALES, geo.slow_chart,
                               geo.quad_y_from, geo.jump.y, geo.canard.z,
                               seed_point=(geo.canard.v, geo.canard.u,
                                           geo.canard.x, geo.canard.y))
    assert geo.jump.y < geo.quad_y_from
    assert q.time > 0


def test_quadrature_matches_composite_simpson(single_oscillator):
    """Fixed-grid composite-Simpson oracle at 10^6 nodes, 1e-6 relative.

    The oracle inverts the manifold cubic with the trigonometric Cardano
    formula (vectorized, independent of the chart/Newton machinery).
    """
    b = single_oscillator
    model, params, geo = b["model"], b["params"], b["geo"]
    q = linger_time_quadrature(model, params, SCALES, geo.slow_chart,
                               geo.quad_y_from, geo.jump.y, geo.canard.z,
                               seed_point=(geo.canard.v, geo.canard.u,
                                           geo.canard.x, geo.canard.y))
    c = model.coefficients
    C = c["c"] + c["current"] + params.mu[0]

    def psi_v_vec(ys):
        # roots of v^3 + B v^2 + D = 0 with B = -(b-d)/a, D = -(C-x)/a,
        # x = q y + x0 (s = 0); three real roots, lower branch is the minimum
        x = c["q"] * ys + c["x0"]
        B = -(c["b"] - c["d"]) / c["a"]
        D = -(C - x) / c["a"]
        p = -B * B / 3.0
        qq = 2.0 * B ** 3 / 27.0 + D
        m = 2.0 * np.sqrt(-p / 3.0)
        arg = np.clip(3.0 * qq / (p * m), -1.0, 1.0)
        theta = np.arccos(arg) / 3.0
        ks = np.array([0.0, 1.0, 2.0])[:, None]
        w = m * np.cos(theta[None, :] - 2.0 * np.pi * ks / 3.0)
        return (w - B / 3.0).min(axis=0)

    n = 1_000_001
    ys = np.linspace(geo.quad_y_from, geo.jump.y, n)
    vals = 1.0 / (SCALES.eps_ts * SCALES.delta * (psi_v_vec(ys) - ys + c["e1"]))
    h = ys[1] - ys[0]
    simpson = (h / 3) * (vals[0] + vals[-1]
                         + 4 * vals[1:-1:2].sum() + 2 * vals[2:-2:2].sum())
    assert q.time == pytest.approx(abs(simpson), rel=1e-6)


def test_quadrature_scaling_in_delta(single_oscillator):
    """The integrand factorizes: doubling delta exactly halves the time."""
    b = single_oscillator
    geo = b["geo"]
    args = (geo.slow_chart, geo.quad_y_from, geo.jump.y, geo.canard.z)
    seed = (geo.canard.v, geo.canard.u, geo.canard.x, geo.canard.y)
    t1 = linger_time_quadrature(b["model"], b["params"], TimeScales(0.05, 0.05),
                                *args, seed_point=seed).time
    t2 = linger_time_quadrature(b["model"], b["params"], TimeScales(0.05, 0.1),
                                *args, seed_point=seed).time
    assert t1 == pytest.approx(2.0 * t2, rel=1e-9)


def test_sync_window():
    assert sync_window([3.0]) == 3.0
    assert sync_window([5.0, 2.0, 7.5]) == 2.0
    with pytest.raises(ValueError):
        sync_window([])


def test_linger_report_roundtrip(tmp_path):
    from canardlab.linger import QuadratureResult
    quads = [QuadratureResult(5.0, 1e-9, 3.5, 3.0, 3.0),
             QuadratureResult(4.0, 1e-9, 3.5, 3.0, 3.0)]
    rep = LingerReport.from_results(quads, [4.9, None], [{}, {}])
    assert rep.t_linger_min == 4.0
    path = tmp_path / "linger.json"
    rep.to_json(path)
    import json
    data = json.loads(path.read_text())
    assert data["t_linger_min"] == 4.0
    assert data["oscillators"][1]["t_linger_empirical"] is None


def test_default_offsets_rule(single_oscillator):
    geo = single_oscillator["geo"]
    off = default_offsets(geo.canard, geo.jump, geo.slow_chart)
    gap = abs(geo.canard.x - geo.jump.x)
    assert off.delta_x == pytest.approx(0.02 * gap)
    y_ext = geo.slow_chart.y_axis[-1] - geo.slow_chart.y_axis[0]
    assert off.delta_y == pytest.approx(0.05 * y_ext)


def test_homogeneous_network_linger_times_equal(tmp_path):
    """Zero spread: every oscillator lingers equally and the minimum ties."""
    from canardlab.config import ExperimentConfig
    from canardlab.pipeline import run_experiment

    cfg = ExperimentConfig.from_dict({
        "model": {"seed": 3, "heterogeneity_spread": 0.0},
        "network": {"n_osc": 3, "k": 0.0},
        "linger": {"empirical": False},
    })
    art = run_experiment(cfg, out_dir=tmp_path, until="linger")
    times = art.linger_report.times_quadrature
    tol = max(art.linger_report.quadrature_errors) + 1e-9 * times[0]
    assert max(times) - min(times) <= max(tol, 1e-8 * times[0])
    assert art.linger_report.t_linger_min <= min(times)
