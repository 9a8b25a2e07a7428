import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from canardlab.dynamics import (NetworkConfig, NetworkState, OscillatorParams,
                                StateBox, TimeScales, coupling_term,
                                eval_intrinsic, heterogeneity_bound,
                                make_reference_model, make_reference_network,
                                network_rhs)
from canardlab.errors import EvaluationError


def _state(rows):
    return NetworkState(0.0, np.asarray(rows, dtype=float))


def test_timescales_validation():
    TimeScales(0.05, 0.1)
    with pytest.raises(ValueError):
        TimeScales(0.0, 0.1)
    with pytest.raises(ValueError):
        TimeScales(0.5, 1.5)
    with pytest.raises(ValueError):
        TimeScales(1e-7, 1e-7)   # product below the guard


def test_oscillator_params_immutable():
    p = OscillatorParams([0.3])
    with pytest.raises(AttributeError):
        p.mu = np.array([1.0])
    with pytest.raises(ValueError):
        p.mu[0] = 2.0


def test_eval_intrinsic_scale_factors():
    # components 4,5 carry the factor eps*delta (0.005) exactly
    model, params = make_reference_network(1, 0.0, seed=0)
    scales = TimeScales(0.05, 0.1)
    row = np.array([-1.5, -10.0, 3.2, 3.5, 3.2])
    out = eval_intrinsic(model, row, scales, params[0])
    mu = params[0].mu
    factor = scales.eps_ts * scales.delta
    assert factor == pytest.approx(0.005, rel=1e-15)
    assert out[3] == factor * model.g1(*row, scales, mu)
    assert out[4] == factor * model.g2(*row, scales, mu)
    assert out[2] == scales.eps_ts * model.f(*row, scales, mu)


def test_eval_intrinsic_constant_g1():
    model = make_reference_model()
    const_g1 = type(model)(
        model_id="custom", h1=model.h1, h2=model.h2, f=model.f,
        g1=lambda v, u, x, y, z, s, mu: np.ones_like(np.asarray(v, dtype=float)),
        g2=model.g2, coefficients=model.coefficients,
        fast_jacobian=model.fast_jacobian, f_gradient=model.f_gradient)
    scales = TimeScales(0.02, 0.3)
    p = OscillatorParams([0.0])
    for row in ([0, 0, 0, 0, 0], [1.5, -3, 2, 0.1, 9]):
        out = eval_intrinsic(const_g1, np.array(row, dtype=float), scales, p)
        assert out[3] == pytest.approx(0.02 * 0.3, abs=0)


def test_eval_intrinsic_at_fast_root():
    """Bisection oracle: eliminate u via h2, bisect the resulting cubic in v."""
    model, params = make_reference_network(1, 0.0, seed=0)
    p = params[0]
    scales = TimeScales()
    x, y, z = 3.3, 3.5, 3.2
    c = model.coefficients

    def cubic(v):
        u = c["c"] - c["d"] * v * v
        return model.h1(v, u, x, y, z, scales, p.mu)

    lo, hi = -2.5, -1.4     # brackets the attracting-branch root
    flo = cubic(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = cubic(mid)
        if (flo < 0) == (fm < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    v = 0.5 * (lo + hi)
    u = c["c"] - c["d"] * v * v
    out = eval_intrinsic(model, np.array([v, u, x, y, z]), scales, p)
    assert abs(out[0]) < 1e-10
    assert abs(out[1]) < 1e-10


def test_eval_intrinsic_nonfinite_error_names_function():
    model = make_reference_model()
    bad = type(model)(
        model_id="custom", h1=model.h1, h2=model.h2,
        f=lambda v, u, x, y, z, s, mu: np.inf,
        g1=model.g1, g2=model.g2, coefficients=model.coefficients)
    with pytest.raises(EvaluationError, match="'f'"):
        eval_intrinsic(bad, np.zeros(5), TimeScales(), OscillatorParams([0.0]))


def test_coupling_term_trivial_cases():
    cfg = NetworkConfig(3, k=2.0)
    st_eq = _state([[1, 0, 0, 0, 0]] * 3)
    assert np.allclose(coupling_term(st_eq, cfg), 0.0)

    cfg2 = NetworkConfig(2, k=1.0)
    st2 = _state([[0, 0, 0, 0, 0], [2, 0, 0, 0, 0]])
    np.testing.assert_allclose(coupling_term(st2, cfg2), [1.0, -1.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 12), st.floats(0.0, 50.0), st.integers(0, 10_000))
def test_coupling_conservation(n, k, seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-5, 5, n)
    rows = np.zeros((n, 5))
    rows[:, 0] = v
    out = coupling_term(_state(rows), NetworkConfig(n, k))
    assert abs(out.sum()) <= 1e-12 * n * max(1.0, np.abs(v).max())


def test_network_rhs_k_zero_matches_intrinsic():
    model, params = make_reference_network(3, 0.2, seed=5)
    scales = TimeScales()
    rng = np.random.default_rng(0)
    rows = rng.uniform(-2, 4, (3, 5))
    state = _state(rows)
    out = network_rhs(model, state, NetworkConfig(3, 0.0), scales, params)
    for i in range(3):
        np.testing.assert_allclose(
            out[i], eval_intrinsic(model, rows[i], scales, params[i]),
            rtol=0, atol=0)


def test_network_rhs_coupling_only_in_v():
    model, params = make_reference_network(4, 0.3, seed=2)
    scales = TimeScales()
    rng = np.random.default_rng(3)
    rows = rng.uniform(-2, 4, (4, 5))
    state = _state(rows)
    out0 = network_rhs(model, state, NetworkConfig(4, 0.0), scales, params)
    out5 = network_rhs(model, state, NetworkConfig(4, 5.0), scales, params)
    np.testing.assert_array_equal(out0[:, 1:], out5[:, 1:])


def test_mean_field_identity():
    # dvbar/dt equals the mean of h1 for any coupling strength
    model, params = make_reference_network(6, 0.2, seed=9)
    scales = TimeScales()
    rng = np.random.default_rng(4)
    rows = rng.uniform(-2, 4, (6, 5))
    state = _state(rows)
    for k in (0.0, 1.0, 7.5):
        out = network_rhs(model, state, NetworkConfig(6, k), scales, params)
        h1s = [model.h1(*rows[i], scales, params[i].mu) for i in range(6)]
        assert out[:, 0].mean() == pytest.approx(np.mean(h1s), rel=1e-13)


def test_heterogeneity_bound_zero_and_constants():
    model = make_reference_model()
    zero = type(model)(model_id="custom", h1=lambda v, u, x, y, z, s, mu: 0.0 * v,
                       h2=model.h2, f=model.f, g1=model.g1, g2=model.g2)
    box = StateBox((-1, -1, -1, -1, -1), (1, 1, 1, 1, 1))
    p = [OscillatorParams([0.0])]
    assert heterogeneity_bound(zero, box, p, (3, 3, 3, 3, 3)).value == 0.0

    consts = type(model)(
        model_id="custom",
        h1=lambda v, u, x, y, z, s, mu: np.broadcast_to(mu[..., 0], np.shape(v)).copy()
        if np.shape(v) else mu[..., 0],
        h2=model.h2, f=model.f, g1=model.g1, g2=model.g2)
    ps = [OscillatorParams([-2.0]), OscillatorParams([1.5])]
    hb = heterogeneity_bound(consts, box, ps, (3, 3, 3, 3, 3))
    assert hb.value == pytest.approx(2.0)


def test_heterogeneity_bound_dense_oracle():
    """Independent 10x-per-axis denser scan agrees within 5%."""
    model, params = make_reference_network(2, 0.2, seed=11)
    box = StateBox((-2.0, -16.0, 2.8, 3.0, 3.0), (-1.3, -7.0, 3.6, 4.0, 3.6))
    coarse = heterogeneity_bound(model, box, params, (4, 4, 4, 2, 2))
    # brute-force scan, written independently of the implementation
    axes = [np.linspace(box.lo[i], box.hi[i], n)
            for i, n in enumerate((40, 40, 40, 2, 2))]
    best = 0.0
    for p in params:
        V, U, X, Y, Z = np.meshgrid(*axes, indexing="ij")
        vals = np.abs(model.h1(V, U, X, Y, Z, TimeScales(), p.mu))
        best = max(best, float(vals.max()))
    assert coarse.value <= best + 1e-12
    assert abs(coarse.value - best) / best < 0.05


def test_heterogeneity_bound_monotone_refinement():
    model, params = make_reference_network(2, 0.2, seed=11)
    box = StateBox((-2.0, -16.0, 2.8, 3.0, 3.0), (-1.3, -7.0, 3.6, 4.0, 3.6))
    vals = [heterogeneity_bound(model, box, params, (n, n, n, 2, 2)).value
            for n in (3, 5, 9, 17)]
    assert all(vals[i] <= vals[i + 1] + 1e-15 for i in range(len(vals) - 1))
    bigger = StateBox((-2.5, -18.0, 2.6, 2.8, 2.8), (-1.0, -6.0, 3.8, 4.2, 3.8))
    assert heterogeneity_bound(model, bigger, params, (17, 17, 17, 2, 2)).value \
        >= vals[-1] - 1e-12


def test_make_reference_network_determinism_and_spread():
    m1, p1 = make_reference_network(5, 0.3, seed=123)
    m2, p2 = make_reference_network(5, 0.3, seed=123)
    assert all(np.array_equal(a.mu, b.mu) for a, b in zip(p1, p2))

    m3, p3 = make_reference_network(5, 0.0, seed=1)
    mu0 = m3.coefficients["mu0"]
    assert all(p.mu[0] == mu0 for p in p3)


def test_reference_spread_bound_many_seeds():
    # |mu_i - mu0| <= spread over 10^4 seeds
    spread = 0.37
    worst = 0.0
    for seed in range(10_000):
        _, ps = make_reference_network(2, spread, seed=seed)
        for p in ps:
            worst = max(worst, abs(p.mu[0]))
    assert worst <= spread


def test_network_state_validation():
    with pytest.raises(ValueError):
        NetworkState(0.0, np.zeros((3, 4)))
    with pytest.raises(ValueError):
        NetworkState(0.0, np.full((2, 5), np.nan))
