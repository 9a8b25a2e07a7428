import pytest

from canardlab.config import ExperimentConfig
from canardlab.dynamics import TimeScales, make_reference_network
from canardlab.pipeline import compute_geometry, run_experiment


def small_config(**over):
    """Desk-scale config: fewer oscillators, no empirical linger."""
    base = {
        "model": {"seed": 7, "heterogeneity_spread": 0.1},
        "network": {"n_osc": 4, "k": 2.0},
        "linger": {"empirical": False},
    }
    for block, vals in over.items():
        base.setdefault(block, {}).update(vals)
    return ExperimentConfig.from_dict(base)


@pytest.fixture(scope="session")
def single_oscillator():
    """Reference model, one homogeneous oscillator, full geometry."""
    model, params = make_reference_network(1, 0.0, seed=1)
    cfg = ExperimentConfig()
    scales = TimeScales()
    geos = compute_geometry(model, params, cfg, scales)
    return {"model": model, "params": params[0], "geo": geos[0],
            "scales": scales, "cfg": cfg}


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """Shared N=10 coupled reference run (k=1, default scales).

    Tight integrator tolerances keep the dense-output error well below the
    finite-difference truncation scale of the variance-identity checks.
    """
    out = tmp_path_factory.mktemp("refrun")
    cfg = ExperimentConfig.from_dict({
        "model": {"seed": 42, "heterogeneity_spread": 0.15},
        "network": {"n_osc": 10, "k": 1.0},
        "integrator": {"rtol": 1e-10, "atol": 1e-12},
        "initial": {"v_jitter": 0.03},
        "linger": {"empirical": False},
    })
    art = run_experiment(cfg, out_dir=out)
    return {"cfg": cfg, "artifact": art, "out": out}
