"""canardlab: a numerical laboratory for synchronization in networks of
coupled three-time-scale oscillators with canard-type slow passages.

Core surface:

- :mod:`canardlab.dynamics` -- network types, right-hand sides, heterogeneity bound
- :mod:`canardlab.integrate` -- adaptive integration with dense output and events
- :mod:`canardlab.manifolds` -- critical-manifold charts, folds, canard/jump points
- :mod:`canardlab.linger` -- Poincare sections and linger times
- :mod:`canardlab.analysis` -- synchronization error, threshold, envelope checks
- :mod:`canardlab.pipeline` -- experiment orchestration and persistence
- :mod:`canardlab.service` -- FastAPI application wrapping the pipeline
- :mod:`canardlab.cli` -- thin HTTP client command line
"""

__version__ = "0.1.0"

from .dynamics import (TimeScales, OscillatorParams, ModelDefinition,
                       NetworkConfig, NetworkState, make_reference_model,
                       make_reference_network)
from .analysis import coupling_threshold, gronwall_envelope, variance

__all__ = [
    "__version__", "TimeScales", "OscillatorParams", "ModelDefinition",
    "NetworkConfig", "NetworkState", "make_reference_model",
    "make_reference_network", "coupling_threshold", "gronwall_envelope",
    "variance",
]
