"""Experiment configuration: TOML/JSON ingestion, validation, canonical form.

The canonical form is a plain dict with sorted keys and only JSON types;
hashing it (sha256) identifies a run.  Parsing is lossless: parse ->
serialize -> parse yields an equal structure.
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

__all__ = ["ExperimentConfig", "load_config", "config_hash", "DEFAULT_CONFIG_TOML"]


@dataclass
class ModelBlock:
    id: str = "reference"
    seed: int = 42
    heterogeneity_spread: float = 0.15
    eps_ts: float = 0.05
    delta: float = 0.1
    coefficients: dict = field(default_factory=dict)


@dataclass
class NetworkBlock:
    n_osc: int = 10
    k: float = 1.0


@dataclass
class IntegratorBlock:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = 0.0          # 0 means unrestricted
    initial_step: float = 0.0      # 0 means automatic
    method: str = "dopri5"
    event_tolerance: float = 1e-9


@dataclass
class GeometryBlock:
    region_x: List[float] = field(default_factory=lambda: [2.75, 4.43])
    region_y: List[float] = field(default_factory=lambda: [2.70, 4.00])
    region_z: List[float] = field(default_factory=lambda: [3.00, 3.60])
    fast_grid: List[int] = field(default_factory=lambda: [69, 3, 3])
    slow_grid: List[int] = field(default_factory=lambda: [81, 3])
    canard_window_y: List[float] = field(default_factory=lambda: [3.552, 4.00])
    canard_window_z: List[float] = field(default_factory=lambda: [3.00, 3.60])
    canard_index: int = 0
    v_window: List[float] = field(default_factory=lambda: [-4.0, 3.0])


@dataclass
class SectionsBlock:
    # x-offsets as fractions of the canard-fold gap; y/z as absolute widths.
    # Zero fractions fall back to the proportional default rule.
    delta_x_frac: float = 0.02
    delta_y: float = 0.0558
    delta_z: float = 5.0
    delta_x_prime_frac: float = 0.01
    delta_y_prime: float = 0.25
    delta_z_prime: float = 5.0


@dataclass
class LingerBlock:
    empirical: bool = True
    start_margin: float = 0.25
    z_start: float = 3.3
    horizon_factor: float = 2.5    # uncoupled run length in units of 1/(eps*delta)


@dataclass
class AnalysisBlock:
    eps_tol: float = 1e-3
    w0: float = 0.0                # 0 means measured from the initial state
    het_bound: float = 0.0         # 0 means measured on the trajectory box
    m_grid: List[int] = field(default_factory=lambda: [17, 17, 17, 5, 5])
    branch_v_tol: float = 0.3
    envelope_ks: List[float] = field(default_factory=list)


@dataclass
class InitialBlock:
    mode: str = "entry_section"    # "entry_section" | "explicit"
    v_jitter: float = 0.05
    states: List[List[float]] = field(default_factory=list)


@dataclass
class SimulateBlock:
    horizon_factor: float = 1.15   # run length in units of t_linger_min
    t_final: float = 0.0           # explicit override when > 0


@dataclass
class SweepBlock:
    parameter: str = "k"
    grid: List[float] = field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0,
                                                       8.0, 16.0, 32.0])


@dataclass
class OutputBlock:
    directory: str = "runs/reference"
    write_binary: bool = True


_BLOCKS = {
    "model": ModelBlock, "network": NetworkBlock, "integrator": IntegratorBlock,
    "geometry": GeometryBlock, "sections": SectionsBlock, "linger": LingerBlock,
    "analysis": AnalysisBlock, "initial": InitialBlock, "simulate": SimulateBlock,
    "sweep": SweepBlock, "output": OutputBlock,
}


@dataclass
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    network: NetworkBlock = field(default_factory=NetworkBlock)
    integrator: IntegratorBlock = field(default_factory=IntegratorBlock)
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    sections: SectionsBlock = field(default_factory=SectionsBlock)
    linger: LingerBlock = field(default_factory=LingerBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    simulate: SimulateBlock = field(default_factory=SimulateBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    @staticmethod
    def from_dict(data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration root must be a table/object")
        unknown = set(data) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        kwargs = {}
        for name, cls in _BLOCKS.items():
            block = data.get(name, {})
            if not isinstance(block, dict):
                raise ConfigError(f"config block {name!r} must be a table")
            fields = {f for f in cls.__dataclass_fields__}
            bad = set(block) - fields
            if bad:
                raise ConfigError(f"unknown keys in [{name}]: {sorted(bad)}")
            try:
                kwargs[name] = cls(**block)
            except TypeError as exc:
                raise ConfigError(f"invalid [{name}] block: {exc}") from exc
        cfg = ExperimentConfig(**kwargs)
        cfg.validate()
        return cfg

    def validate(self):
        m, n = self.model, self.network
        if m.id != "reference":
            raise ConfigError(f"unknown model id {m.id!r}; custom models are "
                              "added in code against the evaluator interface")
        if not (0 < m.eps_ts < 1 and 0 < m.delta < 1):
            raise ConfigError("scales eps_ts and delta must lie in (0,1)")
        if m.heterogeneity_spread < 0:
            raise ConfigError("heterogeneity_spread must be >= 0")
        if n.n_osc < 1:
            raise ConfigError("network.n_osc must be >= 1")
        if n.k < 0:
            raise ConfigError("network.k must be >= 0")
        if self.integrator.method not in ("dopri5", "radau"):
            raise ConfigError("integrator.method must be 'dopri5' or 'radau'")
        for name, pair in (("region_x", self.geometry.region_x),
                           ("region_y", self.geometry.region_y),
                           ("region_z", self.geometry.region_z),
                           ("canard_window_y", self.geometry.canard_window_y),
                           ("canard_window_z", self.geometry.canard_window_z)):
            if len(pair) != 2 or not pair[0] < pair[1]:
                raise ConfigError(f"geometry.{name} must be an increasing pair")
        if len(self.geometry.fast_grid) != 3 or min(self.geometry.fast_grid) < 1:
            raise ConfigError("geometry.fast_grid needs three positive counts")
        if len(self.geometry.slow_grid) != 2 or min(self.geometry.slow_grid) < 2:
            raise ConfigError("geometry.slow_grid needs two counts >= 2")
        if self.analysis.eps_tol <= 0:
            raise ConfigError("analysis.eps_tol must be > 0")
        if self.initial.mode not in ("entry_section", "explicit"):
            raise ConfigError("initial.mode must be 'entry_section' or 'explicit'")
        if self.initial.mode == "explicit":
            if len(self.initial.states) != n.n_osc:
                raise ConfigError("initial.states must list one 5-vector per oscillator")
            if any(len(r) != 5 for r in self.initial.states):
                raise ConfigError("initial.states rows must have 5 entries")
        if self.sweep.parameter != "k":
            raise ConfigError("only sweep.parameter = 'k' is supported")
        if sorted(self.sweep.grid) != list(self.sweep.grid):
            raise ConfigError("sweep.grid must be sorted ascending")

    def to_canonical_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), sort_keys=True))

    def to_json(self) -> str:
        return json.dumps(self.to_canonical_dict(), indent=2, sort_keys=True)

    def replace(self, **overrides) -> "ExperimentConfig":
        """New config with dotted-path overrides, e.g. network__k=2.0."""
        data = self.to_canonical_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            block, _, leaf = key.partition("__")
            if block not in data or leaf not in data[block]:
                raise ConfigError(f"unknown override {key!r}")
            data[block][leaf] = value
        return ExperimentConfig.from_dict(data)


def load_config(source) -> ExperimentConfig:
    """Load TOML (primary) or JSON from a path, file object or mapping."""
    if isinstance(source, ExperimentConfig):
        return source
    if isinstance(source, dict):
        return ExperimentConfig.from_dict(source)
    path = Path(source)
    raw = path.read_bytes()
    if path.suffix.lower() == ".json":
        data = json.loads(raw.decode("utf-8"))
    else:
        try:
            data = _toml.loads(raw.decode("utf-8"))
        except _toml.TOMLDecodeError:
            try:
                data = json.loads(raw.decode("utf-8"))
            except json.JSONDecodeError:
                raise ConfigError(f"{path} is neither valid TOML nor JSON")
    return ExperimentConfig.from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(cfg.to_canonical_dict(), sort_keys=True,
                         separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


DEFAULT_CONFIG_TOML = """\
# Reference network experiment: ten heterogeneous bursters, coupled run
# verified against the sufficient synchronization condition.

[model]
id = "reference"
seed = 42
heterogeneity_spread = 0.15
eps_ts = 0.05
delta = 0.1

[network]
n_osc = 10
k = 1.0

[integrator]
rtol = 1e-8
atol = 1e-10
method = "dopri5"

[geometry]
region_x = [2.75, 4.43]
region_y = [2.70, 4.00]
region_z = [3.00, 3.60]
fast_grid = [69, 3, 3]
slow_grid = [81, 3]
canard_window_y = [3.552, 4.00]
canard_window_z = [3.00, 3.60]

[sections]
delta_x_frac = 0.02
delta_y = 0.0558
delta_z = 5.0
delta_x_prime_frac = 0.01
delta_y_prime = 0.25
delta_z_prime = 5.0

[linger]
empirical = true
start_margin = 0.25
z_start = 3.3

[analysis]
eps_tol = 1e-3

[initial]
mode = "entry_section"
v_jitter = 0.05

[simulate]
horizon_factor = 1.15

[sweep]
parameter = "k"
grid = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]

[output]
directory = "runs/reference"
"""
