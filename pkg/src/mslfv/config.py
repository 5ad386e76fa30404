"""Experiment configuration: a sectioned TOML file with strict keys."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .model import ConfigurationError, GrowthSpec, ModelParams, default_n_max
from .pde import PdeConfig
from .simulate import SimConfig

DESK_REPLICATES = 200


@dataclass
class ModelSection:
    u: float = 0.04
    mu: float = 1e-4
    R: int = 4
    n_max: Optional[float] = None  # None: 1.05 times the largest post-event mass
    grid_len: int = 101
    boundary: str = "clip"
    d: int = 1
    growth: str = "valley"
    a: float = 14.0
    c: float = 50.0
    s: float = 50.0
    m: float = 7.0
    b: float = 1.0
    kappa: float = 8.0
    growth_table: Optional[str] = None  # CSV: header "site,<mass>,<mass>...", one row per site


@dataclass
class SimSection:
    T_end: float = 125.0
    initial_mass: float = 3.0
    initial_state: str = "all_uniform_pool"
    snapshot_path: Optional[str] = None
    T_max: int = 2000
    backend: Optional[str] = None


@dataclass
class PredictSection:
    t_max: int = 28
    rate_scale: float = 1.0
    N: float = 2.8
    delta: float = 1.0
    bc_value: float = 8.0
    tol_steady: float = 1e-10
    reaction_scale: str = "without_uVR"
    dt: Optional[float] = None


@dataclass
class AnalysisSection:
    refs: list = field(default_factory=lambda: [45, 60, 75])
    replicates: int = 2000
    window: int = 20
    qv_replicates: int = 2000
    qv_horizon: float = 1.0
    qv_burn_in: float = 20.0


@dataclass
class IOSection:
    out_dir: str = "out"
    snapshot_every: float = 0.0  # 0: final snapshots only when write_snapshots is set
    write_snapshots: bool = False


@dataclass
class RngSection:
    seed: int = 0
    workers: int = 0  # 0: machine parallelism


SECTIONS = {
    "model": ModelSection, "sim": SimSection, "predict": PredictSection,
    "analysis": AnalysisSection, "io": IOSection, "rng": RngSection,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    sim: SimSection = field(default_factory=SimSection)
    predict: PredictSection = field(default_factory=PredictSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    io: IOSection = field(default_factory=IOSection)
    rng: RngSection = field(default_factory=RngSection)

    def __post_init__(self):
        self.validate()

    # -- construction -----------------------------------------------------
    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config section(s): {sorted(unknown)}")
        parts = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name, {})
            if not isinstance(values, dict):
                raise ConfigurationError(f"[{name}] must be a table")
            allowed = {f.name for f in fields(section_cls)}
            bad = set(values) - allowed
            if bad:
                raise ConfigurationError(f"unknown key(s) in [{name}]: {sorted(bad)}")
            parts[name] = section_cls(**values)
        return cls(**parts)

    @classmethod
    def load(cls, path=None, overrides=(), preset: Optional[str] = None) -> "ExperimentConfig":
        data: dict = {}
        if path is not None:
            try:
                data = tomllib.loads(Path(path).read_text())
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if preset == "desk":
            data.setdefault("analysis", {}).setdefault("replicates", DESK_REPLICATES)
            data.setdefault("sim", {}).setdefault("T_end", 125.0)
        elif preset not in (None, "full"):
            raise ConfigurationError(f"unknown preset {preset!r}")
        for item in overrides:
            apply_override(data, item)
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def hash(self) -> str:
        """Digest of the settings that determine results (worker count excluded)."""
        d = self.to_dict()
        d["rng"].pop("workers")
        d["sim"].pop("backend")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def header_lines(self, what: str) -> list[str]:
        return [f"mslfv {__version__} {what} config_sha256={self.hash()}"]

    # -- derived objects --------------------------------------------------
    def growth_spec(self) -> GrowthSpec:
        m = self.model
        if m.growth == "custom_table":
            if not m.growth_table:
                raise ConfigurationError("custom_table growth needs model.growth_table")
            return read_growth_table(m.growth_table)
        return GrowthSpec(family=m.growth, a=m.a, c=m.c, s=m.s, m=m.m, b=m.b, kappa=m.kappa)

    def params(self) -> ModelParams:
        m = self.model
        n_max = m.n_max if m.n_max is not None else default_n_max(self.growth_spec(), m.grid_len)
        return ModelParams(u=m.u, mu=m.mu, R=m.R, n_max=n_max, grid_len=m.grid_len,
                           boundary=m.boundary, d=m.d)

    def sim_config(self) -> SimConfig:
        s = self.sim
        return SimConfig(params=self.params(), spec=self.growth_spec(), T_end=s.T_end,
                         seed=self.rng.seed, initial_mass=s.initial_mass,
                         initial_state=s.initial_state, snapshot_path=s.snapshot_path, T_max=s.T_max)

    def pde_config(self) -> PdeConfig:
        p = self.predict
        return PdeConfig(dt=p.dt, tol_steady=p.tol_steady, bc_value=p.bc_value,
                         reaction_scale=p.reaction_scale)

    def validate(self) -> None:
        a, p = self.analysis, self.predict
        if a.replicates < 1:
            raise ConfigurationError("analysis.replicates must be at least 1")
        if int(p.t_max) != p.t_max or p.t_max < 1:
            raise ConfigurationError("predict.t_max must be an integer >= 1")
        if p.N <= 0:
            raise ConfigurationError("predict.N must be positive")
        if p.delta != 1.0:
            raise ConfigurationError("predict.delta must be 1 (site grid alignment)")
        if p.rate_scale <= 0:
            raise ConfigurationError("predict.rate_scale must be positive")
        L = self.model.grid_len
        if not a.refs or any(not 0 <= int(r) < L for r in a.refs):
            raise ConfigurationError(f"analysis.refs must lie in [0, {L})")
        if self.io.snapshot_every < 0:
            raise ConfigurationError("io.snapshot_every must be non-negative")
        if self.rng.workers < 0:
            raise ConfigurationError("rng.workers must be non-negative")
        spec = self.growth_spec()
        if spec.family == "custom_table" and len(spec.table_values) != L:
            raise ConfigurationError("growth table rows must match model.grid_len")
        self.params().check(spec)  # growth assumptions under the ceiling
        self.sim_config()  # simulation settings
        self.pde_config()


def apply_override(data: dict, item: str) -> None:
    """Apply ``section.key=value``; the value is parsed as a TOML literal when
    possible and taken as a bare string otherwise."""
    if "=" not in item or "." not in item.split("=", 1)[0]:
        raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
    path, raw = item.split("=", 1)
    section, key = path.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    data.setdefault(section, {})[key] = value


def read_growth_table(path) -> GrowthSpec:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    masses = [float(v) for v in lines[0].split(",")[1:]]
    values = [[float(v) for v in ln.split(",")[1:]] for ln in lines[1:]]
    return GrowthSpec.custom(masses, values)


def with_overrides(cfg: ExperimentConfig, **sections: Any) -> ExperimentConfig:
    """Copy of ``cfg`` with per-section field replacements, e.g. sim={"T_end": 0}."""
    parts = {name: replace(getattr(cfg, name), **sections.get(name, {})) for name in SECTIONS}
    return ExperimentConfig(**parts)
