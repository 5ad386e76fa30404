"""Event-driven simulation of the discretised spatial Lambda-Fleming-Viot
process with density-dependent events and lazy mutation.

Candidate events arrive as a Poisson stream of rate L (n_max + 1); a candidate
centred at x is kept when w < (nbar(x) + 1) / (n_max + 1). Mutation is a
deterministic flow applied per site only when the site is read.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import _pykernel, backend
from .model import (
    UNIFORM,
    ConfigurationError,
    GrowthSpec,
    ModelParams,
    PopulationField,
    validate_assumptions,
)

INITIAL_STATES = ("all_uniform_pool", "one_type_per_site", "snapshot_file")
FOLD_FRACTION = 1e-15
BATCH = 1 << 18

LOG_DTYPE = np.dtype([
    ("time", "f8"), ("center", "f8"), ("accepted", "f8"), ("parent", "f8"),
    ("from_uniform", "f8"), ("u_prime", "f8"), ("added_mass", "f8"), ("evicted_mass", "f8"),
])


class AssumptionBreach(RuntimeError):
    """A site total exceeded n_max after an event."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class SimConfig:
    params: ModelParams = dc_field(default_factory=ModelParams)
    spec: GrowthSpec = dc_field(default_factory=GrowthSpec)
    T_end: float = 125.0
    seed: int = 0
    initial_mass: float = 3.0
    initial_state: str = "all_uniform_pool"
    snapshot_path: Optional[str] = None
    T_max: int = 2000

    def __post_init__(self):
        if self.T_end < 0:
            raise ConfigurationError("T_end must be non-negative")
        if not 0 < self.initial_mass <= self.params.n_max:
            raise ConfigurationError("initial_mass must lie in (0, n_max]")
        if self.initial_state not in INITIAL_STATES:
            raise ConfigurationError(f"initial_state must be one of {INITIAL_STATES}")
        if self.initial_state == "snapshot_file" and not self.snapshot_path:
            raise ConfigurationError("snapshot_file initial state needs snapshot_path")


@dataclass(frozen=True)
class EventRecord:
    time: float
    center: int
    accepted: bool
    parent: Optional[int]
    from_uniform: bool
    u_prime: float
    added_mass: float
    evicted_mass: float


class PreparedModel:
    """Flat numeric view of (params, spec) consumed by the event loop."""

    def __init__(self, params: ModelParams, spec: GrowthSpec):
        L = params.grid_len
        self.u = float(params.u)
        self.mu = float(params.mu)
        self.R = int(params.R)
        self.wrap = params.boundary == "wrap"
        self.n_max = float(params.n_max)
        self.rate = L * (self.n_max + 1.0)
        self.fold = FOLD_FRACTION * self.n_max
        if spec.family == "custom_table":
            self.gmode = 1
            masses, values = spec.table(L)
            self.goff = np.zeros(L)
            self.tmass = np.ascontiguousarray(masses, dtype=float)
            self.tval = np.ascontiguousarray(values, dtype=float)
        else:
            self.gmode = 0
            self.goff = np.ascontiguousarray(spec.offsets(L), dtype=float)
            self.tmass = np.zeros(1)
            self.tval = np.zeros((L, 1))

    def growth(self, x: int, nbar: float) -> float:
        return _pykernel.growth_at(self, x, nbar)


class EventLog:
    def __init__(self, capacity: int = 1 << 16):
        self.data = np.zeros((capacity, len(LOG_DTYPE.names)))
        self.count = np.zeros(1, dtype=np.int64)
        self.chunks: list[np.ndarray] = []

    def flush(self):
        c = int(self.count[0])
        if c:
            self.chunks.append(self.data[:c].copy())
        self.count[0] = 0

    def table(self) -> np.ndarray:
        self.flush()
        rows = np.concatenate(self.chunks) if self.chunks else np.zeros((0, len(LOG_DTYPE.names)))
        return np.ascontiguousarray(rows).view(LOG_DTYPE).reshape(-1)


class Tracker:
    """Integrates the compensator and the quadratic-variation rate of <n, phi>
    along a path. ``acc`` = [int drift dt, int qv dt, drift rate now, qv rate now]."""

    def __init__(self, field: PopulationField, model: PreparedModel, phi, t0: float):
        L = field.grid_len
        self.phi = np.ascontiguousarray(phi, dtype=float)
        if self.phi.shape != (L,):
            raise ValueError("phi must have one value per site")
        self.drift_term = np.zeros(L)
        self.qv_term = np.zeros(L)
        for x in range(L):
            self.drift_term[x], self.qv_term[x] = _pykernel.center_term(
                field, model, self.phi, x, L, model.wrap)
        self.acc = np.array([0.0, 0.0, self.drift_term.sum(), self.qv_term.sum()])
        self.t_last = np.array([t0])

    @property
    def drift_integral(self) -> float:
        return float(self.acc[0])

    @property
    def qv_integral(self) -> float:
        return float(self.acc[1])


def stream(seed: int, replicate: Optional[int] = None) -> np.random.Generator:
    """Counter-based (Philox) stream keyed by (seed,) or (seed, replicate)."""
    key = () if replicate is None else (int(replicate),)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def initial_field(config: SimConfig) -> PopulationField:
    L = config.params.grid_len
    if config.initial_state == "all_uniform_pool":
        return PopulationField.all_uniform(L, config.initial_mass, config.T_max)
    if config.initial_state == "one_type_per_site":
        return PopulationField.one_type_per_site(L, config.initial_mass, config.T_max)
    f, _, _ = read_snapshot(config.snapshot_path)
    if f.grid_len != L:
        raise ConfigurationError("snapshot grid does not match grid_len")
    return f


class Simulation:
    """Stateful driver around a backend event loop."""

    def __init__(self, field: PopulationField, params: ModelParams, spec: GrowthSpec,
                 rng: np.random.Generator, t0: float = 0.0, log_events: bool = False,
                 phi=None, backend_name: Optional[str] = None):
        if field.grid_len != params.grid_len:
            raise ConfigurationError("field and params disagree on grid length")
        self.field = field
        self.params = params
        self.spec = spec
        self.model = PreparedModel(params, spec)
        self.rng = rng
        self.backend_name = backend_name
        self.kernel = backend.get(backend_name)
        self.clock = np.array([float(t0), math.nan])
        self.uniforms = np.zeros(0)
        self.upos = 0
        self.log = EventLog() if log_events else None
        self.track = Tracker(field, self.model, phi, t0) if phi is not None else None

    @property
    def time(self) -> float:
        return float(self.clock[0])

    def advance_to(self, t_stop: float) -> None:
        if t_stop < self.time:
            raise ValueError("cannot run backwards in time")
        while True:
            status, self.upos, site = self.kernel.advance(
                self.field, self.model, self.clock, self.uniforms, self.upos,
                float(t_stop), self.log, self.track)
            if status == _pykernel.DONE:
                return
            if status == _pykernel.REFILL:
                self.uniforms = np.concatenate([self.uniforms[self.upos:], self.rng.random(BATCH)])
                self.upos = 0
            elif status == _pykernel.LOGFULL:
                self.log.flush()
            else:
                raise AssumptionBreach(
                    f"site {site} exceeded n_max={self.params.n_max} at t={self.time}",
                    snapshot=self.field.copy())

    def sync_all(self, t: Optional[float] = None) -> None:
        t = self.time if t is None else t
        sync_mutation(self.field, np.arange(self.field.grid_len), t, self.params.mu, self.model.fold,
                      backend_name=self.backend_name)

    def events(self) -> np.ndarray:
        return self.log.table() if self.log is not None else np.zeros(0, dtype=LOG_DTYPE)


@dataclass
class SimResult:
    field: PopulationField
    t: float
    events: np.ndarray
    observe_times: list
    profiles: list
    snapshots: list
    drift_integral: Optional[float] = None
    qv_integral: Optional[float] = None

    def event_records(self) -> list[EventRecord]:
        return [
            EventRecord(
                time=float(e["time"]), center=int(e["center"]), accepted=bool(e["accepted"]),
                parent=int(e["parent"]) if e["accepted"] else None,
                from_uniform=bool(e["from_uniform"]), u_prime=float(e["u_prime"]),
                added_mass=float(e["added_mass"]), evicted_mass=float(e["evicted_mass"]))
            for e in self.events
        ]


def run(config: SimConfig, *, rng: Optional[np.random.Generator] = None,
        field: Optional[PopulationField] = None, observe: Iterable[float] = (),
        keep_snapshots: bool = False, log_events: bool = False, phi=None,
        check_assumptions: bool = True, backend_name: Optional[str] = None) -> SimResult:
    """Simulate ``config`` from time 0 to ``T_end``.

    ``observe`` lists intermediate times at which the site totals (and, with
    ``keep_snapshots``, full mutation-synchronised fields) are recorded.
    Setting ``check_assumptions=False`` runs growth specs outside the
    assumption scan (e.g. r == 0); the per-event n_max guard still applies.
    """
    params, spec = config.params, config.spec
    if check_assumptions:
        report = validate_assumptions(spec, params)
        if not report.passed:
            raise ConfigurationError(report.message)
    if field is None:
        field = initial_field(config)
    if rng is None:
        rng = stream(config.seed)
    t0 = float(field.last_touch.max()) if field.last_touch.size else 0.0
    sim = Simulation(field, params, spec, rng, t0=t0, log_events=log_events, phi=phi,
                     backend_name=backend_name)
    times, profiles, snaps = [], [], []
    for t_obs in sorted(float(t) for t in observe):
        if t_obs > config.T_end:
            break
        sim.advance_to(t_obs)
        sim.sync_all(t_obs)
        times.append(t_obs)
        profiles.append(field.n.copy())
        if keep_snapshots:
            snaps.append(field.copy())
    sim.advance_to(config.T_end)
    sim.sync_all(config.T_end)
    return SimResult(
        field=field, t=sim.time, events=sim.events(), observe_times=times,
        profiles=profiles, snapshots=snaps,
        drift_integral=sim.track.drift_integral if sim.track is not None else None,
        qv_integral=sim.track.qv_integral if sim.track is not None else None,
    )


# Single-step operations. These are the reference semantics the event loop
# implements; they are exposed for tests and for stepping a field by hand.

def sync_mutation(field: PopulationField, sites, t_now: float, mu: float,
                  fold: Optional[float] = None, backend_name: Optional[str] = None) -> PopulationField:
    """Advance the mutation flow at ``sites`` to ``t_now``.

    Explicit type masses decay by exp(-mu dt); the lost mass joins the
    uniform pool, so site totals are unchanged. Types that fall below
    ``fold`` (default 1e-15 of the largest site total) are folded into the pool.
    """
    if fold is None:
        fold = FOLD_FRACTION * max(float(field.n.max()), 1.0)
    sites = np.ascontiguousarray(np.fromiter(sites, dtype=np.intp) if not isinstance(sites, np.ndarray)
                                 else sites, dtype=np.intp)
    if sites.size and t_now < field.last_touch[sites].max():
        bad = int(sites[np.argmax(field.last_touch[sites])])
        raise ValueError(f"site {bad} was synchronised after t={t_now}")
    backend.get(backend_name).sync_sites(field, sites, float(t_now), float(mu), float(fold))
    return field


def sample_parent(field: PopulationField, sites, rng: np.random.Generator) -> int:
    """Draw a parent type id (or ``UNIFORM``) proportional to mass in ``sites``."""
    sites = [int(y) for y in sites]
    if sum(field.n[y] for y in sites) <= 0:
        raise ValueError("ball holds no mass")
    return _pykernel.sample_in_ball(field, sites, float(rng.random()))


def allocate_type(field: PopulationField, t_now: float = 0.0, mu: float = 0.0) -> tuple[int, float]:
    """Return a type id for a new lineage, evicting the globally smallest
    type (lowest id on ties) into the uniform pool when the ledger is full.
    Returns (id, evicted mass)."""
    n_alive = field.ledger.n_alive
    k, evicted, _ = _pykernel.allocate(field, float(t_now), float(mu),
                                       FOLD_FRACTION * max(float(field.n.max()), 1.0), n_alive)
    return int(k), float(evicted)


def apply_replacement(field: PopulationField, x: int, parent_id: int, params: ModelParams,
                      spec: GrowthSpec, t: float = 0.0) -> EventRecord:
    """Apply one accepted reproduction event centred at ``x`` with parent ``parent_id``."""
    from .model import ball

    model = PreparedModel(params, spec)
    sites = [int(y) for y in ball(x, params)]
    nb = sum(field.n[y] for y in sites) / len(sites)
    uprime = params.u / (nb + 1.0)
    add = uprime * (1.0 + model.growth(x, nb)) * nb
    f = 1.0 - uprime
    for y in sites:
        for k in field.type_ids(y):
            field.mass[y, k] *= f
        field.uniform[y] *= f
        if field.slot[y, parent_id] < 0:
            field._insert(y, parent_id)
        field.mass[y, parent_id] += add
        field.n[y] = f * field.n[y] + add
        if field.n[y] > params.n_max:
            raise AssumptionBreach(f"site {y} exceeded n_max", snapshot=field.copy())
    return EventRecord(time=t, center=int(x), accepted=True, parent=int(parent_id),
                       from_uniform=False, u_prime=uprime, added_mass=add, evicted_mass=0.0)


# Snapshot files: a header line, then one (site, type, mass) row per entry;
# type is an integer id, UNIFORM, or TOTAL (the stored site total).

def write_snapshot(path, field: PopulationField, t: float, params: Optional[ModelParams] = None) -> None:
    header = {"t": float(t), "grid_len": field.grid_len, "capacity": field.capacity}
    if params is not None:
        header["params"] = asdict(params)
    lines = ["# mslfv-snapshot " + json.dumps(header, sort_keys=True), "site,type,mass"]
    for y in range(field.grid_len):
        lines.append(f"{y},TOTAL,{field.n[y]:.17g}")
        lines.append(f"{y},UNIFORM,{field.uniform[y]:.17g}")
        for k in field.type_ids(y):
            lines.append(f"{y},{int(k)},{field.mass[y, k]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple[PopulationField, float, dict]:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# mslfv-snapshot "):
        raise ConfigurationError(f"{path}: not a snapshot file")
    header = json.loads(text[0][len("# mslfv-snapshot "):])
    f = PopulationField(header["grid_len"], header["capacity"])
    t = float(header["t"])
    f.last_touch[:] = t
    for line in text[2:]:
        if not line.strip():
            continue
        y_s, k_s, m_s = line.split(",")
        y, m = int(y_s), float(m_s)
        if k_s == "TOTAL":
            f.n[y] = m
        elif k_s == "UNIFORM":
            f.uniform[y] = m
        else:
            k = int(k_s)
            f._insert(y, k)
            f.mass[y, k] = m
    return f, t, header


__all__ = [
    "UNIFORM", "AssumptionBreach", "SimConfig", "EventRecord", "SimResult", "Simulation",
    "run", "stream", "initial_field", "sync_mutation", "sample_parent", "allocate_type",
    "apply_replacement", "write_snapshot", "read_snapshot",
]
