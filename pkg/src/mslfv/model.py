"""Domain types shared by every part of the package: parameters, growth
functions, the typed population field and its type ledger."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

BOUNDARIES = ("clip", "wrap")
GROWTH_FAMILIES = ("valley", "logistic_const", "custom_table")

# Marker returned by parent sampling when the uniform (fresh-mutant) pool is drawn.
UNIFORM = -1


class ConfigurationError(ValueError):
    """Raised for invalid model parameters or growth specifications."""


@dataclass(frozen=True)
class GrowthSpec:
    """Spatial growth function r_x(n).

    ``valley``:          r_x(n) = max(min(a|x-c|/s, m) + b - n, -1)
    ``logistic_const``:  r_x(n) = max(kappa - n, -1)
    ``custom_table``:    per-site values on a shared mass grid, linearly
                         interpolated in n (flat outside the grid), clamped at -1.
    """

    family: str = "valley"
    a: float = 14.0
    c: float = 50.0
    s: float = 50.0
    m: float = 7.0
    b: float = 1.0
    kappa: float = 8.0
    table_masses: Optional[tuple] = None
    table_values: Optional[tuple] = None

    def __post_init__(self):
        if self.family not in GROWTH_FAMILIES:
            raise ConfigurationError(f"unknown growth family {self.family!r}")
        if self.family == "valley" and self.s <= 0:
            raise ConfigurationError("valley scale s must be positive")
        if self.family == "custom_table":
            if self.table_masses is None or self.table_values is None:
                raise ConfigurationError("custom_table needs table_masses and table_values")
            masses = np.asarray(self.table_masses, dtype=float)
            if masses.ndim != 1 or masses.size < 1 or np.any(np.diff(masses) <= 0):
                raise ConfigurationError("table_masses must be strictly increasing")
            values = np.asarray(self.table_values, dtype=float)
            if values.ndim != 2 or values.shape[1] != masses.size:
                raise ConfigurationError("table_values must have one row per site, one column per mass")

    @classmethod
    def custom(cls, masses: Sequence[float], values) -> "GrowthSpec":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return cls(
            family="custom_table",
            table_masses=tuple(float(v) for v in masses),
            table_values=tuple(tuple(float(v) for v in row) for row in values),
        )

    @classmethod
    def zero(cls, grid_len: int) -> "GrowthSpec":
        """r == 0 everywhere (mass-conserving reproduction)."""
        return cls.custom([0.0], np.zeros((grid_len, 1)))

    def offsets(self, grid_len: int) -> np.ndarray:
        """Per-site g_x for the closed-form families, where r_x(n) = max(g_x - n, -1)."""
        x = np.arange(grid_len, dtype=float)
        if self.family == "valley":
            return np.minimum(self.a * np.abs(x - self.c) / self.s, self.m) + self.b
        if self.family == "logistic_const":
            return np.full(grid_len, float(self.kappa))
        raise ConfigurationError("custom_table has no closed-form offsets")

    def table(self, grid_len: int) -> tuple[np.ndarray, np.ndarray]:
        masses = np.asarray(self.table_masses, dtype=float)
        values = np.asarray(self.table_values, dtype=float)
        if values.shape[0] < grid_len:
            raise ConfigurationError(
                f"custom_table covers {values.shape[0]} sites, grid has {grid_len}")
        return masses, values[:grid_len]

    def evaluate(self, x, n, grid_len: Optional[int] = None):
        """Vectorised r_x(n); ``x`` and ``n`` broadcast against each other."""
        x = np.asarray(x)
        n = np.asarray(n, dtype=float)
        if self.family == "custom_table":
            masses = np.asarray(self.table_masses, dtype=float)
            values = np.asarray(self.table_values, dtype=float)
            if np.any(x < 0) or np.any(x >= values.shape[0]):
                raise ConfigurationError("custom_table has no entry for the requested site")
            xb, nb = np.broadcast_arrays(x, n)
            out = np.empty(xb.shape, dtype=float)
            for site in np.unique(xb):
                sel = xb == site
                out[sel] = np.interp(nb[sel], masses, values[int(site)])
            return np.maximum(out, -1.0)
        if self.family == "valley":
            g = np.minimum(self.a * np.abs(x - self.c) / self.s, self.m) + self.b
        else:
            g = np.full(np.shape(x), float(self.kappa))
        return np.maximum(g - n, -1.0)


def growth_eval(spec: GrowthSpec, x: int, n: float) -> float:
    if n < 0:
        raise ValueError("mass must be non-negative")
    return float(spec.evaluate(x, n))


@dataclass(frozen=True)
class ModelParams:
    u: float = 0.04
    mu: float = 0.0001
    R: int = 4
    n_max: float = 21.2625
    grid_len: int = 101
    boundary: str = "clip"
    d: int = 1

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise ConfigurationError("impact u must lie in (0, 1)")
        if self.mu < 0:
            raise ConfigurationError("mutation rate must be non-negative")
        if int(self.R) != self.R or self.R < 1:
            raise ConfigurationError("event radius R must be an integer >= 1")
        if self.n_max <= 0:
            raise ConfigurationError("n_max must be positive")
        if self.grid_len < 2 * self.R + 1:
            raise ConfigurationError("grid_len must be at least 2R + 1")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"boundary must be one of {BOUNDARIES}")

    @property
    def ball_volume(self) -> int:
        """V_R in the site-count convention (2R + 1 in one dimension)."""
        return 2 * self.R + 1

    @property
    def diffusion(self) -> float:
        """u V_R R^2 / (d + 2)."""
        return self.u * self.ball_volume * self.R ** 2 / (self.d + 2)

    def check(self, spec: GrowthSpec) -> "AssumptionReport":
        """Raise ConfigurationError unless ``spec`` satisfies the growth assumptions
        under this ceiling."""
        report = validate_assumptions(spec, self)
        if not report.passed:
            raise ConfigurationError(report.message)
        return report


def default_n_max(spec: GrowthSpec, grid_len: int = 101, margin: float = 1.05) -> float:
    """``margin`` times the largest post-event mass (1 + r_x(n)) n over a mass scan."""
    # Scan wide enough to find the maximum for any family clamped at -1 beyond g + 1.
    if spec.family == "custom_table":
        masses, _ = spec.table(grid_len)
        top = 2.0 * max(masses.max(), 1.0) + 2.0
    else:
        top = 2.0 * max(spec.offsets(grid_len).max(), 0.0) + 2.0
    n = np.linspace(0.0, top, 8193)
    worst = 0.0
    for x in range(grid_len):
        worst = max(worst, float(np.max((1.0 + spec.evaluate(x, n)) * n)))
    return margin * worst


@dataclass
class AssumptionReport:
    passed: bool
    min_growth: float
    max_post_mass: float
    argmax_post_mass: tuple[int, float]
    min_growth_at_zero: float
    violation: Optional[tuple[int, float]] = None
    message: str = ""


def validate_assumptions(spec: GrowthSpec, params: ModelParams, resolution: int = 2048) -> AssumptionReport:
    """Scan n in {0, dn, ..., n_max} at every site (dn = n_max / resolution)."""
    n = np.linspace(0.0, params.n_max, resolution + 1)
    x = np.arange(params.grid_len)
    r = spec.evaluate(x[:, None], n[None, :])
    post = (1.0 + r) * n[None, :]

    i_max = np.unravel_index(np.argmax(post), post.shape)
    report = AssumptionReport(
        passed=True,
        min_growth=float(r.min()),
        max_post_mass=float(post[i_max]),
        argmax_post_mass=(int(i_max[0]), float(n[i_max[1]])),
        min_growth_at_zero=float(r[:, 0].min()),
    )

    checks = [
        (r < -1.0, "growth below -1"),
        (post >= params.n_max, "(1 + r) n reaches n_max"),
    ]
    for bad, what in checks:
        if bad.any():
            xi, ni = np.argwhere(bad)[0]
            report.passed = False
            report.violation = (int(xi), float(n[ni]))
            report.message = f"{what} at site {xi}, mass {n[ni]:.6g}"
            return report
    if report.min_growth_at_zero <= 0:
        xi = int(np.argmin(r[:, 0]))
        report.passed = False
        report.violation = (xi, 0.0)
        report.message = f"growth not positive near zero mass at site {xi}"
    return report


def ball(x: int, params: ModelParams) -> np.ndarray:
    """Site indices within distance R of ``x``, in increasing offset order."""
    offsets = np.arange(x - params.R, x + params.R + 1)
    if params.boundary == "wrap":
        return offsets % params.grid_len
    return offsets[(offsets >= 0) & (offsets < params.grid_len)]


def ball_sizes(params: ModelParams) -> np.ndarray:
    return np.array([ball(x, params).size for x in range(params.grid_len)])


def ball_average(values: np.ndarray, R: int, boundary: str) -> np.ndarray:
    """Average of ``values`` over the radius-R ball around every site (site-count normalised)."""
    values = np.asarray(values, dtype=float)
    L = values.shape[0]
    if boundary == "wrap":
        padded = np.concatenate([values[L - R:], values, values[:R]]) if R < L else \
            values[np.arange(-R, L + R) % L]
        csum = np.concatenate([[0.0], np.cumsum(padded)])
        return (csum[2 * R + 1:] - csum[:-(2 * R + 1)]) / (2 * R + 1)
    csum = np.concatenate([[0.0], np.cumsum(values)])
    lo = np.clip(np.arange(L) - R, 0, L)
    hi = np.clip(np.arange(L) + R + 1, 0, L)
    return (csum[hi] - csum[lo]) / (hi - lo)


class TypeLedger:
    """Registry of explicit type ids.

    A type is alive while it holds mass at one or more sites; ``site_count``
    tracks on how many. Capacity is the number of explicit type slots.
    """

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ConfigurationError("type ledger capacity must be >= 1")
        self.capacity = int(capacity)
        self.site_count = np.zeros(self.capacity, dtype=np.int32)

    @property
    def n_alive(self) -> int:
        return int(np.count_nonzero(self.site_count))

    def alive(self) -> np.ndarray:
        return np.flatnonzero(self.site_count)

    def copy(self) -> "TypeLedger":
        out = TypeLedger(self.capacity)
        out.site_count[:] = self.site_count
        return out


class PopulationField:
    """Per-site masses over explicit types plus a uniform pool.

    Storage is dense per site (``mass[y, k]``) with a compact list of the type
    ids present at each site (``ids[y, :count[y]]``) and its inverse
    (``slot[y, k]``, -1 when absent), so the hot loop only touches present types.
    ``n`` is the site total, kept as its own array.
    """

    def __init__(self, grid_len: int, capacity: int = 2000):
        self.ledger = TypeLedger(capacity)
        L, T = int(grid_len), self.ledger.capacity
        self.n = np.zeros(L)
        self.uniform = np.zeros(L)
        self.last_touch = np.zeros(L)
        self.mass = np.zeros((L, T))
        self.ids = np.zeros((L, T), dtype=np.int32)
        self.slot = np.full((L, T), -1, dtype=np.int32)
        self.count = np.zeros(L, dtype=np.int32)

    @property
    def grid_len(self) -> int:
        return self.n.shape[0]

    @property
    def capacity(self) -> int:
        return self.ledger.capacity

    @classmethod
    def all_uniform(cls, grid_len: int, mass: float, capacity: int = 2000, t0: float = 0.0):
        f = cls(grid_len, capacity)
        f.n[:] = mass
        f.uniform[:] = mass
        f.last_touch[:] = t0
        return f

    @classmethod
    def one_type_per_site(cls, grid_len: int, mass: float, capacity: int = 2000, t0: float = 0.0):
        if capacity < grid_len:
            raise ConfigurationError("one_type_per_site needs capacity >= grid_len")
        f = cls(grid_len, capacity)
        f.last_touch[:] = t0
        for y in range(grid_len):
            f.set_site(y, {y: mass}, 0.0)
        return f

    @classmethod
    def monomorphic(cls, grid_len: int, mass: float, type_id: int = 0, capacity: int = 2000, t0: float = 0.0):
        f = cls(grid_len, capacity)
        f.last_touch[:] = t0
        for y in range(grid_len):
            f.set_site(y, {type_id: mass}, 0.0)
        return f

    def set_site(self, y: int, types: dict, uniform: float) -> None:
        """Overwrite site ``y`` with the given type masses and uniform mass."""
        for k in list(self.type_ids(y)):
            self._remove(y, int(k))
        for k, m in types.items():
            if m < 0:
                raise ValueError("masses must be non-negative")
            if m > 0:
                self._insert(y, int(k))
                self.mass[y, k] = m
        self.uniform[y] = uniform
        self.n[y] = uniform + sum(types.values())

    def _insert(self, y: int, k: int) -> None:
        c = self.count[y]
        self.ids[y, c] = k
        self.slot[y, k] = c
        self.count[y] = c + 1
        self.ledger.site_count[k] += 1

    def _remove(self, y: int, k: int) -> None:
        j = self.slot[y, k]
        last = self.count[y] - 1
        moved = self.ids[y, last]
        self.ids[y, j] = moved
        self.slot[y, moved] = j
        self.slot[y, k] = -1
        self.count[y] = last
        self.mass[y, k] = 0.0
        self.ledger.site_count[k] -= 1

    def type_ids(self, y: int) -> np.ndarray:
        return self.ids[y, :self.count[y]]

    def type_masses(self, y: int) -> dict:
        return {int(k): float(self.mass[y, k]) for k in self.type_ids(y)}

    def global_mass(self) -> np.ndarray:
        """Total mass per type id across all sites (as currently stored)."""
        return self.mass.sum(axis=0)

    def copy(self) -> "PopulationField":
        out = PopulationField.__new__(PopulationField)
        out.ledger = self.ledger.copy()
        for name in ("n", "uniform", "last_touch", "mass", "ids", "slot", "count"):
            setattr(out, name, getattr(self, name).copy())
        return out

    def check_consistency(self, rtol: float = 1e-9) -> None:
        """Assert the bookkeeping invariants (used by tests and debugging)."""
        parts = self.uniform + self.mass.sum(axis=1)
        assert np.all(self.mass >= 0) and np.all(self.uniform >= 0)
        assert np.allclose(parts, self.n, rtol=rtol, atol=0), "site totals out of sync"
        counts = np.zeros(self.capacity, dtype=np.int64)
        for y in range(self.grid_len):
            present = self.type_ids(y)
            assert len(set(present.tolist())) == present.size
            assert np.all(self.slot[y, present] == np.arange(present.size))
            assert np.count_nonzero(self.slot[y] >= 0) == present.size
            assert np.count_nonzero(self.mass[y]) <= present.size
            counts[present] += 1
        assert np.array_equal(counts, self.ledger.site_count)


def local_mean(field: PopulationField, x: int, params: ModelParams) -> float:
    return float(field.n[ball(x, params)].mean())


def with_n_max(params: ModelParams, spec: GrowthSpec) -> ModelParams:
    return replace(params, n_max=default_n_max(spec, params.grid_len))
