"""Deterministic limits of the population size: explicit-Euler
reaction-diffusion, its stationary profile, and the pre-limit
deterministic approximation driven by the averaging operators."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ConfigurationError, GrowthSpec, ModelParams
from .operators import apply_growth_operator, apply_jump_operator

REACTION_SCALES = ("without_uVR", "with_uVR")


class InstabilityError(RuntimeError):
    pass


def stable_dt(params: ModelParams, spacing: float = 1.0, diffusion: Optional[float] = None) -> float:
    """0.9 h^2 / (2 D), the explicit-scheme bound for the diffusion constant D."""
    D = params.diffusion if diffusion is None else diffusion
    return 0.9 * spacing ** 2 / (2.0 * D)


@dataclass
class PdeConfig:
    dt: Optional[float] = None
    tol_steady: float = 1e-10
    bc_value: float = 8.0
    reaction_scale: str = "without_uVR"
    max_steps: int = 2_000_000
    spacing: float = 1.0
    diffusion: Optional[float] = None

    def __post_init__(self):
        if self.reaction_scale not in REACTION_SCALES:
            raise ConfigurationError(f"reaction_scale must be one of {REACTION_SCALES}")
        if self.tol_steady <= 0:
            raise ConfigurationError("tol_steady must be positive")

    def resolve_dt(self, params: ModelParams) -> float:
        limit = stable_dt(params, self.spacing, self.diffusion)
        if self.dt is None:
            return 0.5 * limit
        if self.dt > limit:
            raise ConfigurationError(f"dt={self.dt} exceeds the stability bound {limit:.4g}")
        return self.dt


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def at(self, t: float) -> np.ndarray:
        """State at time ``t`` by linear interpolation between stored states."""
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return self.states[0]
        if i >= self.times.size:
            return self.states[-1]
        t0, t1 = self.times[i - 1], self.times[i]
        w = (t - t0) / (t1 - t0)
        return (1 - w) * self.states[i - 1] + w * self.states[i]


def _laplacian(n, boundary, spacing):
    lap = np.empty_like(n)
    if boundary == "wrap":
        lap[:] = np.roll(n, 1) + np.roll(n, -1) - 2.0 * n
    else:
        lap[1:-1] = n[2:] + n[:-2] - 2.0 * n[1:-1]
        lap[0] = lap[-1] = 0.0
    return lap / spacing ** 2


def _coords(L, spacing, spec):
    x = np.arange(L) * spacing
    return np.rint(x).astype(int) if spec.family == "custom_table" else x


def reaction_diffusion_rhs(n, spec: GrowthSpec, params: ModelParams, cfg: PdeConfig) -> np.ndarray:
    """D Laplacian(n) + c r_x(n) n with c = 1 or u V_R; zero on Dirichlet ends."""
    D = params.diffusion if cfg.diffusion is None else cfg.diffusion
    scale = 1.0 if cfg.reaction_scale == "without_uVR" else params.u * params.ball_volume
    rhs = D * _laplacian(n, params.boundary, cfg.spacing) \
        + scale * spec.evaluate(_coords(n.size, cfg.spacing, spec), n) * n
    if params.boundary != "wrap":
        rhs[0] = rhs[-1] = 0.0
    return rhs


def evolve_reaction_diffusion(n0, spec: GrowthSpec, params: ModelParams, cfg: PdeConfig,
                              T: float, save_every: Optional[float] = None) -> Trajectory:
    """Explicit Euler for dn/dt = D Lap n + c r(n) n.

    Under ``clip`` the end sites are pinned to ``cfg.bc_value``; under ``wrap``
    the grid is periodic. States are stored every ``save_every`` time units
    (default: only the start and the end).
    """
    n = np.array(n0, dtype=float)
    if np.any(n <= 0):
        raise ValueError("initial profile must be positive")
    if params.boundary != "wrap":
        n[0] = n[-1] = cfg.bc_value
    dt = cfg.resolve_dt(params)
    steps = int(np.ceil(T / dt - 1e-12)) if T > 0 else 0
    dt = T / steps if steps else dt
    every = None if save_every is None else max(1, int(round(save_every / dt)))
    times, states = [0.0], [n.copy()]
    peak = np.max(np.abs(n))
    for i in range(1, steps + 1):
        n = n + dt * reaction_diffusion_rhs(n, spec, params, cfg)
        new_peak = np.max(np.abs(n))
        if not np.isfinite(new_peak) or new_peak > 2.0 * peak:
            raise InstabilityError(f"explicit step {i} blew up (max |n| {peak:.4g} -> {new_peak:.4g})")
        peak = new_peak
        if (every and i % every == 0) or i == steps:
            times.append(i * dt)
            states.append(n.copy())
    return Trajectory(np.array(times), np.array(states))


@dataclass
class SteadyState:
    profile: np.ndarray
    residual: float
    converged: bool
    steps: int
    time: float
    config: dict = field(default_factory=dict)


def stationarity_residual(n, spec: GrowthSpec, params: ModelParams, cfg: PdeConfig) -> float:
    """Max-norm of D (n(x+1) + n(x-1) - 2 n(x)) + c r_x(n(x)) n(x) over interior sites."""
    rhs = reaction_diffusion_rhs(np.asarray(n, dtype=float), spec, params, cfg)
    interior = rhs if params.boundary == "wrap" else rhs[1:-1]
    return float(np.max(np.abs(interior)))


def steady_state(spec: GrowthSpec, params: ModelParams, cfg: Optional[PdeConfig] = None,
                 n0=None) -> SteadyState:
    """March from n = bc_value until the max-norm time derivative is below
    ``tol_steady``; flags (rather than raises) a non-converged result."""
    cfg = cfg or PdeConfig()
    L = int(round((params.grid_len - 1) / cfg.spacing)) + 1
    n = np.full(L, cfg.bc_value) if n0 is None else np.array(n0, dtype=float)
    dt = cfg.resolve_dt(params)
    converged = False
    step = 0
    rate = np.inf
    while step < cfg.max_steps:
        rhs = reaction_diffusion_rhs(n, spec, params, cfg)
        rate = float(np.max(np.abs(rhs)))
        if not np.isfinite(rate):
            raise InstabilityError(f"steady-state march diverged at step {step}")
        if rate < cfg.tol_steady:
            converged = True
            break
        n = n + dt * rhs
        step += 1
    return SteadyState(
        profile=n, residual=stationarity_residual(n, spec, params, cfg), converged=converged,
        steps=step, time=step * dt,
        config={"dt": dt, "tol_steady": cfg.tol_steady, "bc_value": cfg.bc_value,
                "reaction_scale": cfg.reaction_scale},
    )


def growth_bound(spec: GrowthSpec, grid_len: int) -> float:
    """Upper bound on |r_x(n)| over sites and masses n >= 0."""
    if spec.family == "custom_table":
        _, values = spec.table(grid_len)
        return max(float(np.max(np.abs(values))), 1.0)
    return max(float(np.max(np.abs(spec.offsets(grid_len)))), 1.0)


def evolve_deterministic_m(m0, spec: GrowthSpec, params: ModelParams, delta: float, T: float,
                           dt: Optional[float] = None, spacing: Optional[float] = None,
                           save_every: Optional[float] = None) -> Trajectory:
    """Explicit Euler for dm/dt = L m + R_m m with the averaging operators at
    scale ``delta`` (self-adjoint, so they act on m directly).

    The default step is half the bound set jointly by the jump rate
    u V_R / delta^2 and the largest growth rate u V_R |r|.
    """
    m = np.array(m0, dtype=float)
    spacing = delta if spacing is None else spacing
    uV = params.u * params.ball_volume
    limit = 1.0 / (uV / delta ** 2 + uV * growth_bound(spec, params.grid_len))
    if dt is None:
        dt = 0.5 * limit
    steps = int(np.ceil(T / dt - 1e-12)) if T > 0 else 0
    dt = T / steps if steps else dt
    every = None if save_every is None else max(1, int(round(save_every / dt)))
    times, states = [0.0], [m.copy()]
    peak = np.max(np.abs(m))
    for i in range(1, steps + 1):
        m = m + dt * (apply_jump_operator(m, params, delta, spacing)
                      + apply_growth_operator(m, m, spec, params, delta, spacing))
        new_peak = np.max(np.abs(m))
        if not np.isfinite(new_peak) or new_peak > 2.0 * peak:
            raise InstabilityError(f"explicit step {i} blew up")
        peak = new_peak
        if (every and i % every == 0) or i == steps:
            times.append(i * dt)
            states.append(m.copy())
    return Trajectory(np.array(times), np.array(states))


def write_profile(path, profile, header: dict) -> None:
    lines = ["# " + " ".join(f"{k}={v}" for k, v in header.items()), "site,mass"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(profile)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile(path) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([float(ln.split(",")[1]) for ln in rows[1:]])
