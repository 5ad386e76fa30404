"""Discrete averaging operators, the lineage generator and their
consistency diagnostics.

All operators act on site functions over a working grid of spacing
``spacing`` (in site units). At scale ``delta`` the event ball has radius
``delta * R`` which must be a whole number of grid steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GrowthSpec, ModelParams, ball_average


def ball_steps(params: ModelParams, delta: float, spacing: float) -> int:
    k = delta * params.R / spacing
    steps = int(round(k))
    if steps < 1 or abs(k - steps) > 1e-9:
        raise ValueError(f"ball radius delta*R/spacing = {k} is not a positive integer")
    return steps


def ball_second_moment(steps: int) -> float:
    """Variance of an offset drawn uniformly from {-k, ..., k}: k (k + 1) / 3."""
    return steps * (steps + 1) / 3.0


def jump_diffusion(params: ModelParams) -> float:
    """Diffusion constant the double-average operator converges to:
    u V_R R (R + 1) / 3, the discrete-ball analogue of u V_R R^2 / (d + 2)."""
    return params.u * params.ball_volume * ball_second_moment(params.R)


def apply_jump_operator(phi, params: ModelParams, delta: float = 1.0, spacing: float = None) -> np.ndarray:
    """u V_R delta^-2 (double ball average of phi - phi).

    ``spacing`` defaults to ``delta``: the grid of the process at scale delta,
    where the ball spans R steps.
    """
    phi = np.asarray(phi, dtype=float)
    spacing = delta if spacing is None else spacing
    k = ball_steps(params, delta, spacing)
    double = ball_average(ball_average(phi, k, params.boundary), k, params.boundary)
    return params.u * params.ball_volume * (double - phi) / delta ** 2


def local_growth(n, spec: GrowthSpec, params: ModelParams, delta: float = 1.0,
                 spacing: float = None) -> np.ndarray:
    """r_x(nbar(x)) at every grid point (growth coordinates in site units)."""
    n = np.asarray(n, dtype=float)
    spacing = delta if spacing is None else spacing
    k = ball_steps(params, delta, spacing)
    nbar = ball_average(n, k, params.boundary)
    coords = np.arange(n.size) * spacing
    if spec.family == "custom_table":
        coords = np.rint(coords).astype(int)
    return spec.evaluate(coords, nbar)


def apply_growth_operator(phi, n, spec: GrowthSpec, params: ModelParams, delta: float = 1.0,
                          spacing: float = None) -> np.ndarray:
    """u V_R times the ball average of r_x(nbar(x)) times the ball average of phi."""
    phi = np.asarray(phi, dtype=float)
    spacing = delta if spacing is None else spacing
    k = ball_steps(params, delta, spacing)
    r = local_growth(n, spec, params, delta, spacing)
    inner = r * ball_average(phi, k, params.boundary)
    return params.u * params.ball_volume * ball_average(inner, k, params.boundary)


def lineage_generator(n, boundary: str = "clip", rate: float = 1.0) -> np.ndarray:
    """Tridiagonal generator Q(i, i+-1) = n(i+-1)/n(i), rows summing to zero.

    Under ``clip`` the end rows keep only their in-grid neighbour.
    """
    n = np.asarray(n, dtype=float)
    if np.any(~np.isfinite(n)) or np.any(n <= 0):
        raise ValueError("lineage generator needs a strictly positive population profile")
    L = n.size
    Q = np.zeros((L, L))
    idx = np.arange(L)
    if boundary == "wrap":
        right, left = (idx + 1) % L, (idx - 1) % L
        np.add.at(Q, (idx, right), n[right] / n)
        np.add.at(Q, (idx, left), n[left] / n)
    else:
        Q[idx[:-1], idx[1:]] = n[1:] / n[:-1]
        Q[idx[1:], idx[:-1]] = n[:-1] / n[1:]
    Q *= rate
    off = Q.copy()
    off[idx, idx] = 0.0
    Q[idx, idx] = -off.sum(axis=1)
    return Q


@dataclass
class DriftReport:
    max_identity_error: float
    errors: list
    spacings: list
    slope: float


def generator_ratio_form(n, f) -> np.ndarray:
    """[n(i+1)(f(i+1) - f(i)) + n(i-1)(f(i-1) - f(i))] / n(i) on interior sites."""
    n = np.asarray(n, dtype=float)
    f = np.asarray(f, dtype=float)
    return (n[2:] * (f[2:] - f[1:-1]) + n[:-2] * (f[:-2] - f[1:-1])) / n[1:-1]


def fit_slope(hs, errors) -> float:
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def drift_consistency_check(n_fn, f_fn, df_fn, d2f_fn, dn_fn, length: float = 1.0,
                            spacings=(1 / 16, 1 / 32, 1 / 64, 1 / 128)) -> DriftReport:
    """Check the lineage generator against f'' + 2 (n'/n) f'.

    On each grid of spacing h over [0, length], (Q f)(i) must equal the ratio
    form exactly (up to round-off), and (Q f)/h^2 must approach the continuum
    operator at interior sites with error O(h^2).
    """
    identity_err = 0.0
    errors = []
    for h in spacings:
        x = np.arange(0.0, length + h / 2, h)
        n, f = n_fn(x), f_fn(x)
        Q = lineage_generator(n)
        Qf = (Q @ f)[1:-1]
        identity_err = max(identity_err, float(np.max(np.abs(Qf - generator_ratio_form(n, f)))))
        xi = x[1:-1]
        target = d2f_fn(xi) + 2.0 * dn_fn(xi) / n_fn(xi) * df_fn(xi)
        errors.append(float(np.max(np.abs(Qf / h ** 2 - target))))
    return DriftReport(identity_err, errors, list(spacings), fit_slope(spacings, errors))


@dataclass
class ConvergenceReport:
    deltas: list
    errors: list
    slope: float


def jump_operator_convergence(params: ModelParams, length: float = None,
                              deltas=(1 / 4, 1 / 8, 1 / 16, 1 / 32)) -> ConvergenceReport:
    """Max-norm error of the jump operator against D phi'' for
    phi(x) = sin(2 pi x / length) on a periodic grid of spacing delta."""
    from dataclasses import replace

    params = replace(params, boundary="wrap")
    length = float(params.grid_len if length is None else length)
    D = jump_diffusion(params)
    errors = []
    for delta in deltas:
        npts = length / delta
        if abs(npts - round(npts)) > 1e-9:
            raise ValueError("length must be a multiple of every delta")
        x = np.arange(int(round(npts))) * delta
        w = 2 * np.pi / length
        phi = np.sin(w * x)
        exact = -D * w ** 2 * phi
        errors.append(float(np.max(np.abs(apply_jump_operator(phi, params, delta) - exact))))
    return ConvergenceReport(list(deltas), errors, fit_slope(deltas, errors))


def qv_formula(n, phi, params: ModelParams, spec: GrowthSpec, N: float = 1.0, delta: float = 1.0) -> float:
    """Rate of the predictable quadratic variation of <n, phi> at a snapshot.

    (u^2 / delta^(d+2)) sum_x [ sum_{z in B(x)} ((1 + delta^2 r_x) nbar(x) - n(z)) phi(z) ]^2
    / ((nbar(x) + 1) N), with unit cell volume.
    """
    n = np.asarray(n, dtype=float)
    phi = np.asarray(phi, dtype=float)
    bracket, nbar = _event_brackets(n, phi, params, spec, delta)
    return float(params.u ** 2 / delta ** (params.d + 2) * np.sum(bracket ** 2 / ((nbar + 1.0) * N)))


def drift_rate(n, phi, params: ModelParams, spec: GrowthSpec) -> float:
    """Expected rate of change of <n, phi> from reproduction events."""
    bracket, _ = _event_brackets(np.asarray(n, float), np.asarray(phi, float), params, spec, 1.0)
    return float(params.u * bracket.sum())


def compensator_rate(n, phi, params: ModelParams, spec: GrowthSpec) -> float:
    """<n, (L + R_n) phi> at delta = 1 (equals drift_rate under wrap)."""
    n = np.asarray(n, dtype=float)
    return float(np.dot(n, apply_jump_operator(phi, params, 1.0, 1.0)
                        + apply_growth_operator(phi, n, spec, params, 1.0, 1.0)))


def _event_brackets(n, phi, params, spec, delta):
    """Per event centre x: sum over the ball of ((1 + delta^2 r_x) nbar - n(z)) phi(z)."""
    k = params.R
    V = _ball_counts(n.size, k, params.boundary)
    nbar = ball_average(n, k, params.boundary)
    x = np.arange(n.size)
    if spec.family == "custom_table":
        r = np.array([spec.evaluate(int(i), nb) for i, nb in zip(x, nbar)], dtype=float)
    else:
        r = spec.evaluate(x, nbar)
    sum_phi = ball_average(phi, k, params.boundary) * V
    sum_nphi = ball_average(n * phi, k, params.boundary) * V
    return (1.0 + delta ** 2 * r) * nbar * sum_phi - sum_nphi, nbar


def _ball_counts(L, R, boundary):
    if boundary == "wrap":
        return np.full(L, 2 * R + 1, dtype=float)
    i = np.arange(L)
    return (np.minimum(i + R, L - 1) - np.maximum(i - R, 0) + 1).astype(float)
