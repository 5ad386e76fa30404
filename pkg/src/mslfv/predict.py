"""Wright-Malecot predictions of the probability of identity from lineage
transition kernels."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .operators import lineage_generator

CLAMP = 1e-14


def matrix_exponential(A, scale: float = 1.0, max_terms: int = 60) -> np.ndarray:
    """exp(scale * A) by scaling and squaring with a truncated Taylor series."""
    A = np.asarray(A, dtype=float) * scale
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix_exponential needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix_exponential needs finite entries")
    norm = np.max(np.sum(np.abs(A), axis=1)) if A.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm)))) if norm > 0 else 0
    B = A / 2.0 ** s
    result = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, max_terms + 1):
        term = term @ B / k
        result = result + term
        if np.max(np.abs(term)) < 1e-16 * np.max(np.abs(result)):
            break
    for _ in range(s):
        result = result @ result
    return result


def _clamp(P):
    low = P.min() if P.size else 0.0
    if low < -1e-10:
        raise FloatingPointError(f"transition matrix entry {low:.3g} is not a probability")
    return np.where(P < 0.0, 0.0, P)


@dataclass
class LineageKernel:
    Q: np.ndarray
    P: np.ndarray
    K: list
    D: np.ndarray


@dataclass
class ThetaMatrix:
    values: np.ndarray
    t_max: int
    mu: float
    rate_scale: float
    profile_hash: str

    def write(self, path) -> None:
        header = (f"# profile_sha256={self.profile_hash} mu={self.mu!r} "
                  f"t_max={self.t_max} rate_scale={self.rate_scale!r}")
        L = self.values.shape[0]
        lines = [header, "site," + ",".join(str(j) for j in range(L))]
        for i in range(L):
            lines.append(f"{i}," + ",".join(f"{v:.17g}" for v in self.values[i]))
        Path(path).write_text("\n".join(lines) + "\n")


def read_theta(path) -> np.ndarray:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([[float(v) for v in ln.split(",")[1:]] for ln in rows[1:]])


def profile_hash(n) -> str:
    return hashlib.sha256(np.ascontiguousarray(n, dtype=float).tobytes()).hexdigest()[:16]


def build_kernel(n, mu: float, t_max: int = 28, rate_scale: float = 1.0,
                 boundary: str = "clip") -> tuple[LineageKernel, ThetaMatrix]:
    """Theta = sum_{t=1}^{t_max} exp(-2 mu t) K_t D(n) K_t^T with K_t = P^t,
    P = exp(rate_scale Q) and D(n) = diag(1 / (n + 1))."""
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    n = np.asarray(n, dtype=float)
    Q = lineage_generator(n, boundary)
    P = _clamp(matrix_exponential(Q, rate_scale))
    D = 1.0 / (n + 1.0)
    K = [np.eye(n.size)]
    theta = np.zeros((n.size, n.size))
    for t in range(1, t_max + 1):
        Kt = _clamp(K[-1] @ P)
        K.append(Kt)
        theta += math.exp(-2.0 * mu * t) * (Kt * D) @ Kt.T
    theta = 0.5 * (theta + theta.T)
    return LineageKernel(Q, P, K, D), ThetaMatrix(theta, t_max, mu, rate_scale, profile_hash(n))


def theta_time_dependent(times, profiles, mu: float, s0: float, t: float, rate: float = 1.0,
                         prefactor: float = 1.0, boundary: str = "clip",
                         substeps: int = 1) -> np.ndarray:
    """prefactor * int_{s0}^{t} exp(-2 mu (t - s)) sum_z G ϑ1(z) G ϑ2(z) / (n_s(z) + 1) ds
    for point sampling densities at every pair of sites.

    Lineage laws are propagated backwards from time ``t`` over the given time
    grid (restricted to [s0, t]); each step uses the generator frozen at the
    midpoint profile and is applied exactly via the matrix exponential. The
    time integral is the trapezoid rule on the same grid.
    """
    times = np.asarray(times, dtype=float)
    profiles = np.asarray(profiles, dtype=float)
    if profiles.ndim == 1:
        profiles = np.broadcast_to(profiles, (times.size, profiles.size))
    if t <= s0:
        return np.zeros((profiles.shape[1],) * 2)

    def profile_at(s):
        i = int(np.searchsorted(times, s))
        if i == 0:
            return profiles[0]
        if i >= times.size:
            return profiles[-1]
        w = (s - times[i - 1]) / (times[i] - times[i - 1])
        return (1 - w) * profiles[i - 1] + w * profiles[i]

    grid = times[(times > s0) & (times < t)]
    grid = np.unique(np.concatenate([[s0], grid, [t]]))
    if substeps > 1:
        grid = np.unique(np.concatenate([np.linspace(a, b, substeps + 1)
                                         for a, b in zip(grid[:-1], grid[1:])]))
    L = profiles.shape[1]
    G = np.eye(L)  # row l: law of the lineage sampled at l, currently at time s

    def integrand(s, G):
        n = profile_at(s)
        return math.exp(-2.0 * mu * (t - s)) * (G / (n + 1.0)) @ G.T

    out = np.zeros((L, L))
    s_hi = grid[-1]
    f_hi = integrand(s_hi, G)
    for s_lo in grid[-2::-1]:
        h = s_hi - s_lo
        n_mid = profile_at(0.5 * (s_lo + s_hi))
        step = _clamp(matrix_exponential(lineage_generator(n_mid, boundary, rate), h))
        G = G @ step
        f_lo = integrand(s_lo, G)
        out += 0.5 * h * (f_lo + f_hi)
        s_hi, f_hi = s_lo, f_lo
    out = 0.5 * (out + out.T)
    return prefactor * out


def align_prediction(theta, N: float = 2.8, delta: float = 1.0):
    """Predicted raw probability of identity, theta / (N delta)."""
    if delta != 1.0:
        raise ValueError("alignment is only defined on coinciding site grids (delta = 1)")
    return np.asarray(theta, dtype=float) / (N * delta)


def scale_simulated(P, N: float = 2.8, delta: float = 1.0):
    """Simulated identity on the prediction scale, N delta P (inverse of align_prediction)."""
    if delta != 1.0:
        raise ValueError("alignment is only defined on coinciding site grids (delta = 1)")
    return np.asarray(P, dtype=float) * (N * delta)


def best_alignment(theta_values, simulated_mean) -> Optional[float]:
    """N minimising sum (log(theta / N) - log P)^2 over entries with P > 0."""
    theta_values = np.asarray(theta_values, dtype=float)
    simulated_mean = np.asarray(simulated_mean, dtype=float)
    ok = (simulated_mean > 0) & (theta_values > 0)
    if not ok.any():
        return None
    return float(np.exp(np.mean(np.log(theta_values[ok]) - np.log(simulated_mean[ok]))))
