"""Probability-of-identity estimators, replicate statistics and the
quadratic-variation diagnostic."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import GrowthSpec, ModelParams, PopulationField
from .operators import qv_formula

IDENTITY_COLUMNS = ["ref_site", "x", "mean", "median", "p25", "p75", "p05", "p95",
                    "n_replicates", "scale"]


def identity_point(field: PopulationField, l1: int, l2: int) -> float:
    """Chance that individuals drawn at sites l1 and l2 share an explicit type.

    The uniform pool never contributes. The field must be mutation-synchronised.
    """
    n1, n2 = field.n[l1], field.n[l2]
    if n1 <= 0 or n2 <= 0:
        raise ValueError("identity needs positive mass at both sites")
    shared = np.intersect1d(field.type_ids(l1), field.type_ids(l2))
    return float(np.sum(field.mass[l1, shared] * field.mass[l2, shared]) / (n1 * n2))


def identity_rows(field: PopulationField, refs: Sequence[int]) -> np.ndarray:
    """identity_point(ref, x) for every ref in ``refs`` and every site x."""
    refs = np.asarray(refs, dtype=int)
    if np.any(field.n <= 0):
        raise ValueError("identity needs positive mass at every site")
    return (field.mass[refs] @ field.mass.T) / (field.n[refs, None] * field.n[None, :])


def identity_numerator(field: PopulationField, psi1, psi2) -> float:
    """sum_{z1, z2} psi1(z1) psi2(z2) sum_k rho(z1, k) rho(z2, k)."""
    a = np.asarray(psi1, dtype=float) @ field.mass
    b = np.asarray(psi2, dtype=float) @ field.mass
    return float(a @ b)


def identity_weighted(field: PopulationField, psi1, psi2) -> float:
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    if np.any(psi1 < 0) or np.any(psi2 < 0):
        raise ValueError("sampling weights must be non-negative")
    den = float(psi1 @ field.n) * float(psi2 @ field.n)
    if den <= 0:
        raise ValueError("sampling weights do not overlap the population")
    return identity_numerator(field, psi1, psi2) / den


@dataclass
class IdentityTable:
    refs: list
    mean: np.ndarray
    median: np.ndarray
    p25: np.ndarray
    p75: np.ndarray
    p05: np.ndarray
    p95: np.ndarray
    n_replicates: int
    scale: str = "raw"

    def scaled(self, factor: float, scale: str) -> "IdentityTable":
        f = float(factor)
        return replace(self, mean=self.mean * f, median=self.median * f, p25=self.p25 * f,
                       p75=self.p75 * f, p05=self.p05 * f, p95=self.p95 * f, scale=scale)

    def rows(self):
        for i, ref in enumerate(self.refs):
            for x in range(self.mean.shape[1]):
                yield {
                    "ref_site": int(ref), "x": x, "mean": self.mean[i, x],
                    "median": self.median[i, x], "p25": self.p25[i, x], "p75": self.p75[i, x],
                    "p05": self.p05[i, x], "p95": self.p95[i, x],
                    "n_replicates": self.n_replicates, "scale": self.scale,
                }

    def write(self, path, header_lines: Sequence[str] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(IDENTITY_COLUMNS)
            for row in self.rows():
                w.writerow([_fmt(row[c]) for c in IDENTITY_COLUMNS])

    @classmethod
    def read(cls, path) -> "IdentityTable":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        rows = list(csv.DictReader(lines))
        refs = sorted({int(r["ref_site"]) for r in rows}, key=[int(r["ref_site"]) for r in rows].index)
        L = max(int(r["x"]) for r in rows) + 1
        arrays = {c: np.full((len(refs), L), np.nan) for c in ("mean", "median", "p25", "p75", "p05", "p95")}
        for r in rows:
            i = refs.index(int(r["ref_site"]))
            for c in arrays:
                arrays[c][i, int(r["x"])] = float(r[c])
        return cls(refs=refs, n_replicates=int(rows[0]["n_replicates"]), scale=rows[0]["scale"], **arrays)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def replicate_stats(samples, refs: Sequence[int]) -> IdentityTable:
    """Mean, median and 25/75, 5/95 percentiles (linear interpolation between
    order statistics) over the replicate axis of ``samples[rep, ref, x]``."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 3 or samples.shape[0] < 1:
        raise ValueError("samples must be shaped (replicates, refs, sites)")
    q = np.percentile(samples, [50, 25, 75, 5, 95], axis=0, method="linear")
    return IdentityTable(
        refs=list(refs), mean=samples.mean(axis=0), median=q[0], p25=q[1], p75=q[2],
        p05=q[3], p95=q[4], n_replicates=samples.shape[0],
    )


@dataclass
class QVReport:
    variance: float
    predicted: float
    predicted_pathwise: float
    ratio: float
    replicates: int
    horizon: float
    mean_increment: float


def qv_diagnostic(params: ModelParams, spec: GrowthSpec, phi, field0: PopulationField,
                  horizon: float = 1.0, replicates: int = 2000, seed: int = 0,
                  checkpoints: int = 10, check_assumptions: bool = True,
                  backend_name: Optional[str] = None) -> QVReport:
    """Compare the empirical variance of the compensated increment of <n, phi>
    with the integrated quadratic-variation rate.

    Each replicate restarts from a copy of ``field0``. The compensator
    (drift) is integrated exactly along every path by the event loop; the
    prediction integrates ``qv_formula`` (trapezoid over ``checkpoints``
    intervals) along the replicate-mean profile. The per-path integral of the
    same rate is reported alongside.
    """
    from .simulate import SimConfig, run, stream, sync_mutation

    phi = np.asarray(phi, dtype=float)
    times = np.linspace(0.0, horizon, checkpoints + 1)[1:-1]
    cfg = SimConfig(params=params, spec=spec, T_end=horizon, initial_mass=min(params.n_max, float(field0.n.mean())))
    field0 = field0.copy()
    sync_mutation(field0, range(field0.grid_len), float(field0.last_touch.max()), params.mu)
    field0.last_touch[:] = 0.0  # the mutation flow is autonomous, so restart the clock
    start = float(field0.n @ phi)
    Y = np.empty(replicates)
    pathwise = np.empty(replicates)
    profiles = np.zeros((times.size + 2, field0.grid_len))
    for k in range(replicates):
        res = run(cfg, rng=stream(seed, k), field=field0.copy(), observe=times,
                  phi=phi, check_assumptions=check_assumptions, backend_name=backend_name)
        Y[k] = float(res.field.n @ phi) - start - res.drift_integral
        pathwise[k] = res.qv_integral
        profiles[1:-1] += np.array(res.profiles) if res.profiles else 0.0
        profiles[-1] += res.field.n
    profiles /= replicates
    profiles[0] = field0.n
    grid = np.concatenate([[0.0], times, [horizon]])
    rates = np.array([qv_formula(p, phi, params, spec) for p in profiles])
    predicted = float(np.sum(0.5 * (rates[1:] + rates[:-1]) * np.diff(grid)))
    variance = float(np.mean(Y ** 2))
    return QVReport(
        variance=variance, predicted=predicted, predicted_pathwise=float(pathwise.mean()),
        ratio=variance / predicted if predicted > 0 else float("nan"),
        replicates=replicates, horizon=horizon, mean_increment=float(Y.mean()),
    )
