"""Experiment orchestration: replicate fan-out, ordered reduction and the
plot-ready CSV artifacts behind each CLI subcommand."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .analysis import IdentityTable, identity_rows, qv_diagnostic, replicate_stats
from .config import ExperimentConfig
from .model import ConfigurationError
from .operators import drift_consistency_check, jump_operator_convergence, lineage_generator
from .pde import steady_state, write_profile
from .predict import align_prediction, best_alignment, build_kernel
from .simulate import run, stream, write_snapshot


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (float, np.floating)):
        return "NA" if np.isnan(v) else f"{float(v):.17g}"
    return str(v)


def write_csv(path, header_lines, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return list(csv.DictReader(lines))


def n_workers(cfg: ExperimentConfig) -> int:
    return cfg.rng.workers or os.cpu_count() or 1


# ---------------------------------------------------------------- simulate

@dataclass
class ReplicateOutput:
    index: int
    profile: np.ndarray
    identity: np.ndarray  # (refs, sites)


def run_replicate(cfg: ExperimentConfig, k: int, snapshot_dir: Optional[str] = None) -> ReplicateOutput:
    """One replicate on stream (master seed, k); independent of scheduling."""
    sim_cfg = cfg.sim_config()
    every = cfg.io.snapshot_every
    observe = list(np.arange(every, sim_cfg.T_end, every)) if every > 0 and snapshot_dir else []
    res = run(sim_cfg, rng=stream(cfg.rng.seed, k), observe=observe,
              keep_snapshots=bool(observe), backend_name=cfg.sim.backend)
    if snapshot_dir:
        for t, snap in zip(res.observe_times, res.snapshots):
            write_snapshot(Path(snapshot_dir) / f"rep{k:05d}_t{t:g}.csv", snap, t, sim_cfg.params)
        write_snapshot(Path(snapshot_dir) / f"rep{k:05d}_final.csv", res.field, res.t, sim_cfg.params)
    return ReplicateOutput(k, res.field.n.copy(), identity_rows(res.field, cfg.analysis.refs))


def run_replicates(cfg: ExperimentConfig, snapshot_dir: Optional[str] = None,
                   workers: Optional[int] = None) -> list[ReplicateOutput]:
    """Fan replicates out over a worker pool; results come back in index order."""
    workers = workers or n_workers(cfg)
    R = cfg.analysis.replicates
    if workers == 1 or R == 1:
        return [run_replicate(cfg, k, snapshot_dir) for k in range(R)]
    out = Parallel(n_jobs=workers)(delayed(run_replicate)(cfg, k, snapshot_dir) for k in range(R))
    return sorted(out, key=lambda r: r.index)


def cmd_simulate(cfg: ExperimentConfig, out_dir, workers: Optional[int] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    snap_dir = None
    if cfg.io.write_snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
    reps = run_replicates(cfg, str(snap_dir) if snap_dir else None, workers)
    profiles = np.stack([r.profile for r in reps])
    samples = np.stack([r.identity for r in reps])
    refs = list(cfg.analysis.refs)
    L = profiles.shape[1]

    write_csv(out / "profile_sim.csv", cfg.header_lines(f"mean population profile over {len(reps)} replicates"),
              ["site", "mass"], ((x, profiles[:, x].mean()) for x in range(L)))
    write_csv(out / "identity_replicates.csv", cfg.header_lines("per-replicate identity rows"),
              ["replicate", "ref_site", "x", "identity"],
              ((r.index, ref, x, r.identity[i, x]) for r in reps for i, ref in enumerate(refs) for x in range(L)))
    replicate_stats(samples, refs).write(out / "identity_sim.csv", cfg.header_lines("simulated identity"))
    return {"replicates": len(reps), "out_dir": str(out)}


# ----------------------------------------------------------------- predict

def cmd_steady_state(cfg: ExperimentConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, spec = cfg.params(), cfg.growth_spec()
    ss = steady_state(spec, params, cfg.pde_config())
    header = {"version": cfg.header_lines("")[0].split()[1], "config_sha256": cfg.hash(),
              "converged": ss.converged, "residual": f"{ss.residual:.3e}", "steps": ss.steps}
    write_profile(out / "profile_steady.csv", ss.profile, header)
    return ss


def cmd_predict(cfg: ExperimentConfig, out_dir) -> dict:
    out = Path(out_dir)
    ss = cmd_steady_state(cfg, out)
    p = cfg.predict
    _, theta = build_kernel(ss.profile, cfg.model.mu, int(p.t_max), p.rate_scale, cfg.model.boundary)
    theta.write(out / "theta.csv")
    pred = align_prediction(theta.values, p.N, p.delta)
    L = theta.values.shape[0]
    flag = "" if ss.converged else " STEADY_STATE_NOT_CONVERGED"
    write_csv(out / "prediction.csv",
              cfg.header_lines(f"prediction t_max={p.t_max} rate_scale={p.rate_scale} N={p.N}{flag}"),
              ["ref_site", "x", "theta", "predicted"],
              ((ref, x, theta.values[ref, x], pred[ref, x]) for ref in cfg.analysis.refs for x in range(L)))
    return {"converged": ss.converged, "residual": ss.residual}


# ----------------------------------------------------------------- compare

@dataclass
class CompareSummary:
    coverage: Optional[float]
    positions: int
    N_star: Optional[float]
    N_star_window: Optional[float]
    N: float
    ratio_sim: Optional[float]
    ratio_pred: Optional[float]


def compare_tables(sim: IdentityTable, theta_rows: np.ndarray, N: float, delta: float, window: int):
    """Rows of the comparison table on the aligned scale, and its summary.

    ``theta_rows[i, x]`` is the prediction for reference ``sim.refs[i]`` before
    alignment, so the aligned simulated values are N delta P.
    """
    if theta_rows.shape != sim.mean.shape:
        raise ConfigurationError(f"grid mismatch: prediction {theta_rows.shape} vs simulation {sim.mean.shape}")
    aligned = sim.scaled(N * delta, "aligned")
    defined = sim.n_replicates >= 2
    rows, inside = [], []
    for i, ref in enumerate(sim.refs):
        for x in range(sim.mean.shape[1]):
            pred = theta_rows[i, x]
            lo, hi = aligned.p05[i, x], aligned.p95[i, x]
            flag = None
            if defined:
                flag = int(lo <= pred <= hi)
                if abs(x - ref) <= window:
                    inside.append(flag)
            rows.append((ref, x, abs(x - ref) <= window, aligned.mean[i, x], aligned.median[i, x],
                         aligned.p05[i, x], aligned.p25[i, x], aligned.p75[i, x], aligned.p95[i, x],
                         pred, flag))
    N_star = best_alignment(theta_rows, sim.mean)
    near = np.abs(np.arange(sim.mean.shape[1])[None, :] - np.asarray(sim.refs)[:, None]) <= window
    N_star_window = best_alignment(theta_rows[near], sim.mean[near])

    def ratio(values):
        if 45 not in sim.refs or values.shape[1] <= 55:
            return None
        i = sim.refs.index(45)
        return float(values[i, 55] / values[i, 46]) if values[i, 46] > 0 else None

    summary = CompareSummary(
        coverage=float(np.mean(inside)) if inside else None, positions=len(inside),
        N_star=N_star, N_star_window=N_star_window, N=N, ratio_sim=ratio(aligned.mean), ratio_pred=ratio(theta_rows))
    return rows, summary


COMPARE_COLUMNS = ["ref_site", "x", "in_window", "sim_mean", "sim_median", "sim_p05", "sim_p25",
                   "sim_p75", "sim_p95", "predicted", "inside_band"]


def cmd_compare(cfg: ExperimentConfig, out_dir, sim_path=None, pred_path=None) -> CompareSummary:
    out = Path(out_dir)
    sim = IdentityTable.read(sim_path or out / "identity_sim.csv")
    pred_rows = read_csv(pred_path or out / "prediction.csv")
    pred_refs = list(dict.fromkeys(int(r["ref_site"]) for r in pred_rows))
    if pred_refs != sim.refs:
        raise ConfigurationError(f"reference sites differ: prediction {pred_refs} vs simulation {sim.refs}")
    L = max(int(r["x"]) for r in pred_rows) + 1
    theta = np.full((len(pred_refs), L), np.nan)
    for r in pred_rows:
        theta[pred_refs.index(int(r["ref_site"])), int(r["x"])] = float(r["theta"])
    p = cfg.predict
    rows, summary = compare_tables(sim, theta, p.N, p.delta, cfg.analysis.window)
    header = cfg.header_lines("comparison on the aligned scale") + [
        "summary " + json.dumps({k: v for k, v in asdict(summary).items()}, sort_keys=True)]
    write_csv(out / "comparison.csv", header, COMPARE_COLUMNS, rows)
    return summary


# ------------------------------------------------------------- diagnostics

def cmd_diagnostics(cfg: ExperimentConfig, out_dir, workers: Optional[int] = None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params, spec = cfg.params(), cfg.growth_spec()
    results: list[tuple[str, float]] = []

    conv = jump_operator_convergence(params)
    for d, e in zip(conv.deltas, conv.errors):
        results.append((f"jump_error_delta_{d:g}", e))
    results.append(("jump_convergence_slope", conv.slope))

    two_pi = 2 * np.pi
    drift = drift_consistency_check(
        n_fn=lambda x: 2.0 + np.sin(two_pi * x), f_fn=lambda x: np.cos(3.0 * x),
        df_fn=lambda x: -3.0 * np.sin(3.0 * x), d2f_fn=lambda x: -9.0 * np.cos(3.0 * x),
        dn_fn=lambda x: two_pi * np.cos(two_pi * x))
    results.append(("generator_identity_error", drift.max_identity_error))
    results.append(("generator_convergence_slope", drift.slope))

    f = np.sin(np.linspace(0.0, 3.0, 41))
    Qf = lineage_generator(np.full(f.size, 5.0)) @ f
    flat = float(np.max(np.abs(Qf[1:-1] - (f[2:] + f[:-2] - 2.0 * f[1:-1]))))
    results.append(("flat_generator_residual", flat))

    burn = cfg.analysis.qv_burn_in
    from .simulate import SimConfig
    warm = run(SimConfig(params=params, spec=spec, T_end=burn, initial_mass=cfg.sim.initial_mass),
               rng=stream(cfg.rng.seed, 10 ** 9), backend_name=cfg.sim.backend)
    x = np.arange(params.grid_len)
    phi = np.exp(-((x - params.grid_len // 2) / 8.0) ** 2)
    qv = qv_diagnostic(params, spec, phi, warm.field, horizon=cfg.analysis.qv_horizon,
                       replicates=cfg.analysis.qv_replicates, seed=cfg.rng.seed,
                       backend_name=cfg.sim.backend)
    results += [("qv_variance", qv.variance), ("qv_predicted", qv.predicted),
                ("qv_predicted_pathwise", qv.predicted_pathwise), ("qv_ratio", qv.ratio)]
    write_csv(out / "diagnostics.csv", cfg.header_lines("operator and martingale diagnostics"),
              ["quantity", "value"], results)
    return dict(results)
