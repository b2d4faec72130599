"""Pipeline commands behind the service endpoints.

Each ``run_*`` function takes a validated RunConfig and returns
``(summary, files)`` where ``files`` maps output filenames to their full
text content; callers (service/CLI) decide where the bytes land. All
outputs are deterministic for a fixed config.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .basis import BasisSet, basis_from_config
from .config import RunConfig
from .dataio import (
    EMGRecord,
    GaitDataset,
    Muscle,
    TaskLabel,
    cross_mode_peak,
    emg_effort,
    emg_envelope,
    ensemble_average,
    load_dataset,
    resample_cycle,
    scale_stair_flexion,
)
from .errors import ConfigError, DataError
from .model import ModelParams, State, gravity_comp_torque
from .optim import (
    assemble_problem,
    evaluate_tasks,
    loso_cv,
    predicted_torques,
    solve_lasso,
)
from .shaping import ShapingSpec, passivity_audit, simulate_closed_loop

logger = logging.getLogger("hamshape.pipeline")

_FMT = ".12g"


def _csv(header: list[str], rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(
            format(x, _FMT) if isinstance(x, float) else str(x) for x in row))
    return "\n".join(lines) + "\n"


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def prepare_dataset(cfg: RunConfig) -> GaitDataset:
    """Load, resample and preprocess the configured dataset."""
    if cfg.dataset is None:
        raise ConfigError("config has no 'dataset' directory")
    ds = load_dataset(cfg.dataset, cfg.dataset_schema)
    trials = []
    for trial in ds.trials:
        trial = resample_cycle(trial, cfg.resample_points)
        if trial.task is TaskLabel.SA and cfg.stair_flexion_scale > 1.0:
            trial = scale_stair_flexion(trial, cfg.stair_flexion_scale)
        trials.append(trial)
    return GaitDataset(tuple(trials))


def build_basis(cfg: RunConfig, params: ModelParams, mode: str | None = None) -> BasisSet:
    return basis_from_config(
        {"mode": mode or cfg.mode, "mirrored": cfg.mirrored,
         "custom": cfg.custom_basis}, params)


def _metrics_dict(metrics: dict) -> dict:
    return {
        task.value: {"sim_mean": tm.sim_mean, "sim_sd": tm.sim_sd,
                     "vaf_mean": tm.vaf_mean, "vaf_sd": tm.vaf_sd, "n": tm.n}
        for task, tm in metrics.items()
    }


def _torque_comparison_csv(dataset: GaitDataset, basis: BasisSet,
                           params: ModelParams, alpha: np.ndarray,
                           n: int) -> str:
    """Across-subject mean of normative vs predicted torque, per task."""
    rows = []
    grid = np.linspace(0.0, 100.0, n)
    for task in dataset.tasks:
        trials = dataset.for_task(task).trials
        norm_l = np.mean([t.hip_torque_l for t in trials], axis=0)
        norm_r = np.mean([t.hip_torque_r for t in trials], axis=0)
        preds = [predicted_torques(t, basis, params, alpha) for t in trials]
        pred_l = np.mean([p[:, 0] for p in preds], axis=0)
        pred_r = np.mean([p[:, 1] for p in preds], axis=0)
        for i in range(n):
            rows.append((task.value, float(grid[i]),
                         float(norm_l[i]), float(norm_r[i]),
                         float(pred_l[i]), float(pred_r[i])))
    return _csv(["task", "phase", "normative_l", "normative_r",
                 "predicted_l", "predicted_r"], rows)


def run_fit(cfg: RunConfig) -> tuple[dict, dict]:
    params = cfg.model_params
    dataset = prepare_dataset(cfg)
    basis = build_basis(cfg, params)
    weights = dict(cfg.weights)
    weights["lambda"] = cfg.lam
    problem = assemble_problem(dataset, basis, params, weights)
    fit = solve_lasso(problem, tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    metrics = evaluate_tasks(dataset, basis, params, fit.alpha)

    result = {
        "version": __version__,
        "mode": cfg.mode,
        "mirrored": cfg.mirrored,
        "basis": basis.describe(),
        "alpha": [float(a) for a in fit.alpha],
        "objective": fit.objective,
        "iterations": fit.iterations,
        "optimality_residual": fit.cert_residual,
        "rank_deficient": fit.rank_deficient,
        "per_task_metrics": _metrics_dict(metrics),
        "n_subjects": len(dataset.subjects),
        "n_trials": len(dataset),
        "config": cfg.echo(),
    }
    files = {
        "fit_result.json": _json_text(result),
        "torque_comparison.csv": _torque_comparison_csv(
            dataset, basis, params, fit.alpha, cfg.resample_points),
    }
    summary = {
        "objective": fit.objective,
        "iterations": fit.iterations,
        "nonzero_coefficients": int(np.count_nonzero(fit.alpha)),
        "w": basis.w,
        "mean_sim": float(np.mean([m.sim_mean for m in metrics.values()])),
        "mean_vaf": float(np.mean([m.vaf_mean for m in metrics.values()])),
        "per_task_metrics": _metrics_dict(metrics),
    }
    return summary, files


def run_cv(cfg: RunConfig) -> tuple[dict, dict]:
    params = cfg.model_params
    dataset = prepare_dataset(cfg)
    weights = dict(cfg.weights)
    weights["lambda"] = cfg.lam

    reports = {}
    for mode in ("phi", "wop"):
        basis = build_basis(cfg, params, mode=mode)
        reports[mode] = loso_cv(dataset, basis, params, weights,
                                tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)

    rows = []
    table = {}
    for task in dataset.tasks:
        phi_m = reports["phi"].per_task.get(task)
        wop_m = reports["wop"].per_task.get(task)
        if phi_m is None or wop_m is None:
            continue
        rows.append((task.display(),
                     phi_m.sim_mean, phi_m.sim_sd, wop_m.sim_mean, wop_m.sim_sd,
                     phi_m.vaf_mean, phi_m.vaf_sd, wop_m.vaf_mean, wop_m.vaf_sd))
        table[task.value] = {
            "sim_phi": [phi_m.sim_mean, phi_m.sim_sd],
            "sim_wop": [wop_m.sim_mean, wop_m.sim_sd],
            "vaf_phi": [phi_m.vaf_mean, phi_m.vaf_sd],
            "vaf_wop": [wop_m.vaf_mean, wop_m.vaf_sd],
        }

    report_json = {
        "version": __version__,
        "table": table,
        "subjects": list(dataset.subjects),
        "missing_tasks": sorted(set(reports["phi"].missing_tasks)
                                | set(reports["wop"].missing_tasks)),
        "fold_alphas": {m: [[float(x) for x in a] for a in reports[m].fold_alphas]
                        for m in reports},
        "config": cfg.echo(),
    }
    files = {
        "cv_report.csv": _csv(
            ["task", "sim_phi_mean", "sim_phi_sd", "sim_wop_mean", "sim_wop_sd",
             "vaf_phi_mean", "vaf_phi_sd", "vaf_wop_mean", "vaf_wop_sd"], rows),
        "cv_report.json": _json_text(report_json),
    }
    phi_wins = sum(1 for t in table.values() if t["sim_phi"][0] >= t["sim_wop"][0])
    summary = {
        "tasks": len(table),
        "phi_sim_at_least_wop": phi_wins,
        "table": table,
        "missing_tasks": report_json["missing_tasks"],
    }
    return summary, files


def _load_fit_result(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read fit result {path}: {e}") from e


def _spec_from_config(cfg: RunConfig, params: ModelParams) -> ShapingSpec:
    if cfg.fit_result is not None:
        result = _load_fit_result(cfg.fit_result)
        echo = result.get("config", {})
        basis = basis_from_config(
            {"mode": result.get("mode", cfg.mode),
             "mirrored": result.get("mirrored", True),
             "custom": echo.get("custom_basis", [])}, params)
        alpha = np.asarray(result.get("alpha", []), dtype=float)
    else:
        basis = build_basis(cfg, params)
        alpha_cfg = cfg.simulation.get("alpha")
        alpha = (np.asarray(alpha_cfg, dtype=float) if alpha_cfg is not None
                 else np.zeros(basis.w))
    if alpha.shape[0] != basis.w:
        raise ConfigError(f"alpha length {alpha.shape[0]} does not match "
                          f"basis cardinality {basis.w}")
    return ShapingSpec(params=params, basis=basis, alpha=alpha)


def _human_input(cfg: RunConfig, params: ModelParams):
    kind = cfg.simulation["human_input"]
    if kind == "zero":
        return None
    if kind == "gravity_comp":
        return lambda t, q, qd: gravity_comp_torque(params, q)
    amp = np.asarray(cfg.simulation["human_amplitude"], dtype=float).reshape(2)
    freq = np.asarray(cfg.simulation["human_frequency"], dtype=float).reshape(2)
    two_pi = 2.0 * math.pi
    return lambda t, q, qd: amp * np.sin(two_pi * freq * t)


def run_simulate(cfg: RunConfig) -> tuple[dict, dict]:
    params = cfg.model_params
    spec = _spec_from_config(cfg, params)
    init = cfg.simulation["initial"]
    q0 = np.array([0.0, 0.0, init["phi"], init["theta_l"], init["theta_r"]])
    qd0 = np.array([0.0, 0.0, init["phi_rate"], init["theta_l_rate"],
                    init["theta_r_rate"]])
    state0 = State.from_velocity(params, q0, qd0)

    dt = float(cfg.simulation["dt"])
    n_steps = int(round(cfg.simulation["horizon"] / dt))
    record_every = int(cfg.simulation["record_every"])
    human = _human_input(cfg, params)

    traj = simulate_closed_loop(params, spec, state0, dt, n_steps,
                                human=human, record_every=record_every,
                                record_grf=True)
    n_samples = len(traj)
    matching_every = 1 if n_samples <= 20001 else max(1, n_samples // 1000)
    audit = passivity_audit(traj, spec, matching_every=matching_every)

    h0 = traj.H[0]
    drift = float(np.max(np.abs(traj.H - h0)) / max(abs(h0), 1e-12))
    summary = {
        "samples": n_samples,
        "dt": dt,
        "horizon": n_steps * dt,
        "H0": float(h0),
        "rel_H_drift": drift,
        "integrated_balance_residual": audit.integrated_residual,
        "residual_bound_1e5_meanH": 1e-5 * audit.mean_abs_H,
        "max_matching_residual": float(np.max(audit.matching_residual_inf)),
        "final_q": [float(x) for x in traj.q[-1]],
    }
    files = {
        "trajectory.csv": traj.to_csv(),
        "audit.csv": audit.to_csv(),
    }
    return summary, files


def _read_emg_record(entry: dict) -> EMGRecord:
    df = pd.read_csv(entry["path"])
    cols = [c.strip().lower() for c in df.columns]
    if "t" in cols and "value" in cols:
        t = df[df.columns[cols.index("t")]].to_numpy(dtype=float)
        x = df[df.columns[cols.index("value")]].to_numpy(dtype=float)
    elif len(df.columns) >= 2:
        t = df.iloc[:, 0].to_numpy(dtype=float)
        x = df.iloc[:, 1].to_numpy(dtype=float)
    else:
        raise DataError(f"EMG file {entry['path']} needs (t, value) columns")
    if t.size < 2:
        raise DataError(f"EMG file {entry['path']} too short")
    fs = 1.0 / float(np.median(np.diff(t)))
    events_doc = json.loads(Path(entry["events"]).read_text())
    events = events_doc["events"] if isinstance(events_doc, dict) else events_doc
    try:
        muscle = Muscle(str(entry["muscle"]).upper())
    except ValueError:
        raise DataError(f"unknown muscle {entry['muscle']!r}; expected "
                        f"{[m.value for m in Muscle]}") from None
    return EMGRecord(muscle=muscle, fs=fs, samples=x,
                     gait_events=np.asarray(events, dtype=int))


def run_emg(cfg: RunConfig) -> tuple[dict, dict]:
    entries = cfg.emg.get("records", [])
    if not entries:
        raise ConfigError("config has no emg.records")

    groups: dict = {}
    for entry in entries:
        key = (str(entry["task"]), str(entry["muscle"]).upper())
        groups.setdefault(key, {})[str(entry["mode"])] = _read_emg_record(entry)

    rows = []
    mode_totals: dict = {}
    for (task, muscle), by_mode in sorted(groups.items()):
        ensembles = {
            mode: ensemble_average(emg_envelope(rec), rec.gait_events)
            for mode, rec in by_mode.items()
        }
        peak = cross_mode_peak(ensembles)
        for mode, rec in sorted(by_mode.items()):
            efforts = emg_effort(rec, peak)
            for i, eff in enumerate(efforts):
                rows.append((task, muscle, mode, i, float(eff)))
            mode_totals.setdefault(mode, []).extend(efforts.tolist())

    files = {"emg_effort.csv": _csv(
        ["task", "muscle", "mode", "cycle", "effort_pct_mvc_s"], rows)}
    summary = {
        "groups": len(groups),
        "cycles": len(rows),
        "mean_effort_by_mode": {m: float(np.mean(v)) for m, v in
                                sorted(mode_totals.items())},
    }
    return summary, files


def run_report(cfg: RunConfig) -> tuple[dict, dict]:
    """Re-render metric tables and torque comparisons from a saved fit."""
    if cfg.fit_result is None:
        raise ConfigError("report needs a 'fit_result' path in the config")
    result = _load_fit_result(cfg.fit_result)
    echo = result.get("config", {})
    try:
        params = ModelParams.from_dict(echo["model_params"])
    except (KeyError, ValueError):
        params = cfg.model_params
    basis = basis_from_config(
        {"mode": result.get("mode", cfg.mode),
         "mirrored": result.get("mirrored", True),
         "custom": echo.get("custom_basis", [])}, params)
    alpha = np.asarray(result.get("alpha", []), dtype=float)
    if alpha.shape[0] != basis.w:
        raise ConfigError("fit result alpha does not match its basis")

    dataset = prepare_dataset(cfg)
    metrics = evaluate_tasks(dataset, basis, params, alpha)
    rows = [(task.display(), tm.sim_mean, tm.sim_sd, tm.vaf_mean, tm.vaf_sd, tm.n)
            for task, tm in metrics.items()]
    files = {
        "report.csv": _csv(
            ["task", "sim_mean", "sim_sd", "vaf_mean", "vaf_sd", "n_subjects"],
            rows),
        "torque_comparison.csv": _torque_comparison_csv(
            dataset, basis, params, alpha, cfg.resample_points),
    }
    summary = {"tasks": len(rows), "per_task_metrics": _metrics_dict(metrics)}
    return summary, files
