"""Gait-dataset ingestion, training-state construction and EMG processing.

Datasets are directories of per-subject CSV files (one file per subject,
named ``<subject_id>.csv``) with the columns

    task, stride, phase, theta_l, theta_r, phi,
    hip_torque_l, hip_torque_r, cycle_duration, body_mass

``phase`` is percent gait cycle (0-100, strictly increasing per stride),
angles are in radians unless the schema config (or a ``schema.json``
sidecar in the directory) says ``{"angle_unit": "deg"}``, torques are in
Nm/kg, ``cycle_duration`` in seconds and ``body_mass`` in kg. ``stride``
is optional; without it each (subject, task) group is a single stride.
Strides containing NaNs are dropped with a logged count.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import signal

from .errors import DataError
from .model import ModelParams, State, mass_matrix

logger = logging.getLogger("hamshape.dataio")

RESAMPLE_POINTS = 150


class TaskLabel(str, Enum):
    LG_1_0 = "LG_1_0"
    LG_1_45 = "LG_1_45"
    RA_5_2 = "RA_5_2"
    RA_11 = "RA_11"
    RD_5_2 = "RD_5_2"
    RD_11 = "RD_11"
    SA = "SA"
    SD = "SD"

    def display(self) -> str:
        parts = self.value.split("_")
        if len(parts) == 1:
            return parts[0]
        return parts[0] + " " + ".".join(parts[1:])

    @classmethod
    def parse(cls, text: str) -> "TaskLabel":
        key = str(text).strip().upper().replace(" ", "_").replace(".", "_")
        try:
            return cls(key)
        except ValueError:
            raise DataError(f"unknown task label {text!r}; expected one of "
                            f"{[t.value for t in cls]}") from None


TASK_ORDER = tuple(TaskLabel)


@dataclass(frozen=True)
class GaitTrial:
    """One phase-normalized stride of one subject."""

    subject_id: str
    task: TaskLabel
    phase: np.ndarray
    theta_l: np.ndarray
    theta_r: np.ndarray
    phi: np.ndarray
    cycle_duration: float
    hip_torque_l: np.ndarray
    hip_torque_r: np.ndarray
    body_mass: float

    def __post_init__(self):
        series = {}
        for name in ("phase", "theta_l", "theta_r", "phi",
                     "hip_torque_l", "hip_torque_r"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, arr)
            series[name] = arr
        n = series["phase"].shape[0]
        if n < 2:
            raise DataError(f"{self.subject_id}/{self.task.value}: stride needs >= 2 samples")
        for name, arr in series.items():
            if arr.shape[0] != n:
                raise DataError(f"{self.subject_id}/{self.task.value}: "
                                f"series {name} length {arr.shape[0]} != {n}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{self.subject_id}/{self.task.value}: "
                                f"series {name} contains NaN/inf")
        ph = series["phase"]
        if not (np.all(np.diff(ph) > 0) and abs(ph[0]) < 1e-9
                and abs(ph[-1] - 100.0) < 1e-9):
            raise DataError(f"{self.subject_id}/{self.task.value}: phase must "
                            "increase strictly from 0 to 100")
        if not self.body_mass > 0:
            raise DataError(f"{self.subject_id}: body_mass must be positive")
        if not self.cycle_duration > 0:
            raise DataError(f"{self.subject_id}/{self.task.value}: "
                            "cycle_duration must be positive")

    @property
    def n(self) -> int:
        return self.phase.shape[0]


@dataclass(frozen=True)
class GaitDataset:
    trials: tuple[GaitTrial, ...]

    @property
    def subjects(self) -> tuple[str, ...]:
        seen = dict.fromkeys(t.subject_id for t in self.trials)
        return tuple(seen)

    @property
    def tasks(self) -> tuple[TaskLabel, ...]:
        present = {t.task for t in self.trials}
        return tuple(t for t in TASK_ORDER if t in present)

    def for_subject(self, subject_id: str) -> "GaitDataset":
        return GaitDataset(tuple(t for t in self.trials if t.subject_id == subject_id))

    def excluding_subject(self, subject_id: str) -> "GaitDataset":
        return GaitDataset(tuple(t for t in self.trials if t.subject_id != subject_id))

    def for_task(self, task: TaskLabel) -> "GaitDataset":
        return GaitDataset(tuple(t for t in self.trials if t.task == task))

    def __len__(self):
        return len(self.trials)


_CANONICAL_COLUMNS = ("task", "phase", "theta_l", "theta_r", "phi",
                      "hip_torque_l", "hip_torque_r", "cycle_duration",
                      "body_mass")


def load_dataset(path, schema_config: dict | None = None) -> GaitDataset:
    """Read a directory of per-subject CSVs into a GaitDataset.

    ``schema_config`` supports ``angle_unit`` ("rad" default, or "deg")
    and ``columns`` (mapping canonical name -> actual column name). A
    ``schema.json`` sidecar in the directory supplies the same settings
    when no explicit config is given.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"dataset path {root} is not a directory")
    if schema_config is None:
        sidecar = root / "schema.json"
        schema_config = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    unit = schema_config.get("angle_unit", "rad")
    if unit not in ("rad", "deg"):
        raise DataError(f"angle_unit must be 'rad' or 'deg', got {unit!r}")
    colmap = dict(schema_config.get("columns", {}))

    files = sorted(f for f in root.glob("*.csv"))
    if not files:
        raise DataError(f"no subject CSV files found under {root}")

    trials: list[GaitTrial] = []
    dropped = 0
    for f in files:
        df = pd.read_csv(f)
        missing = [c for c in _CANONICAL_COLUMNS if colmap.get(c, c) not in df.columns]
        if missing:
            raise DataError(f"{f.name}: missing columns {missing}")
        get = lambda c: df[colmap.get(c, c)]
        stride_col = colmap.get("stride", "stride")
        strides = df[stride_col] if stride_col in df.columns else pd.Series(0, index=df.index)
        for (task_raw, _stride), group in df.groupby([get("task"), strides], sort=True):
            task = TaskLabel.parse(task_raw)
            sub = group
            series = {c: sub[colmap.get(c, c)].to_numpy(dtype=float)
                      for c in _CANONICAL_COLUMNS if c != "task"}
            data_cols = ("phase", "theta_l", "theta_r", "phi",
                         "hip_torque_l", "hip_torque_r")
            if any(np.isnan(series[c]).any() for c in data_cols):
                dropped += 1
                continue
            scale = math.pi / 180.0 if unit == "deg" else 1.0
            trials.append(GaitTrial(
                subject_id=f.stem,
                task=task,
                phase=series["phase"],
                theta_l=series["theta_l"] * scale,
                theta_r=series["theta_r"] * scale,
                phi=series["phi"] * scale,
                cycle_duration=float(series["cycle_duration"][0]),
                hip_torque_l=series["hip_torque_l"],
                hip_torque_r=series["hip_torque_r"],
                body_mass=float(series["body_mass"][0]),
            ))
    if dropped:
        logger.warning("dropped %d stride(s) containing NaN samples", dropped)
    if not trials:
        raise DataError(f"dataset under {root} is empty after cleaning")
    return GaitDataset(tuple(trials))


def write_dataset(dataset: GaitDataset, path) -> None:
    """Write a dataset in the canonical per-subject CSV layout (radians)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    (root / "schema.json").write_text(json.dumps({"angle_unit": "rad"}) + "\n")
    for subject in dataset.subjects:
        rows = []
        for stride, trial in enumerate(dataset.for_subject(subject).trials):
            for i in range(trial.n):
                rows.append({
                    "task": trial.task.value,
                    "stride": stride,
                    "phase": trial.phase[i],
                    "theta_l": trial.theta_l[i],
                    "theta_r": trial.theta_r[i],
                    "phi": trial.phi[i],
                    "hip_torque_l": trial.hip_torque_l[i],
                    "hip_torque_r": trial.hip_torque_r[i],
                    "cycle_duration": trial.cycle_duration,
                    "body_mass": trial.body_mass,
                })
        pd.DataFrame(rows).to_csv(root / f"{subject}.csv", index=False)


def resample_cycle(trial: GaitTrial, n: int = RESAMPLE_POINTS) -> GaitTrial:
    """Linearly interpolate all series onto a uniform n-point 0-100% grid."""
    if n < 2:
        raise ValueError("n must be >= 2")
    grid = np.linspace(0.0, 100.0, n)
    interp = lambda y: np.interp(grid, trial.phase, y)
    return replace(
        trial,
        phase=grid,
        theta_l=interp(trial.theta_l),
        theta_r=interp(trial.theta_r),
        phi=interp(trial.phi),
        hip_torque_l=interp(trial.hip_torque_l),
        hip_torque_r=interp(trial.hip_torque_r),
    )


def states_from_trial(trial: GaitTrial, params: ModelParams) -> list[State]:
    """Training states (q, p) along a stride.

    p_x = p_y = 0 in the stance frame; joint rates come from second-order
    finite differences of the phase series scaled by the cycle duration,
    and p = M(q) qdot.
    """
    if not trial.cycle_duration > 0:
        raise DataError("cycle_duration required to build momenta")
    t = trial.phase / 100.0 * trial.cycle_duration
    dphi = np.gradient(trial.phi, t, edge_order=2)
    dthl = np.gradient(trial.theta_l, t, edge_order=2)
    dthr = np.gradient(trial.theta_r, t, edge_order=2)
    states = []
    for i in range(trial.n):
        q = np.array([0.0, 0.0, trial.phi[i], trial.theta_l[i], trial.theta_r[i]])
        qdot = np.array([0.0, 0.0, dphi[i], dthl[i], dthr[i]])
        states.append(State(q=q, p=mass_matrix(params, q) @ qdot))
    return states


def scale_stair_flexion(trial: GaitTrial, factor: float) -> GaitTrial:
    """Scale positive (flexion) torque samples of a stair-ascent stride."""
    if trial.task is not TaskLabel.SA:
        raise DataError(f"stair flexion scaling applies to SA trials only, "
                        f"got {trial.task.value}")
    if factor < 1.0:
        raise ValueError("scaling factor must be >= 1")
    scale = lambda y: np.where(y > 0, y * factor, y)
    return replace(trial,
                   hip_torque_l=scale(trial.hip_torque_l),
                   hip_torque_r=scale(trial.hip_torque_r))


# ---------------------------------------------------------------------------
# EMG
# ---------------------------------------------------------------------------

class Muscle(str, Enum):
    RF = "RF"
    BF = "BF"
    GM = "GM"


@dataclass(frozen=True)
class EMGRecord:
    """Raw EMG channel with heel-strike sample indices."""

    muscle: Muscle
    fs: float
    samples: np.ndarray
    gait_events: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float).reshape(-1)
        events = np.asarray(self.gait_events, dtype=int).reshape(-1)
        if not self.fs > 400.0:
            raise DataError(f"sampling rate {self.fs} Hz too low for the "
                            "200 Hz band edge (need > 400 Hz)")
        if events.size < 2:
            raise DataError("need at least two gait events (one cycle)")
        if np.any(np.diff(events) <= 0):
            raise DataError("gait events must be strictly increasing")
        if events[0] < 0 or events[-1] >= samples.size:
            raise DataError("gait events outside the recorded signal")
        if not np.all(np.isfinite(samples)):
            raise DataError("EMG samples contain NaN/inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "gait_events", events)


def _bandpass_sos(fs: float, lo: float = 20.0, hi: float = 200.0, order: int = 4):
    return signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")


def emg_envelope(record: EMGRecord, rms_window: float = 0.1) -> np.ndarray:
    """Zero-phase 20-200 Hz Butterworth band-pass, then sliding-RMS."""
    sos = _bandpass_sos(record.fs)
    filtered = signal.sosfiltfilt(sos, record.samples)
    win = max(1, int(round(rms_window * record.fs)))
    kernel = np.full(win, 1.0 / win)
    return np.sqrt(np.convolve(filtered ** 2, kernel, mode="same"))


def ensemble_average(envelope: np.ndarray, events: np.ndarray,
                     n: int = RESAMPLE_POINTS) -> np.ndarray:
    """Time-normalized mean envelope across the gait cycles in a record."""
    cycles = []
    grid = np.linspace(0.0, 1.0, n)
    for s, e in zip(events[:-1], events[1:]):
        seg = envelope[s:e + 1]
        x = np.linspace(0.0, 1.0, seg.shape[0])
        cycles.append(np.interp(grid, x, seg))
    return np.mean(cycles, axis=0)


def cross_mode_peak(mode_ensembles: dict) -> float:
    """Normalization peak: max of the ensemble averages across modes."""
    if not mode_ensembles:
        raise DataError("no mode ensembles supplied for normalization")
    return float(max(np.max(np.asarray(e)) for e in mode_ensembles.values()))


def emg_effort(record: EMGRecord, mode_ensembles) -> np.ndarray:
    """Muscle effort per gait cycle in %MVC.s.

    The envelope is normalized to %MVC by the peak of the cross-mode
    ensemble averages (pass either the ``{mode: ensemble}`` dict or the
    precomputed peak) and integrated over each cycle with the trapezoid
    rule. An all-zero normalization peak yields zero efforts.
    """
    peak = (cross_mode_peak(mode_ensembles) if isinstance(mode_ensembles, dict)
            else float(mode_ensembles))
    env = emg_envelope(record)
    events = record.gait_events
    if peak <= 0.0:
        return np.zeros(events.size - 1)
    pct = 100.0 * env / peak
    dt = 1.0 / record.fs
    efforts = np.empty(events.size - 1)
    for i, (s, e) in enumerate(zip(events[:-1], events[1:])):
        seg = pct[s:e + 1]
        efforts[i] = dt * (np.sum(seg) - 0.5 * (seg[0] + seg[-1]))
    return efforts
