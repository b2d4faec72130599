"""Synthetic gait datasets for demos, fixtures and planted-model checks.

Kinematic profiles are smooth periodic waveforms with task-dependent
amplitudes and per-subject jitter. Torques are either plausible
biomech-shaped waveforms or, when a basis and coefficient vector are
supplied, exactly the controller output ``Phi(state) alpha0`` so that the
fitting pipeline has a known recoverable optimum.
"""

from __future__ import annotations

import numpy as np

from .basis import BasisSet
from .dataio import GaitDataset, GaitTrial, TaskLabel
from .model import ModelParams
from .optim import predicted_torques

# (theta amplitude, theta offset, phi amplitude, base cycle duration)
_TASK_SHAPES = {
    TaskLabel.LG_1_0: (0.35, 0.05, 0.30, 1.15),
    TaskLabel.LG_1_45: (0.42, 0.06, 0.36, 0.95),
    TaskLabel.RA_5_2: (0.40, 0.12, 0.28, 1.20),
    TaskLabel.RA_11: (0.45, 0.20, 0.26, 1.30),
    TaskLabel.RD_5_2: (0.38, -0.02, 0.30, 1.10),
    TaskLabel.RD_11: (0.40, -0.08, 0.28, 1.15),
    TaskLabel.SA: (0.55, 0.25, 0.24, 1.45),
    TaskLabel.SD: (0.50, -0.05, 0.25, 1.35),
}


def make_synthetic_dataset(params: ModelParams,
                           basis: BasisSet | None = None,
                           alpha0: np.ndarray | None = None,
                           n_subjects: int = 10,
                           tasks: tuple[TaskLabel, ...] | None = None,
                           n: int = 150,
                           seed: int = 0,
                           noise: float = 0.0) -> GaitDataset:
    """Generate one stride per (subject, task).

    With ``basis``/``alpha0`` given, torques are exactly the planted
    controller output (plus optional Gaussian ``noise`` in Nm/kg);
    otherwise they are generic sinusoidal hip-torque shapes.
    """
    rng = np.random.default_rng(seed)
    tasks = tuple(tasks) if tasks else tuple(TaskLabel)
    phase = np.linspace(0.0, 100.0, n)
    x = phase / 100.0

    trials = []
    for k in range(n_subjects):
        subject = f"s{k + 1:02d}"
        mass = float(rng.uniform(55.0, 95.0))
        jitter = rng.uniform(0.85, 1.15, size=3)
        for task in tasks:
            amp, off, phi_amp, dur = _TASK_SHAPES[task]
            amp *= jitter[0]
            phi_amp *= jitter[1]
            dur *= jitter[2]
            d1, d2, d3 = rng.uniform(0, 2 * np.pi, size=3)
            theta_l = off + amp * np.sin(2 * np.pi * x + d1) \
                + 0.25 * amp * np.sin(4 * np.pi * x + d2)
            theta_r = off + amp * np.sin(2 * np.pi * (x + 0.5) + d1) \
                + 0.25 * amp * np.sin(4 * np.pi * (x + 0.5) + d2)
            phi = phi_amp * np.sin(2 * np.pi * x + d3)

            trial = GaitTrial(
                subject_id=subject, task=task, phase=phase,
                theta_l=theta_l, theta_r=theta_r, phi=phi,
                cycle_duration=dur,
                hip_torque_l=np.zeros(n), hip_torque_r=np.zeros(n),
                body_mass=mass,
            )
            if basis is not None and alpha0 is not None:
                pred = predicted_torques(trial, basis, params, np.asarray(alpha0))
                tq_l, tq_r = pred[:, 0].copy(), pred[:, 1].copy()
            else:
                b1 = 0.6 + 0.2 * jitter[0]
                tq_l = b1 * np.sin(2 * np.pi * x + d1 + 0.4) \
                    + 0.25 * np.sin(4 * np.pi * x + d2)
                tq_r = b1 * np.sin(2 * np.pi * (x + 0.5) + d1 + 0.4) \
                    + 0.25 * np.sin(4 * np.pi * (x + 0.5) + d2)
            if noise > 0.0:
                tq_l = tq_l + rng.normal(0.0, noise, size=n)
                tq_r = tq_r + rng.normal(0.0, noise, size=n)
            trials.append(GaitTrial(
                subject_id=subject, task=task, phase=phase,
                theta_l=theta_l, theta_r=theta_r, phi=phi,
                cycle_duration=dur,
                hip_torque_l=tq_l, hip_torque_r=tq_r,
                body_mass=mass,
            ))
    return GaitDataset(tuple(trials))
