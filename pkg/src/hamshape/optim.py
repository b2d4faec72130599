"""Coefficient fitting against normative torques and its evaluation.

The fit stacks two regressor rows (left/right hip) per training sample
over all subjects and tasks, adds a weighted zero-pose penalty row pair
(no torque while standing straight), and minimizes

    sum ||sqrt(W) (Phi alpha - Y)||^2 + Lambda ||alpha||_1

with an accelerated proximal-gradient (FISTA) solver; Lambda acts on
rescaled (unit-RMS) regressor columns so one value is meaningful across
heterogeneous basis functions, while the reported coefficients are in
original units. Leave-one-subject-out cross-validation and the SIM/VAF
similarity metrics mirror how fitted controllers are compared across
tasks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet, regressor_qd
from .dataio import GaitDataset, GaitTrial, TaskLabel, states_from_trial
from .errors import DataError, SolverError
from .model import ModelParams, State

logger = logging.getLogger("hamshape.optim")

DEFAULT_WEIGHTS = {
    "sample_weight": 1.0,
    "zero_pose_weight": 10.0,
    "lambda": 0.05,
}

DEFAULT_SATURATION_NM = 12.8


@dataclass
class FitProblem:
    """Stacked weighted least-squares + L1 problem, convex in alpha."""

    X: np.ndarray            # (n_rows, w), sqrt-weighted regressor rows
    y: np.ndarray            # (n_rows,), sqrt-weighted targets (Nm/kg)
    lam: float
    basis_ids: tuple[str, ...]
    zero_pose_rows: np.ndarray   # (2, w) unweighted Phi(0, 0)
    weights: dict

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("row counts of X and y differ")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def w(self) -> int:
        return self.X.shape[1]


@dataclass
class FitResult:
    alpha: np.ndarray
    objective: float
    iterations: int
    cert_residual: float
    converged: bool
    objective_history: list = field(default_factory=list)
    rank_deficient: bool = False
    per_task_metrics: dict = field(default_factory=dict)


def trial_rows(trial: GaitTrial, basis: BasisSet, params: ModelParams):
    """Regressor rows (2 per sample) and targets for one stride."""
    states = states_from_trial(trial, params)
    X = np.empty((2 * trial.n, basis.w))
    y = np.empty(2 * trial.n)
    for i, st in enumerate(states):
        phi_mat = regressor_qd(basis, st.q, st.velocity(params))
        X[2 * i:2 * i + 2] = phi_mat
        y[2 * i] = trial.hip_torque_l[i]
        y[2 * i + 1] = trial.hip_torque_r[i]
    return X, y


def zero_pose_regressor(basis: BasisSet, params: ModelParams) -> np.ndarray:
    st0 = State(q=np.zeros(5), p=np.zeros(5))
    return regressor_qd(basis, st0.q, np.zeros(5))


def _assemble_from_rows(trials, rows, basis: BasisSet, phi0: np.ndarray,
                        cfg: dict) -> FitProblem:
    task_weights = {TaskLabel.parse(k): float(v)
                    for k, v in cfg.get("task_weights", {}).items()}
    blocks_x, blocks_y = [], []
    for trial, (X, y) in zip(trials, rows):
        w_jk = task_weights.get(trial.task, float(cfg["sample_weight"]))
        if w_jk < 0:
            raise ValueError("sample weights must be non-negative")
        s = np.sqrt(w_jk)
        blocks_x.append(s * X)
        blocks_y.append(s * y)

    w0 = float(cfg["zero_pose_weight"])
    if w0 < 0:
        raise ValueError("zero-pose weight must be non-negative")
    blocks_x.append(np.sqrt(w0) * phi0)
    blocks_y.append(np.zeros(2))

    return FitProblem(
        X=np.vstack(blocks_x),
        y=np.concatenate(blocks_y),
        lam=float(cfg["lambda"]),
        basis_ids=basis.ids,
        zero_pose_rows=phi0,
        weights={"sample_weight": cfg["sample_weight"],
                 "zero_pose_weight": w0,
                 "task_weights": {k.value: v for k, v in task_weights.items()},
                 "lambda": float(cfg["lambda"])},
    )


def assemble_problem(dataset: GaitDataset, basis: BasisSet, params: ModelParams,
                     weights_config: dict | None = None) -> FitProblem:
    """Stack the fitting problem over all subjects and tasks.

    ``weights_config`` keys: ``sample_weight`` (scalar, default 1),
    ``task_weights`` (optional per-task overrides), ``zero_pose_weight``
    (default 10) and ``lambda`` (default 0.05).
    """
    if len(dataset) == 0:
        raise DataError("cannot assemble a fit from an empty dataset")
    cfg = dict(DEFAULT_WEIGHTS)
    cfg.update(weights_config or {})
    rows = [trial_rows(t, basis, params) for t in dataset.trials]
    phi0 = zero_pose_regressor(basis, params)
    return _assemble_from_rows(dataset.trials, rows, basis, phi0, cfg)


def soft_threshold(x: np.ndarray, t: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _certificate(G, b, lam, beta) -> float:
    """Max violation of the L1 subgradient optimality conditions."""
    grad = 2.0 * (G @ beta - b)
    viol = np.where(beta == 0.0,
                    np.maximum(np.abs(grad) - lam, 0.0),
                    np.abs(grad + lam * np.sign(beta)))
    return float(np.max(viol)) if viol.size else 0.0


def _active_set_refine(G, b, lam, beta, target, max_pivots=None):
    """Pivoting refinement of a proximal iterate.

    Proximal iterations locate the neighborhood of the optimum long
    before they polish coefficients on badly conditioned designs. This
    solves the stationarity system (G x)_A = b_A - (lam/2) sign(x_A)
    exactly on the guessed support, then pivots: drop an active
    coordinate whose solved sign flips, or add the worst-violating
    inactive coordinate, until the subgradient certificate meets
    ``target``. Returns the refined vector or None.
    """
    w = beta.shape[0]
    if max_pivots is None:
        max_pivots = 4 * w + 8
    support = [int(i) for i in np.flatnonzero(beta)]
    signs = {i: float(np.sign(beta[i])) for i in support}

    for _ in range(max_pivots):
        x = np.zeros(w)
        if support:
            idx = np.array(sorted(support))
            s = np.array([signs[i] for i in idx])
            sub = G[np.ix_(idx, idx)]
            rhs = b[idx] - 0.5 * lam * s
            sol = np.linalg.lstsq(sub, rhs, rcond=None)[0]
            flipped = sol * s < 0
            if np.any(flipped):
                worst = idx[int(np.argmin(sol * s))]
                support.remove(int(worst))
                signs.pop(int(worst))
                continue
            x[idx] = sol
        grad = 2.0 * (G @ x - b)
        inactive = [j for j in range(w) if j not in signs]
        if inactive:
            viol = np.abs(grad[inactive]) - lam
            j_rel = int(np.argmax(viol))
            if viol[j_rel] > target:
                j = inactive[j_rel]
                support.append(j)
                signs[j] = -float(np.sign(grad[j]))
                continue
        if _certificate(G, b, lam, x) <= target:
            return x
        return None
    return None


def solve_lasso(problem: FitProblem, tol: float = 1e-8,
                max_iter: int = 50000) -> FitResult:
    """Minimize the stacked objective; returns coefficients in original units.

    Lambda = 0 falls back to the direct (minimum-norm) least-squares
    solve; otherwise a monotone FISTA iteration with backtracking runs
    until both the relative objective change and the subgradient
    optimality residual drop below ``tol`` (scaled). Non-convergence
    raises SolverError carrying the final residual.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    X, y, lam = problem.X, problem.y, problem.lam

    scale = np.sqrt(np.mean(X ** 2, axis=0))
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = X / scale

    G = Xs.T @ Xs
    b = Xs.T @ y
    c0 = float(y @ y)
    grad_scale = max(1.0, float(np.max(np.abs(2.0 * b))))

    def objective(beta):
        return float(beta @ G @ beta - 2.0 * b @ beta + c0) + lam * float(np.sum(np.abs(beta)))

    if lam == 0.0:
        beta, _res, rank, _sv = np.linalg.lstsq(Xs, y, rcond=None)
        obj = objective(beta)
        cert = _certificate(G, b, 0.0, beta)
        deficient = bool(rank < problem.w)
        if deficient:
            logger.warning("rank-deficient fit (rank %d < %d); minimum-norm "
                           "solution reported", rank, problem.w)
        return FitResult(alpha=beta / scale, objective=obj, iterations=0,
                         cert_residual=cert, converged=True,
                         objective_history=[obj], rank_deficient=deficient)

    # Lipschitz seed for backtracking; exact for the quadratic but kept
    # adaptive so ill-scaled problems stay safe
    L = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    L = max(L, 1e-12)
    eta = 2.0

    beta = np.zeros(problem.w)
    z = beta.copy()
    t_acc = 1.0
    f_best = objective(beta)
    f_prev_cand = f_best
    history = [f_best]
    cert = _certificate(G, b, lam, beta)

    def smooth(bb):
        return float(bb @ G @ bb - 2.0 * b @ bb + c0)

    for it in range(1, max_iter + 1):
        grad_z = 2.0 * (G @ z - b)
        f_z = smooth(z)
        while True:
            cand = soft_threshold(z - grad_z / L, lam / L)
            diff = cand - z
            quad = f_z + float(grad_z @ diff) + 0.5 * L * float(diff @ diff)
            if smooth(cand) <= quad + 1e-12 * max(1.0, abs(quad)):
                break
            L *= eta
        f_cand = objective(cand)

        # adaptive restart: drop the momentum whenever the candidate
        # objective rises, which tames ill-conditioned problems
        if f_cand > f_prev_cand:
            t_acc = 1.0
            z = beta.copy()
            f_prev_cand = objective(beta)
            history.append(f_best)
            continue
        f_prev_cand = f_cand

        # monotone variant: never accept an objective increase
        if f_cand <= f_best:
            beta_new, f_new = cand, f_cand
        else:
            beta_new, f_new = beta, f_best
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_acc ** 2))
        z = beta_new + (t_acc / t_next) * (cand - beta_new) \
            + ((t_acc - 1.0) / t_next) * (beta_new - beta)
        beta, t_acc = beta_new, t_next

        history.append(f_new)
        rel_change = abs(f_best - f_new) / max(1.0, abs(f_best))
        f_best = f_new
        if rel_change < tol or it % 250 == 0:
            trial = beta
            cert = _certificate(G, b, lam, beta)
            if cert > tol * grad_scale:
                refined = _active_set_refine(G, b, lam, beta, tol * grad_scale)
                if (refined is not None and objective(refined)
                        <= f_best + tol * max(1.0, abs(f_best))):
                    trial = refined
                    cert = _certificate(G, b, lam, refined)
            if cert <= tol * grad_scale:
                f_final = min(objective(trial), f_best)
                history.append(f_final)
                return FitResult(alpha=trial / scale, objective=f_final,
                                 iterations=it, cert_residual=cert,
                                 converged=True, objective_history=history)

    cert = _certificate(G, b, lam, beta)
    raise SolverError(f"lasso did not converge in {max_iter} iterations; "
                      f"final optimality residual {cert:.3e} "
                      f"(tolerance {tol * grad_scale:.3e})")


def coordinate_descent_lasso(X, y, lam, tol=1e-12, max_iter=200000):
    """Plain cyclic coordinate descent on the same objective.

    Kept as an independent reference implementation for cross-checking
    the FISTA path; do not use for production fits.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    n, w = X.shape
    G = X.T @ X
    b = X.T @ y
    beta = np.zeros(w)
    for _ in range(max_iter):
        delta = 0.0
        for j in range(w):
            gjj = G[j, j]
            if gjj <= 0:
                continue
            rho = b[j] - float(G[j] @ beta) + gjj * beta[j]
            new = float(soft_threshold(np.array([rho]), lam / 2.0)[0]) / gjj
            delta = max(delta, abs(new - beta[j]))
            beta[j] = new
        if delta < tol:
            break
    return beta


# ---------------------------------------------------------------------------
# similarity metrics
# ---------------------------------------------------------------------------

def sim_metric(a, b) -> float:
    """Cosine similarity in percent, 100 * a.b / (|a| |b|)."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape:
        raise ValueError("series must have equal length")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("SIM undefined for zero-norm input")
    return 100.0 * float(a @ b) / (na * nb)


def vaf_metric(a, b) -> float:
    """Variance accounted for, 100 * (1 - var(a - b) / var(a))."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape:
        raise ValueError("series must have equal length")
    va = np.var(a, ddof=1)
    if va == 0.0:
        raise ValueError("VAF undefined for a constant reference series")
    return 100.0 * (1.0 - np.var(a - b, ddof=1) / va)


@dataclass
class TaskMetrics:
    sim_mean: float
    sim_sd: float
    vaf_mean: float
    vaf_sd: float
    n: int


def predicted_torques(trial: GaitTrial, basis: BasisSet, params: ModelParams,
                      alpha: np.ndarray) -> np.ndarray:
    """(n, 2) controller output along a stride, Nm/kg."""
    X, _ = trial_rows(trial, basis, params)
    return (X @ alpha).reshape(-1, 2)


def _trial_metrics(trial, basis, params, alpha, pred=None):
    """Side-averaged SIM and VAF of one stride."""
    if pred is None:
        pred = predicted_torques(trial, basis, params, alpha)
    sim = 0.5 * (sim_metric(trial.hip_torque_l, pred[:, 0])
                 + sim_metric(trial.hip_torque_r, pred[:, 1]))
    vaf = 0.5 * (vaf_metric(trial.hip_torque_l, pred[:, 0])
                 + vaf_metric(trial.hip_torque_r, pred[:, 1]))
    return sim, vaf


def _aggregate(values_by_task: dict) -> dict:
    out = {}
    for task, vals in values_by_task.items():
        sims = np.array([v[0] for v in vals])
        vafs = np.array([v[1] for v in vals])
        sd = lambda x: float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        out[task] = TaskMetrics(sim_mean=float(np.mean(sims)), sim_sd=sd(sims),
                                vaf_mean=float(np.mean(vafs)), vaf_sd=sd(vafs),
                                n=sims.size)
    return out


def evaluate_tasks(dataset: GaitDataset, basis: BasisSet, params: ModelParams,
                   alpha: np.ndarray) -> dict:
    """Per-task SIM/VAF of a coefficient vector, mean (SD) across subjects.

    Left and right sides are averaged together per stride; a subject's
    strides of the same task are averaged before aggregating.
    """
    per_task: dict = {}
    for task in dataset.tasks:
        vals = []
        for subject in dataset.subjects:
            trials = [t for t in dataset.trials
                      if t.task == task and t.subject_id == subject]
            if not trials:
                continue
            pairs = [_trial_metrics(t, basis, params, alpha) for t in trials]
            vals.append((float(np.mean([p[0] for p in pairs])),
                         float(np.mean([p[1] for p in pairs]))))
        if vals:
            per_task[task] = vals
    return _aggregate(per_task)


@dataclass
class CVReport:
    per_task: dict                      # TaskLabel -> TaskMetrics across folds
    fold_subjects: tuple[str, ...]
    fold_alphas: list
    missing_tasks: tuple[str, ...]


def loso_cv(dataset: GaitDataset, basis: BasisSet, params: ModelParams,
            weights_config: dict | None = None, tol: float = 1e-8,
            max_iter: int = 50000) -> CVReport:
    """Leave-one-subject-out cross-validation of the fitting pipeline.

    Each fold fits on all other subjects and scores the held-out
    subject's strides per task (sides averaged). Reported numbers are
    mean (SD) across folds, Table-style. Tasks scored in some fold whose
    training subjects never performed them are reported in
    ``missing_tasks``.
    """
    subjects = dataset.subjects
    if len(subjects) < 2:
        raise DataError("LOSO cross-validation needs at least two subjects")
    cfg = dict(DEFAULT_WEIGHTS)
    cfg.update(weights_config or {})

    # regressor rows are fold-independent; build them once
    rows = [trial_rows(t, basis, params) for t in dataset.trials]
    phi0 = zero_pose_regressor(basis, params)

    per_task: dict = {t: [] for t in dataset.tasks}
    alphas = []
    uncovered: set = set()
    for held_out in subjects:
        train_idx = [i for i, t in enumerate(dataset.trials)
                     if t.subject_id != held_out]
        if not train_idx:
            raise DataError("cannot assemble a fit from an empty dataset")
        train_tasks = {dataset.trials[i].task for i in train_idx}
        problem = _assemble_from_rows(
            [dataset.trials[i] for i in train_idx],
            [rows[i] for i in train_idx], basis, phi0, cfg)
        fit = solve_lasso(problem, tol=tol, max_iter=max_iter)
        alphas.append(fit.alpha)

        fold_vals: dict = {}
        for i, trial in enumerate(dataset.trials):
            if trial.subject_id != held_out:
                continue
            if trial.task not in train_tasks:
                uncovered.add(trial.task.value)
            pred = (rows[i][0] @ fit.alpha).reshape(-1, 2)
            fold_vals.setdefault(trial.task, []).append(
                _trial_metrics(trial, basis, params, fit.alpha, pred=pred))
        for task, pairs in fold_vals.items():
            per_task[task].append((float(np.mean([p[0] for p in pairs])),
                                   float(np.mean([p[1] for p in pairs]))))

    missing = tuple(sorted(uncovered))
    if missing:
        logger.warning("tasks scored without any training coverage: %s", missing)
    per_task = {t: v for t, v in per_task.items() if v}
    return CVReport(per_task=_aggregate(per_task), fold_subjects=subjects,
                    fold_alphas=alphas, missing_tasks=missing)


def command_torque(u_norm, mass: float, loa: float,
                   sat: float = DEFAULT_SATURATION_NM) -> np.ndarray:
    """Delivered hip torque: normalized torque x body mass x %LOA, clamped.

    The default saturation matches the actuators' 12.8 Nm continuous
    torque rating.
    """
    if mass <= 0:
        raise ValueError("mass must be positive")
    if not 0.0 <= loa <= 1.0:
        raise ValueError("level of assistance must lie in [0, 1]")
    if sat <= 0:
        raise ValueError("saturation must be positive")
    u = np.asarray(u_norm, float) * mass * loa
    return np.clip(u, -sat, sat)
