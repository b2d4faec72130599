"""Energy-shaping control law, matching compliance and passivity audits.

A ``ShapingSpec`` pairs a basis set with a coefficient vector alpha. The
assembled shaping vector

    sigma(state) = sum_i alpha_i xi_i(state)

collects, with their control-law signs, the negated potential-gradient
shape, the skew velocity couplings J2 M^-1 p and the power-leak input
T_ext. All admissible xi_i have zero unactuated rows, so the feasible
control law is u = B^+ sigma = Phi(state) alpha and the matching condition
holds identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, Channel, Mode, regressor_qd
from .errors import BasisError
from .model import (
    B_MAP,
    ModelParams,
    NQ,
    State,
    THL,
    THR,
    Trajectory,
    grad_H,
    mass_matrix,
    mass_matrix_partials,
    schur_blocks,
    simulate,
)


@dataclass(frozen=True)
class ShapingSpec:
    """Controller description: model, basis family and coefficients.

    The model parameters ride along because velocity- and rate-dependent
    channels need M(q) to turn momenta into joint rates.
    """

    params: ModelParams
    basis: BasisSet
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if alpha.shape[0] != self.basis.w:
            raise BasisError(
                f"alpha has {alpha.shape[0]} entries for {self.basis.w} basis functions")
        object.__setattr__(self, "alpha", alpha)

    @property
    def mode(self) -> Mode:
        return self.basis.mode


def control_law(spec: ShapingSpec, state: State) -> np.ndarray:
    """Feasible hip torque u = B^+ (-N_act + J2 M^-1 p + T_ext) = Phi alpha."""
    qdot = state.velocity(spec.params)
    return regressor_qd(spec.basis, state.q, qdot) @ spec.alpha


def shaping_vector(spec: ShapingSpec, q: np.ndarray, qdot: np.ndarray,
                   channels: tuple[Channel, ...] | None = None) -> np.ndarray:
    """Signed 5-vector sum of (selected) channel contributions."""
    sigma = np.zeros(NQ)
    for a, fn in zip(spec.alpha, spec.basis.functions):
        if channels is not None and fn.channel not in channels:
            continue
        if a != 0.0:
            sigma += a * fn.eval(q, qdot)
    return sigma


def build_J2(q_jacobian: np.ndarray) -> np.ndarray:
    """Skew interconnection block J2 = (grad_q Q)' - grad_q Q."""
    J = np.asarray(q_jacobian, dtype=float)
    return J.T - J


def matching_residual(params: ModelParams, state: State,
                      spec: ShapingSpec) -> np.ndarray:
    """Unactuated rows of the matching condition, [I - Z | 0] sigma.

    Zero (to machine precision) for every spec built from compliant
    bases; a nonzero value flags a shaping vector that leaks into the
    unactuated coordinates.
    """
    blocks = schur_blocks(params, state.q)
    sigma = shaping_vector(spec, state.q, state.velocity(params))
    return (np.eye(3) - blocks.Z_lam) @ sigma[:3]


def shaped_potential(spec: ShapingSpec, q) -> float:
    """Added potential V_hat(q) = -sum of alpha_i * primitive_i over the
    potential channel."""
    q = np.asarray(q, dtype=float).reshape(NQ)
    v = 0.0
    for a, fn in zip(spec.alpha, spec.basis.functions):
        if fn.channel is not Channel.POTENTIAL:
            continue
        if fn.primitive is None:
            raise BasisError(f"potential basis {fn.id} lacks a primitive")
        v -= a * fn.primitive(q)
    return v


def closed_loop_grf(params: ModelParams, state: State, spec: ShapingSpec,
                    v) -> np.ndarray:
    """Ground-reaction force of the shaped closed-loop system.

    lambda_tilde = W A M^-1 [Mdot qdot + grad_q H_tilde - J2 M^-1 p
    - B v - T_ext]; with the channel sums this is grad_q H - sigma - B v
    inside the bracket. Matches the open-loop multiplier under the
    matched torque tau = B(u + v).
    """
    v = np.asarray(v, dtype=float).reshape(2)
    M = mass_matrix(params, state.q)
    M_inv = np.linalg.inv(M)
    qdot = M_inv @ state.p
    dM = mass_matrix_partials(params, state.q)
    M_dot = dM[2] * qdot[2] + dM[3] * qdot[3] + dM[4] * qdot[4]
    gq, _ = grad_H(params, state)
    sigma = shaping_vector(spec, state.q, qdot)
    rhs = M_inv[:2, :] @ (M_dot @ qdot + gq - sigma - B_MAP @ v)
    return np.linalg.solve(M_inv[:2, :2], rhs)


def shaped_hamiltonian(spec: ShapingSpec, params: ModelParams,
                       state: State) -> float:
    from .model import hamiltonian
    return hamiltonian(params, state) + shaped_potential(spec, state.q)


def simulate_closed_loop(params: ModelParams, spec: ShapingSpec, state0: State,
                         dt: float, n_steps: int, human=None,
                         record_every: int = 1,
                         record_grf: bool = False) -> Trajectory:
    """Run the pinned-foot dynamics under u = control_law(spec, .)."""
    basis = spec.basis
    alpha = spec.alpha

    def controller(t, q, qdot):
        return regressor_qd(basis, q, qdot) @ alpha

    return simulate(params, state0, dt, n_steps, controller=controller,
                    human=human, record_every=record_every,
                    record_grf=record_grf)


@dataclass(frozen=True)
class EnergyAudit:
    """One sample of the closed-loop energy bookkeeping."""

    t: float
    H_tilde: float
    port_power_human: float
    port_power_leak: float
    balance_residual: float


@dataclass
class AuditSeries:
    """Passivity audit along a trajectory.

    ``integrated_residual`` is |Delta H_tilde - (work through the human
    and leak ports)| over the whole run, with port work accumulated per
    integration interval under the actually-applied (held) torques.
    """

    t: np.ndarray
    H_tilde: np.ndarray
    port_power_human: np.ndarray
    port_power_leak: np.ndarray
    balance_residual: np.ndarray
    matching_residual_inf: np.ndarray
    integrated_residual: float
    mean_abs_H: float

    def __len__(self):
        return self.t.shape[0]

    def row(self, i: int) -> EnergyAudit:
        return EnergyAudit(
            t=float(self.t[i]),
            H_tilde=float(self.H_tilde[i]),
            port_power_human=float(self.port_power_human[i]),
            port_power_leak=float(self.port_power_leak[i]),
            balance_residual=float(self.balance_residual[i]),
        )

    def to_csv(self) -> str:
        lines = ["t,H_tilde,p_human,p_leak,residual,matching_residual_inf"]
        for i in range(len(self)):
            vals = (self.t[i], self.H_tilde[i], self.port_power_human[i],
                    self.port_power_leak[i], self.balance_residual[i],
                    self.matching_residual_inf[i])
            lines.append(",".join(format(x, ".12g") for x in vals))
        return "\n".join(lines) + "\n"


def passivity_audit(trajectory: Trajectory, spec: ShapingSpec,
                    v_sequence: np.ndarray | None = None,
                    matching_every: int = 0) -> AuditSeries:
    """Check dH_tilde/dt against the human and power-leak port powers.

    ``v_sequence`` overrides the human torques recorded in the
    trajectory (one row per sample). Per-sample residuals use central
    differences of H_tilde; the headline ``integrated_residual`` is the
    exact energy difference minus the trapezoid-integrated port power.
    ``matching_every`` > 0 additionally logs the matching-condition
    residual every that-many samples (0 logs only the first sample).
    """
    n = len(trajectory)
    params = spec.params
    v = trajectory.v if v_sequence is None else np.asarray(v_sequence, float)
    if v.shape != (n, 2):
        raise ValueError(f"human input sequence must have shape {(n, 2)}")

    qdot_act = np.empty((n, 2))
    t_ext = np.empty((n, 2))
    h_tilde = np.empty(n)
    for i in range(n):
        st = trajectory.state(i)
        qdot = st.velocity(params)
        qdot_act[i] = qdot[[THL, THR]]
        leak = shaping_vector(spec, st.q, qdot, channels=(Channel.LEAK,))
        t_ext[i] = leak[[THL, THR]]
        h_tilde[i] = trajectory.H[i] + shaped_potential(spec, st.q)

    p_h = np.einsum("ij,ij->i", v, qdot_act)
    p_leak = np.einsum("ij,ij->i", t_ext, qdot_act)
    p_tot = p_h + p_leak

    dt = trajectory.dt
    dH = np.gradient(h_tilde, dt, edge_order=2) if n > 2 else np.zeros(n)
    residual = dH - p_tot

    work = dt * (float(np.sum(p_tot)) - 0.5 * (p_tot[0] + p_tot[-1]))
    integrated = abs((h_tilde[-1] - h_tilde[0]) - work)

    match_inf = np.zeros(n)
    idxs = range(0, n, matching_every) if matching_every > 0 else [0]
    for i in idxs:
        r = matching_residual(params, trajectory.state(i), spec)
        match_inf[i] = float(np.max(np.abs(r)))

    return AuditSeries(
        t=trajectory.t,
        H_tilde=h_tilde,
        port_power_human=p_h,
        port_power_leak=p_leak,
        balance_residual=residual,
        matching_residual_inf=match_inf,
        integrated_residual=integrated,
        mean_abs_H=float(np.mean(np.abs(h_tilde))),
    )
