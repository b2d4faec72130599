"""Constrained port-Hamiltonian dynamics of a planar point-footed biped.

The mechanism has three rigid bodies sharing one hip point: a trunk and two
lumped (thigh+shank) legs. The stance (right) foot sits at the Cartesian
point (p_x, p_y), which is pinned to the ground by a holonomic constraint
during simulation. Generalized coordinates:

    q = [p_x, p_y, phi, theta_l, theta_r]

* ``phi``      global right-thigh angle, CCW from the downward vertical
               (upright standing gives phi = 0; positive tilts the foot
               toward +x, the forward direction)
* ``theta_l``  left hip angle (thigh-to-trunk), flexion positive
* ``theta_r``  right hip angle (thigh-to-trunk), flexion positive

Chained segment orientations: trunk angle = phi - theta_r, left thigh
angle = phi - theta_r + theta_l, both measured like phi. Conjugate momenta
are p = M(q) qdot with M the 5x5 mass/inertia matrix, and the Hamiltonian
is H = 1/2 p' M^-1 p + V.

Hot simulation paths run on a hand-written scalar form of the reduced
3-DoF dynamics (p_x, p_y pinned); the generic numpy implementation below
is the reference the scalar form is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IntegrationError, InternalConsistencyError

# coordinate indices
PX, PY, PHI, THL, THR = range(5)

NQ = 5
NU = 2

# input mapping: hip torques act on (theta_l, theta_r)
B_MAP = np.zeros((5, 2))
B_MAP[THL, 0] = 1.0
B_MAP[THR, 1] = 1.0

_EX = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0, 0.0, 0.0])

# angle coefficient vectors: segment angle = g . q
_G_RLEG = np.array([0.0, 0.0, 1.0, 0.0, 0.0])   # phi
_G_TRUNK = np.array([0.0, 0.0, 1.0, 0.0, -1.0])  # phi - theta_r
_G_LLEG = np.array([0.0, 0.0, 1.0, 1.0, -1.0])   # phi - theta_r + theta_l


@dataclass(frozen=True)
class ModelParams:
    """Segment masses, lengths, hip-to-COM distances and inertias.

    Lengths in m, masses in kg, inertias in kg m^2 about each segment's own
    COM. ``c_trunk``/``c_leg`` are distances from the hip point to the
    segment COM (trunk COM above the hip, leg COM toward the foot).
    """

    m_trunk: float
    m_leg: float
    l_trunk: float
    l_leg: float
    c_trunk: float
    c_leg: float
    I_trunk: float
    I_leg: float
    g: float = 9.81

    def __post_init__(self):
        for name in ("m_trunk", "m_leg", "l_trunk", "l_leg", "g"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not 0 <= self.c_trunk <= self.l_trunk:
            raise ValueError("c_trunk must lie within [0, l_trunk]")
        if not 0 <= self.c_leg <= self.l_leg:
            raise ValueError("c_leg must lie within [0, l_leg]")
        if self.I_trunk < 0 or self.I_leg < 0:
            raise ValueError("inertias must be non-negative")

    @property
    def total_mass(self) -> float:
        return self.m_trunk + 2.0 * self.m_leg

    @classmethod
    def from_anthropometry(cls, body_mass: float = 80.0,
                           height: float = 1.78) -> "ModelParams":
        """Default parameters from standard per-segment body fractions.

        Trunk is the lumped head-arms-trunk segment; each leg lumps thigh,
        shank and foot. The fractions are conventional table values and are
        meant as a configuration default, not ground truth.
        """
        m_trunk = 0.678 * body_mass
        m_leg = 0.161 * body_mass
        l_trunk = 0.288 * height
        l_leg = 0.530 * height
        return cls(
            m_trunk=m_trunk,
            m_leg=m_leg,
            l_trunk=l_trunk,
            l_leg=l_leg,
            c_trunk=0.626 * l_trunk,
            c_leg=0.400 * l_leg,
            I_trunk=m_trunk * (0.496 * l_trunk) ** 2,
            I_leg=m_leg * (0.300 * l_leg) ** 2,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        """Build from the JSON config schema (COM positions as fractions)."""
        try:
            l_trunk = float(d["l_trunk"])
            l_leg = float(d["l_leg"])
            return cls(
                m_trunk=float(d["m_trunk"]),
                m_leg=float(d["m_leg"]),
                l_trunk=l_trunk,
                l_leg=l_leg,
                c_trunk=float(d["com_fraction_trunk"]) * l_trunk,
                c_leg=float(d["com_fraction_leg"]) * l_leg,
                I_trunk=float(d["I_trunk"]),
                I_leg=float(d["I_leg"]),
                g=float(d.get("g", 9.81)),
            )
        except KeyError as e:
            raise ValueError(f"model params missing field {e}") from e

    def to_dict(self) -> dict:
        return {
            "m_trunk": self.m_trunk,
            "m_leg": self.m_leg,
            "l_trunk": self.l_trunk,
            "l_leg": self.l_leg,
            "com_fraction_trunk": self.c_trunk / self.l_trunk,
            "com_fraction_leg": self.c_leg / self.l_leg,
            "I_trunk": self.I_trunk,
            "I_leg": self.I_leg,
            "g": self.g,
        }


@dataclass(frozen=True)
class State:
    """Phase-space point: coordinates q and conjugate momenta p = M(q) qdot."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(NQ)
        p = np.asarray(self.p, dtype=float).reshape(NQ)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_velocity(cls, params: ModelParams, q, qdot) -> "State":
        q = np.asarray(q, dtype=float).reshape(NQ)
        qdot = np.asarray(qdot, dtype=float).reshape(NQ)
        return cls(q=q, p=mass_matrix(params, q) @ qdot)

    def velocity(self, params: ModelParams) -> np.ndarray:
        return np.linalg.solve(mass_matrix(params, self.q), self.p)


def _segments(params: ModelParams):
    """Per-body (mass, inertia, angular coefficient vector, lever list).

    Every COM position is (p_x, p_y) plus a sum of constant-length levers
    rho * u(beta) with u(beta) = (-sin beta, cos beta) and beta = g . q.
    """
    return (
        (params.m_leg, params.I_leg, _G_RLEG,
         ((params.l_leg - params.c_leg, _G_RLEG),)),
        (params.m_trunk, params.I_trunk, _G_TRUNK,
         ((params.l_leg, _G_RLEG), (params.c_trunk, _G_TRUNK))),
        (params.m_leg, params.I_leg, _G_LLEG,
         ((params.l_leg, _G_RLEG), (-params.c_leg, _G_LLEG))),
    )


def _com_jacobians(params: ModelParams, q: np.ndarray):
    """Yield (m, I, Jx, Jy, Jw) rows: d(COM position)/d(qdot) per body."""
    for m, inertia, gw, levers in _segments(params):
        jx = _EX.copy()
        jy = _EY.copy()
        for rho, g in levers:
            beta = float(g @ q)
            jx += rho * (-math.cos(beta)) * g
            jy += rho * (-math.sin(beta)) * g
        yield m, inertia, jx, jy, gw


def mass_matrix(params: ModelParams, q) -> np.ndarray:
    """Symmetric positive definite 5x5 mass/inertia matrix M(q)."""
    q = np.asarray(q, dtype=float).reshape(NQ)
    M = np.zeros((NQ, NQ))
    for m, inertia, jx, jy, gw in _com_jacobians(params, q):
        M += m * (np.outer(jx, jx) + np.outer(jy, jy))
        M += inertia * np.outer(gw, gw)
    return M


def mass_matrix_partials(params: ModelParams, q) -> np.ndarray:
    """dM/dq as a (5, 5, 5) array; slices for p_x and p_y are zero."""
    q = np.asarray(q, dtype=float).reshape(NQ)
    dM = np.zeros((NQ, NQ, NQ))
    for m, _inertia, gw, levers in _segments(params):
        jx = _EX.copy()
        jy = _EY.copy()
        for rho, g in levers:
            beta = float(g @ q)
            jx += rho * (-math.cos(beta)) * g
            jy += rho * (-math.sin(beta)) * g
        for k in (PHI, THL, THR):
            djx = np.zeros(NQ)
            djy = np.zeros(NQ)
            for rho, g in levers:
                if g[k] == 0.0:
                    continue
                beta = float(g @ q)
                djx += rho * math.sin(beta) * g[k] * g
                djy += rho * (-math.cos(beta)) * g[k] * g
            dM[k] += m * (np.outer(djx, jx) + np.outer(jx, djx)
                          + np.outer(djy, jy) + np.outer(jy, djy))
    return dM


def potential_energy(params: ModelParams, q) -> float:
    """Gravitational potential, sum of m g (COM height) over the bodies."""
    q = np.asarray(q, dtype=float).reshape(NQ)
    v = 0.0
    for m, _inertia, _gw, levers in _segments(params):
        y = q[PY]
        for rho, g in levers:
            y += rho * math.cos(float(g @ q))
        v += m * params.g * y
    return v


def potential_gradient(params: ModelParams, q) -> np.ndarray:
    """Analytic grad_q V; the p_x component is identically zero."""
    q = np.asarray(q, dtype=float).reshape(NQ)
    grad = np.zeros(NQ)
    for m, _inertia, _jx, jy, _gw in _com_jacobians(params, q):
        grad += m * params.g * jy
    return grad


def hamiltonian(params: ModelParams, state: State) -> float:
    qdot = state.velocity(params)
    return 0.5 * float(state.p @ qdot) + potential_energy(params, state.q)


def grad_H(params: ModelParams, state: State):
    """Gradients of H: returns (grad_q H, grad_p H).

    grad_p H = M^-1 p; the kinetic part of grad_q H uses the analytic
    mass-matrix partials: d/dq_i (1/2 p' M^-1 p) = -1/2 qdot' dM/dq_i qdot.
    """
    qdot = state.velocity(params)
    dM = mass_matrix_partials(params, state.q)
    gq = potential_gradient(params, state.q)
    for k in (PHI, THL, THR):
        gq[k] += -0.5 * float(qdot @ dM[k] @ qdot)
    return gq, qdot


@dataclass(frozen=True)
class KineticEnergyCheck:
    via_mass_matrix: float
    via_segments: float
    rel_discrepancy: float


def kinetic_energy_check(params: ModelParams, state: State) -> KineticEnergyCheck:
    """Cross-check kinetic energy against explicit segment kinematics.

    The second value is assembled from per-segment 1/2 m |v_com|^2 +
    1/2 I w^2 with hand-written velocity formulas, independent of the
    Jacobian machinery behind ``mass_matrix``.
    """
    qdot = state.velocity(params)
    t_matrix = 0.5 * float(qdot @ mass_matrix(params, state.q) @ qdot)

    phi, thl, thr = state.q[PHI], state.q[THL], state.q[THR]
    vx, vy, phid, thld, thrd = qdot
    a = params.l_leg
    bt = phi - thr
    bl = phi - thr + thl
    btd = phid - thrd
    bld = phid - thrd + thld

    hvx = vx - a * math.cos(phi) * phid
    hvy = vy - a * math.sin(phi) * phid

    r1 = a - params.c_leg
    v_r = (vx - r1 * math.cos(phi) * phid, vy - r1 * math.sin(phi) * phid)
    v_t = (hvx - params.c_trunk * math.cos(bt) * btd,
           hvy - params.c_trunk * math.sin(bt) * btd)
    v_l = (hvx + params.c_leg * math.cos(bl) * bld,
           hvy + params.c_leg * math.sin(bl) * bld)

    t_seg = 0.0
    for m, inertia, v, w in (
        (params.m_leg, params.I_leg, v_r, phid),
        (params.m_trunk, params.I_trunk, v_t, btd),
        (params.m_leg, params.I_leg, v_l, bld),
    ):
        t_seg += 0.5 * m * (v[0] ** 2 + v[1] ** 2) + 0.5 * inertia * w ** 2

    scale = max(abs(t_matrix), abs(t_seg), 1e-12)
    return KineticEnergyCheck(t_matrix, t_seg, abs(t_matrix - t_seg) / scale)


def constraint_matrix() -> np.ndarray:
    """Stance-foot constraint Jacobian A = [I_2 | 0_{2x3}]."""
    A = np.zeros((2, NQ))
    A[0, PX] = 1.0
    A[1, PY] = 1.0
    return A


@dataclass(frozen=True)
class SchurBlocks:
    """Mass-matrix partition and projection matrices of the matching machinery.

    ``delta`` is the Schur complement M1 - M2 M4^-1 M2', ``W`` the inverse
    of its upper-left 2x2 inverse-block (the same W that appears in the
    ground-reaction-force solve), and ``X_lam``/``B_lam``/``B_lam_perp``
    the block-triangular projection, constrained input map and its left
    annihilator.
    """

    M1: np.ndarray
    M2: np.ndarray
    M4: np.ndarray
    delta: np.ndarray
    W: np.ndarray
    Z_lam: np.ndarray
    X_lam: np.ndarray
    B_lam: np.ndarray
    B_lam_perp: np.ndarray


def schur_blocks(params: ModelParams, q) -> SchurBlocks:
    q = np.asarray(q, dtype=float).reshape(NQ)
    M = mass_matrix(params, q)
    M1 = M[:3, :3]
    M2 = M[:3, 3:]
    M4 = M[3:, 3:]
    try:
        M4_inv = np.linalg.inv(M4)
        delta = M1 - M2 @ M4_inv @ M2.T
        delta_inv = np.linalg.inv(delta)
        W = np.linalg.inv(delta_inv[:2, :2])
    except np.linalg.LinAlgError as e:
        raise InternalConsistencyError(
            "singular mass-matrix block; the model parameters should make "
            "this impossible") from e

    Z = np.zeros((3, 3))
    Z[:2, :] = W @ delta_inv[:2, :]
    K = Z @ M2 @ M4_inv

    X = np.zeros((NQ, NQ))
    X[:3, :3] = np.eye(3) - Z
    X[:3, 3:] = K
    X[3:, 3:] = np.eye(2)

    B_lam = np.vstack([K, np.eye(2)])
    B_perp = np.hstack([np.eye(3), -K])
    return SchurBlocks(M1=M1, M2=M2, M4=M4, delta=delta, W=W, Z_lam=Z,
                       X_lam=X, B_lam=B_lam, B_lam_perp=B_perp)


def grf_lambda(params: ModelParams, state: State, tau) -> np.ndarray:
    """Ground-reaction force multiplier for total generalized force tau.

    Solves A qddot = 0 along the constrained dynamics:
    lambda = W A M^-1 [Mdot qdot + grad_q H - tau], W = (A M^-1 A')^-1.
    """
    tau = np.asarray(tau, dtype=float).reshape(NQ)
    M = mass_matrix(params, state.q)
    M_inv = np.linalg.inv(M)
    qdot = M_inv @ state.p
    dM = mass_matrix_partials(params, state.q)
    M_dot = dM[PHI] * qdot[PHI] + dM[THL] * qdot[THL] + dM[THR] * qdot[THR]
    gq, _ = grad_H(params, state)
    rhs = M_inv[:2, :] @ (M_dot @ qdot + gq - tau)
    return np.linalg.solve(M_inv[:2, :2], rhs)


def gravity_comp_torque(params: ModelParams, q) -> np.ndarray:
    """Hip torques canceling the actuated rows of grad_q V."""
    grad = potential_gradient(params, q)
    return grad[[THL, THR]]


# ---------------------------------------------------------------------------
# reduced 3-DoF scalar core (p_x, p_y pinned)
# ---------------------------------------------------------------------------

def _reduced_coeffs(params: ModelParams):
    """Constant coefficients of the reduced mass matrix and potential.

    The 3x3 angle block is k1*E + k2*Gt + k3*Gl + (kt cos th_r)*St
    - (kl cos(th_r - th_l))*Sl in the constant structure matrices spelled
    out in ``_reduced_mass``; V = m_tot g p_y + g (wr cos phi
    + wt cos(phi - th_r) + wl cos(phi - th_r + th_l)).
    """
    a = params.l_leg
    r1 = a - params.c_leg
    k1 = params.m_leg * r1 ** 2 + params.I_leg + (params.m_trunk + params.m_leg) * a ** 2
    k2 = params.m_trunk * params.c_trunk ** 2 + params.I_trunk
    k3 = params.m_leg * params.c_leg ** 2 + params.I_leg
    kt = params.m_trunk * a * params.c_trunk
    kl = params.m_leg * a * params.c_leg
    wr = params.m_leg * r1 + (params.m_trunk + params.m_leg) * a
    wt = params.m_trunk * params.c_trunk
    wl = -params.m_leg * params.c_leg
    return (k1, k2, k3, kt, kl, wr, wt, wl, params.g)


def _reduced_mass(c, thl, thr):
    """Entries of the symmetric angle-block mass matrix (phi, th_l, th_r)."""
    k1, k2, k3, kt, kl = c[0], c[1], c[2], c[3], c[4]
    ct = math.cos(thr)
    cl = math.cos(thr - thl)
    m00 = k1 + k2 + k3 + 2.0 * kt * ct - 2.0 * kl * cl
    m01 = k3 - kl * cl
    m02 = -k2 - k3 - kt * ct + kl * cl
    m11 = k3
    m12 = -k3
    m22 = k2 + k3
    return m00, m01, m02, m11, m12, m22


def _solve_sym3(m00, m01, m02, m11, m12, m22, b0, b1, b2):
    """Solve the symmetric 3x3 system M x = b by cofactors."""
    c00 = m11 * m22 - m12 * m12
    c01 = m02 * m12 - m01 * m22
    c02 = m01 * m12 - m02 * m11
    det = m00 * c00 + m01 * c01 + m02 * c02
    c11 = m00 * m22 - m02 * m02
    c12 = m01 * m02 - m00 * m12
    c22 = m00 * m11 - m01 * m01
    x0 = (c00 * b0 + c01 * b1 + c02 * b2) / det
    x1 = (c01 * b0 + c11 * b1 + c12 * b2) / det
    x2 = (c02 * b0 + c12 * b1 + c22 * b2) / det
    return x0, x1, x2


def _reduced_rhs(c, y, t, torque_fn):
    """Time derivative of the reduced state y = (phi, th_l, th_r, p0, p1, p2).

    ``torque_fn(t, y, qdot3)`` returns the total actuated torque
    (tau_l, tau_r); evaluating it here, at every integrator stage, keeps
    state feedback continuous rather than sample-and-hold.
    """
    phi, thl, thr, p0, p1, p2 = y
    m00, m01, m02, m11, m12, m22 = _reduced_mass(c, thl, thr)
    qd0, qd1, qd2 = _solve_sym3(m00, m01, m02, m11, m12, m22, p0, p1, p2)
    if torque_fn is not None:
        tau_l, tau_r = torque_fn(t, y, (qd0, qd1, qd2))
    else:
        tau_l = tau_r = 0.0

    kt, kl, wr, wt, wl, g = c[3], c[4], c[5], c[6], c[7], c[8]
    st = math.sin(thr)
    srl = math.sin(thr - thl)
    # d/dth_r of (m00, m01, m02) and d/dth_l of the same
    dr00 = -2.0 * kt * st + 2.0 * kl * srl
    dr01 = kl * srl
    dr02 = kt * st - kl * srl
    dl00 = -2.0 * kl * srl
    dl01 = -kl * srl
    dl02 = kl * srl

    bt = phi - thr
    bl = phi - thr + thl
    sphi = math.sin(phi)
    sbt = math.sin(bt)
    sbl = math.sin(bl)
    dV_phi = -g * (wr * sphi + wt * sbt + wl * sbl)
    dV_thl = -g * wl * sbl
    dV_thr = g * (wt * sbt + wl * sbl)

    # pdot_k = 1/2 qd' (dM/dq_k) qd - dV/dq_k + tau_k; dM/dphi = 0
    quad_r = 0.5 * (qd0 * qd0 * dr00) + qd0 * qd1 * dr01 + qd0 * qd2 * dr02
    quad_l = 0.5 * (qd0 * qd0 * dl00) + qd0 * qd1 * dl01 + qd0 * qd2 * dl02
    return (
        qd0,
        qd1,
        qd2,
        -dV_phi,
        quad_l - dV_thl + tau_l,
        quad_r - dV_thr + tau_r,
    )


def _reduced_hamiltonian(c, y):
    """H minus the constant m_tot g p_y offset of the pinned foot height."""
    phi, thl, thr, p0, p1, p2 = y
    m00, m01, m02, m11, m12, m22 = _reduced_mass(c, thl, thr)
    qd0, qd1, qd2 = _solve_sym3(m00, m01, m02, m11, m12, m22, p0, p1, p2)
    wr, wt, wl, g = c[5], c[6], c[7], c[8]
    t = 0.5 * (p0 * qd0 + p1 * qd1 + p2 * qd2)
    v = g * (wr * math.cos(phi) + wt * math.cos(phi - thr)
             + wl * math.cos(phi - thr + thl))
    return t + v


def _rk4_step(c, y, t, dt, torque_fn):
    k1 = _reduced_rhs(c, y, t, torque_fn)
    h = 0.5 * dt
    th = t + h
    y2 = tuple(y[i] + h * k1[i] for i in range(6))
    k2 = _reduced_rhs(c, y2, th, torque_fn)
    y3 = tuple(y[i] + h * k2[i] for i in range(6))
    k3 = _reduced_rhs(c, y3, th, torque_fn)
    y4 = tuple(y[i] + dt * k3[i] for i in range(6))
    k4 = _reduced_rhs(c, y4, t + dt, torque_fn)
    s = dt / 6.0
    return tuple(y[i] + s * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                 for i in range(6))


def reduced_from_state(params: ModelParams, state: State):
    """Project a full state onto the reduced chart (angles + their momenta)."""
    q = state.q
    return (q[PHI], q[THL], q[THR], state.p[PHI], state.p[THL], state.p[THR])


def state_from_reduced(params: ModelParams, y, p_x: float, p_y: float) -> State:
    """Lift a reduced state to the constraint manifold.

    The translational momenta are reconstructed from the coupling block of
    M(q) so that A M^-1 p = 0 holds exactly.
    """
    phi, thl, thr, p0, p1, p2 = y
    q = np.array([p_x, p_y, phi, thl, thr])
    c = _reduced_coeffs(params)
    m00, m01, m02, m11, m12, m22 = _reduced_mass(c, thl, thr)
    qd = _solve_sym3(m00, m01, m02, m11, m12, m22, p0, p1, p2)
    M = mass_matrix(params, q)
    p = np.zeros(NQ)
    p[:2] = M[:2, 2:] @ np.asarray(qd)
    p[2:] = (p0, p1, p2)
    return State(q=q, p=p)


def step(params: ModelParams, state: State, u, v, dt: float) -> State:
    """Advance the pinned-foot dynamics one fixed RK4 step.

    ``u`` and ``v`` are exoskeleton and human hip torques (theta_l,
    theta_r), held constant over the step. p_x and p_y stay exactly at
    their incoming values; the translational momenta of the returned
    state are the unique values consistent with the constraint. Use
    ``simulate`` for closed-loop runs, which evaluates torque callables
    continuously inside the integrator stages.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float).reshape(2)
    v = np.asarray(v, dtype=float).reshape(2)
    tl, tr = u[0] + v[0], u[1] + v[1]
    c = _reduced_coeffs(params)
    y = reduced_from_state(params, state)
    y = _rk4_step(c, y, 0.0, dt, lambda t, yy, qd: (tl, tr))
    if not all(math.isfinite(val) for val in y):
        raise IntegrationError(f"integration blew up within one step of dt={dt}")
    return state_from_reduced(params, y, state.q[PX], state.q[PY])


@dataclass
class Trajectory:
    """Sampled closed-loop run: states, inputs and energy along time."""

    t: np.ndarray
    q: np.ndarray          # (n, 5)
    p: np.ndarray          # (n, 5)
    u: np.ndarray          # (n, 2)
    v: np.ndarray          # (n, 2)
    H: np.ndarray          # (n,)
    lam: np.ndarray | None = None   # (n, 2) ground reaction force
    dt: float = 0.0

    def __len__(self):
        return self.t.shape[0]

    def state(self, i: int) -> State:
        return State(q=self.q[i], p=self.p[i])

    def to_csv(self) -> str:
        cols = ["t", "p_x", "p_y", "phi", "theta_l", "theta_r",
                "pp_x", "pp_y", "p_phi", "p_theta_l", "p_theta_r",
                "u_l", "u_r", "v_l", "v_r", "lambda_x", "lambda_y", "H"]
        lines = [",".join(cols)]
        lam = self.lam if self.lam is not None else np.full((len(self), 2), np.nan)
        for i in range(len(self)):
            row = ([self.t[i]] + list(self.q[i]) + list(self.p[i])
                   + list(self.u[i]) + list(self.v[i]) + list(lam[i])
                   + [self.H[i]])
            lines.append(",".join(format(x, ".12g") for x in row))
        return "\n".join(lines) + "\n"


def simulate(params: ModelParams, state0: State, dt: float, n_steps: int,
             controller=None, human=None, record_every: int = 1,
             record_grf: bool = False) -> Trajectory:
    """Integrate the pinned-foot dynamics with optional torque callables.

    ``controller``/``human`` map (t, q, qdot) to a 2-vector of hip
    torques (exoskeleton and human port respectively); both default to
    zero. They are evaluated at every integrator stage, so state feedback
    is continuous and the closed-loop energy balance holds to integrator
    order. Every ``record_every``-th state is kept, with the torques
    re-evaluated at the recorded states. Raises IntegrationError on
    non-finite states, reporting the offending time.
    """
    if dt <= 0 or n_steps < 1:
        raise ValueError("dt must be positive and n_steps >= 1")
    c = _reduced_coeffs(params)
    p_x, p_y = float(state0.q[PX]), float(state0.q[PY])
    base_v = params.total_mass * params.g * p_y
    y = reduced_from_state(params, state0)

    if controller is None and human is None:
        torque_fn = None
    else:
        def torque_fn(t, yy, qd3):
            q = np.array([p_x, p_y, yy[0], yy[1], yy[2]])
            qdot = np.array([0.0, 0.0, qd3[0], qd3[1], qd3[2]])
            tl = tr = 0.0
            if controller is not None:
                ul, ur = controller(t, q, qdot)
                tl += ul
                tr += ur
            if human is not None:
                vl, vr = human(t, q, qdot)
                tl += vl
                tr += vr
            return tl, tr

    n_rec = n_steps // record_every + 1
    t_out = np.empty(n_rec)
    q_out = np.empty((n_rec, NQ))
    p_out = np.empty((n_rec, NQ))
    u_out = np.zeros((n_rec, 2))
    v_out = np.zeros((n_rec, 2))
    h_out = np.empty(n_rec)
    lam_out = np.empty((n_rec, 2)) if record_grf else None

    def record(idx, t, y):
        st = state_from_reduced(params, y, p_x, p_y)
        t_out[idx] = t
        q_out[idx] = st.q
        p_out[idx] = st.p
        h_out[idx] = _reduced_hamiltonian(c, y) + base_v
        qdot = st.velocity(params)
        if controller is not None:
            u_out[idx] = controller(t, st.q, qdot)
        if human is not None:
            v_out[idx] = human(t, st.q, qdot)
        if record_grf:
            tau = B_MAP @ (u_out[idx] + v_out[idx])
            lam_out[idx] = grf_lambda(params, st, tau)

    record(0, 0.0, y)
    idx = 1
    for k in range(n_steps):
        y = _rk4_step(c, y, k * dt, dt, torque_fn)
        if not all(math.isfinite(val) for val in y):
            raise IntegrationError(f"integration blew up at t={(k + 1) * dt:.6g} s")
        if (k + 1) % record_every == 0:
            record(idx, (k + 1) * dt, y)
            idx += 1

    return Trajectory(t=t_out, q=q_out, p=p_out, u=u_out, v=v_out,
                      H=h_out, lam=lam_out, dt=dt * record_every)


def simulate_full(params: ModelParams, state0: State, dt: float, n_steps: int,
                  tau_fn=None):
    """Integrate the full-coordinate multiplier form (test/cross-check path).

    All five coordinates evolve; the stance constraint is maintained only
    through the ground-reaction multiplier of ``grf_lambda``. Returns
    (t, q, p) arrays sampled at every step.
    """
    A = constraint_matrix()

    def rhs(t, q, p):
        st = State(q=q, p=p)
        tau = np.asarray(tau_fn(t, st), dtype=float) if tau_fn else np.zeros(NQ)
        gq, qdot = grad_H(params, st)
        lam = grf_lambda(params, st, tau)
        return qdot, -gq + tau + A.T @ lam

    t_out = np.empty(n_steps + 1)
    q_out = np.empty((n_steps + 1, NQ))
    p_out = np.empty((n_steps + 1, NQ))
    q = state0.q.copy()
    p = state0.p.copy()
    t_out[0], q_out[0], p_out[0] = 0.0, q, p
    for k in range(n_steps):
        t = k * dt
        k1q, k1p = rhs(t, q, p)
        k2q, k2p = rhs(t + dt / 2, q + dt / 2 * k1q, p + dt / 2 * k1p)
        k3q, k3p = rhs(t + dt / 2, q + dt / 2 * k2q, p + dt / 2 * k2p)
        k4q, k4p = rhs(t + dt, q + dt * k3q, p + dt * k3p)
        q = q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        p = p + dt / 6 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise IntegrationError(f"integration blew up at t={t + dt:.6g} s")
        t_out[k + 1], q_out[k + 1], p_out[k + 1] = (k + 1) * dt, q, p
    return t_out, q_out, p_out
