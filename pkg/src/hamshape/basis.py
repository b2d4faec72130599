"""Shaping basis families and the regressor that makes the control law linear.

Every admissible basis function contributes a 5-vector whose unactuated
rows (p_x, p_y, phi) are zero, so the matching condition holds term by
term. Three channels exist:

* ``potential``  position-dependent torque shapes that integrate to a
                 scalar primitive (they reshape the closed-loop potential)
* ``velocity``   workless skew couplings between the two hip momenta,
                 derived from a vector field Q(q) on the actuated joints
* ``leak``       terms that may read the global thigh angle phi (or its
                 rate); they enter the power-leak port and are admissible
                 only in PHI mode

WOP-mode sets read nothing but theta_l, theta_r and their rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import BasisError
from .model import ModelParams, PHI, THL, THR, NQ, State, mass_matrix

Act = Callable[[np.ndarray, np.ndarray], tuple]


class Channel(str, Enum):
    POTENTIAL = "potential"
    VELOCITY = "velocity"
    LEAK = "leak"


class Mode(str, Enum):
    WOP = "wop"
    PHI = "phi"


@dataclass(frozen=True)
class BasisFunction:
    """One shaping term.

    ``act(q, qdot)`` returns the two actuated rows (theta_l, theta_r) of
    the term's 5-vector contribution. ``primitive`` (potential channel) is
    the scalar whose actuated gradient reproduces ``act``.
    ``q_component`` (velocity channel) is the generating field Q(q).
    ``eval_full`` overrides the assembled 5-vector and exists so that
    deliberately non-compliant functions can be built for validation
    tests; anything shipped here leaves it None.
    """

    id: str
    channel: Channel
    phi_dependent: bool
    act: Act
    primitive: Callable[[np.ndarray], float] | None = None
    q_component: Callable[[np.ndarray], np.ndarray] | None = None
    eval_full: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def eval(self, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
        if self.eval_full is not None:
            return np.asarray(self.eval_full(q, qdot), dtype=float).reshape(NQ)
        out = np.zeros(NQ)
        out[THL], out[THR] = self.act(q, qdot)
        return out


@dataclass(frozen=True)
class BasisSet:
    mode: Mode
    functions: tuple[BasisFunction, ...]
    mirrored: bool = True

    def __post_init__(self):
        ids = [f.id for f in self.functions]
        if len(set(ids)) != len(ids):
            raise BasisError(f"duplicate basis ids: {sorted(ids)}")
        if self.mode is Mode.WOP:
            bad = [f.id for f in self.functions if f.phi_dependent]
            if bad:
                raise BasisError(f"phi-dependent functions not allowed in WOP mode: {bad}")

    @property
    def w(self) -> int:
        return len(self.functions)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(f.id for f in self.functions)

    def describe(self) -> list[dict]:
        return [
            {"id": f.id, "channel": f.channel.value,
             "mode_requirement": "phi-only" if f.phi_dependent else "wop-compatible"}
            for f in self.functions
        ]


# ---------------------------------------------------------------------------
# default family
# ---------------------------------------------------------------------------

def _potential_fns(name: str, f, F, mirrored: bool) -> list[BasisFunction]:
    if mirrored:
        return [BasisFunction(
            id=name, channel=Channel.POTENTIAL, phi_dependent=False,
            act=lambda q, qd: (f(q[THL]), f(q[THR])),
            primitive=lambda q: F(q[THL]) + F(q[THR]),
        )]
    return [
        BasisFunction(
            id=f"{name}_l", channel=Channel.POTENTIAL, phi_dependent=False,
            act=lambda q, qd: (f(q[THL]), 0.0),
            primitive=lambda q: F(q[THL]),
        ),
        BasisFunction(
            id=f"{name}_r", channel=Channel.POTENTIAL, phi_dependent=False,
            act=lambda q, qd: (0.0, f(q[THR])),
            primitive=lambda q: F(q[THR]),
        ),
    ]


def _velocity_fn(name: str, f, fprime) -> BasisFunction:
    # Q = (0, 0, 0, -f(theta_r), f(theta_l)) / 2 gives the skew coupling
    # J2[thl, thr] = (f'(theta_l) + f'(theta_r)) / 2 =: kappa
    def kappa(q):
        return 0.5 * (fprime(q[THL]) + fprime(q[THR]))

    def q_component(q):
        Q = np.zeros(NQ)
        Q[THL] = -0.5 * f(q[THR])
        Q[THR] = 0.5 * f(q[THL])
        return Q

    return BasisFunction(
        id=name, channel=Channel.VELOCITY, phi_dependent=False,
        act=lambda q, qd: (kappa(q) * qd[THR], -kappa(q) * qd[THL]),
        q_component=q_component,
    )


def _leak_fns(name: str, f, mirrored: bool) -> list[BasisFunction]:
    """Leak term f(phi, theta, qdot) placed at each leg's actuated row."""
    if mirrored:
        return [BasisFunction(
            id=name, channel=Channel.LEAK, phi_dependent=True,
            act=lambda q, qd: (f(q[PHI], q[THL], qd), f(q[PHI], q[THR], qd)),
        )]
    return [
        BasisFunction(
            id=f"{name}_l", channel=Channel.LEAK, phi_dependent=True,
            act=lambda q, qd: (f(q[PHI], q[THL], qd), 0.0),
        ),
        BasisFunction(
            id=f"{name}_r", channel=Channel.LEAK, phi_dependent=True,
            act=lambda q, qd: (0.0, f(q[PHI], q[THR], qd)),
        ),
    ]


def default_basis(mode: Mode | str, mirrored: bool = True) -> BasisSet:
    """The shipped shaping family.

    Potential terms per leg: theta, sin(theta), sin(2 theta), theta^3
    (spring-like and gravity-like torque shapes with primitives
    theta^2/2, -cos(theta), -cos(2 theta)/2, theta^4/4). Velocity terms:
    skew couplings generated by theta and sin(theta). PHI mode adds leak
    terms sin(phi), sin(phi - theta) and the phi-rate. With
    ``mirrored=True`` (default) the left/right instances of each per-leg
    shape share a single coefficient.
    """
    mode = Mode(mode)
    fns: list[BasisFunction] = []
    fns += _potential_fns("pot_lin", lambda t: t, lambda t: 0.5 * t * t, mirrored)
    fns += _potential_fns("pot_sin", math.sin, lambda t: -math.cos(t), mirrored)
    fns += _potential_fns("pot_sin2", lambda t: math.sin(2 * t),
                          lambda t: -0.5 * math.cos(2 * t), mirrored)
    fns += _potential_fns("pot_cubic", lambda t: t ** 3,
                          lambda t: 0.25 * t ** 4, mirrored)
    fns.append(_velocity_fn("vel_lin", lambda t: t, lambda t: 1.0))
    fns.append(_velocity_fn("vel_sin", math.sin, math.cos))
    if mode is Mode.PHI:
        fns += _leak_fns("leak_sin_phi",
                         lambda phi, th, qd: math.sin(phi), mirrored)
        fns += _leak_fns("leak_sin_rel",
                         lambda phi, th, qd: math.sin(phi - th), mirrored)
        fns += _leak_fns("leak_phi_rate",
                         lambda phi, th, qd: qd[PHI], mirrored)
    return BasisSet(mode=mode, functions=tuple(fns), mirrored=mirrored)


# ---------------------------------------------------------------------------
# custom bases from a restricted expression language
# ---------------------------------------------------------------------------

_ALLOWED_FUNCS = {"sin", "cos"}


def _compile_expr(expr: str, symbols: tuple[str, ...]):
    """Compile a polynomial/sin/cos expression and its derivatives.

    Returns (callable, {symbol: derivative callable}). Only the named
    symbols and sin/cos are allowed.
    """
    import sympy

    syms = {name: sympy.Symbol(name) for name in symbols}
    try:
        tree = sympy.sympify(expr, locals=dict(syms))
    except (sympy.SympifyError, SyntaxError, TypeError) as e:
        raise BasisError(f"cannot parse basis expression {expr!r}: {e}") from e
    free = {str(s) for s in tree.free_symbols}
    if not free <= set(symbols):
        raise BasisError(f"expression {expr!r} uses unknown symbols {free - set(symbols)}")
    funcs = {f.func.__name__ for f in tree.atoms(sympy.Function)}
    if not funcs <= _ALLOWED_FUNCS:
        raise BasisError(f"expression {expr!r} uses unsupported functions "
                         f"{funcs - _ALLOWED_FUNCS}; only sin/cos and polynomials")
    args = [syms[name] for name in symbols]
    value = sympy.lambdify(args, tree, modules="math")
    derivs = {
        name: sympy.lambdify(args, sympy.diff(tree, syms[name]), modules="math")
        for name in symbols
    }
    return value, derivs


def custom_function(entry: dict, mirrored: bool = True) -> list[BasisFunction]:
    """Build basis functions from a config entry.

    Schema: ``{"id": str, "channel": "potential"|"velocity"|"leak",
    "expr": str}``. Potential entries give the scalar primitive in
    ``theta`` (per leg); velocity entries give the coupling generator in
    ``theta``; leak entries give a term in ``phi`` and ``theta``, or the
    literal ``"phi_rate"``.
    """
    try:
        fid = str(entry["id"])
        channel = Channel(entry["channel"])
        expr = str(entry["expr"])
    except (KeyError, ValueError) as e:
        raise BasisError(f"bad custom basis entry {entry!r}: {e}") from e

    if channel is Channel.POTENTIAL:
        F, dF = _compile_expr(expr, ("theta",))
        f = dF["theta"]
        return _potential_fns(fid, f, F, mirrored)
    if channel is Channel.VELOCITY:
        f, df = _compile_expr(expr, ("theta",))
        return [_velocity_fn(fid, f, df["theta"])]
    if expr == "phi_rate":
        return _leak_fns(fid, lambda phi, th, qd: qd[PHI], mirrored)
    g, _ = _compile_expr(expr, ("phi", "theta"))
    return _leak_fns(fid, lambda phi, th, qd: g(phi, th), mirrored)


def basis_from_config(cfg: dict, params: ModelParams | None = None) -> BasisSet:
    """Build a basis set from ``{"mode", "mirrored", "custom": [...]}``.

    Custom entries are appended to the default family and the whole set is
    numerically validated when ``params`` is given; non-compliant
    functions are rejected.
    """
    mode = Mode(cfg.get("mode", "wop"))
    mirrored = bool(cfg.get("mirrored", True))
    bset = default_basis(mode, mirrored=mirrored)
    custom = cfg.get("custom", [])
    if custom:
        fns = list(bset.functions)
        for entry in custom:
            fns.extend(custom_function(entry, mirrored=mirrored))
        bset = BasisSet(mode=mode, functions=tuple(fns), mirrored=mirrored)
        if params is not None:
            ensure_valid(bset, params)
    return bset


# ---------------------------------------------------------------------------
# regressor
# ---------------------------------------------------------------------------

def regressor_qd(basis: BasisSet, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """2 x w regressor from precomputed velocities (hot path)."""
    out = np.empty((2, basis.w))
    for i, fn in enumerate(basis.functions):
        out[0, i], out[1, i] = fn.act(q, qdot)
    return out


def regressor(basis: BasisSet, params: ModelParams, state: State) -> np.ndarray:
    """Matrix Phi(state) with u = Phi(state) @ alpha.

    Column i holds the actuated rows of basis function i; potential
    columns already carry the sign that makes them enter the control law
    additively.
    """
    return regressor_qd(basis, state.q, state.velocity(params))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BasisReport:
    id: str
    ok: bool
    issues: tuple[str, ...]


def _fd_gradient(f, q, h=1e-6):
    g = np.zeros(NQ)
    for i in range(NQ):
        qp = q.copy()
        qm = q.copy()
        qp[i] += h
        qm[i] -= h
        g[i] = (f(qp) - f(qm)) / (2 * h)
    return g


def _fd_q_jacobian(q_component, q, h=1e-6):
    J = np.zeros((NQ, NQ))
    for j in range(NQ):
        qp = q.copy()
        qm = q.copy()
        qp[j] += h
        qm[j] -= h
        J[:, j] = (np.asarray(q_component(qp)) - np.asarray(q_component(qm))) / (2 * h)
    return J


def validate_basis(basis: BasisSet, params: ModelParams, n_states: int = 200,
                   seed: int = 0, tol: float = 1e-6) -> list[BasisReport]:
    """Randomized compliance check of every function in the set.

    Verifies, per function: zero unactuated rows; potential terms match
    the finite-difference gradient of their primitive; velocity terms
    reproduce the skew form built from their Q field and are workless;
    WOP-compatible terms ignore phi. Returns one report per function.
    """
    from .shaping import build_J2

    rng = np.random.default_rng(seed)
    reports = []
    for fn in basis.functions:
        issues = []
        for _ in range(n_states):
            q = np.concatenate([rng.normal(0, 0.5, 2), rng.uniform(-1.2, 1.2, 3)])
            p = rng.normal(0, 5.0, NQ)
            qdot = np.linalg.solve(mass_matrix(params, q), p)
            xi = fn.eval(q, qdot)
            if not np.all(np.isfinite(xi)):
                issues.append("non-finite output")
                break
            if np.max(np.abs(xi[:3])) > 1e-12:
                issues.append(f"nonzero unactuated rows (max {np.max(np.abs(xi[:3])):.2e})")
                break
            if not fn.phi_dependent:
                q2 = q.copy()
                q2[PHI] += rng.uniform(0.5, 2.0)
                if np.max(np.abs(fn.eval(q2, qdot) - xi)) > 1e-12:
                    issues.append("output varies with phi but not declared phi-dependent")
                    break
            if fn.channel is Channel.POTENTIAL:
                if fn.primitive is None:
                    issues.append("potential function lacks a primitive")
                    break
                grad = _fd_gradient(fn.primitive, q)
                scale = max(1.0, np.max(np.abs(xi)))
                if np.max(np.abs(grad - xi)) > tol * scale:
                    issues.append("primitive gradient does not match output")
                    break
            elif fn.channel is Channel.VELOCITY:
                if fn.q_component is None:
                    issues.append("velocity function lacks a Q component")
                    break
                Q = np.asarray(fn.q_component(q))
                if np.max(np.abs(Q[:3])) > 1e-12:
                    issues.append("Q component has nonzero unactuated entries")
                    break
                J2 = build_J2(_fd_q_jacobian(fn.q_component, q))
                xi_ref = J2 @ qdot
                scale = max(1.0, np.max(np.abs(xi_ref)))
                if np.max(np.abs(xi - xi_ref)) > tol * scale:
                    issues.append("output does not equal J2(Q) M^-1 p")
                    break
                if abs(float(qdot @ xi)) > tol * max(1.0, float(qdot @ qdot)):
                    issues.append("velocity term is not workless")
                    break
            elif fn.channel is Channel.LEAK and not fn.phi_dependent:
                issues.append("leak function must be declared phi-dependent")
                break
        reports.append(BasisReport(id=fn.id, ok=not issues, issues=tuple(issues)))
    return reports


def ensure_valid(basis: BasisSet, params: ModelParams, **kw) -> None:
    """Raise BasisError naming every non-compliant function in the set."""
    bad = [r for r in validate_basis(basis, params, **kw) if not r.ok]
    if bad:
        detail = "; ".join(f"{r.id}: {', '.join(r.issues)}" for r in bad)
        raise BasisError(f"non-compliant basis functions rejected: {detail}")
