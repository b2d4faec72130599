import math

import numpy as np
import pytest

from hamshape import model as md
from hamshape.errors import IntegrationError

from conftest import random_state


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x, dtype=float)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


class TestModelParams:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            md.ModelParams(m_trunk=54.0, m_leg=-1.0, l_trunk=0.51, l_leg=0.94,
                           c_trunk=0.32, c_leg=0.38, I_trunk=3.5, I_leg=1.0)
        with pytest.raises(ValueError):
            md.ModelParams(m_trunk=54.0, m_leg=12.9, l_trunk=0.51, l_leg=0.94,
                           c_trunk=0.60, c_leg=0.38, I_trunk=3.5, I_leg=1.0)
        with pytest.raises(ValueError):
            md.ModelParams(m_trunk=54.0, m_leg=12.9, l_trunk=0.51, l_leg=0.94,
                           c_trunk=0.32, c_leg=0.38, I_trunk=-3.5, I_leg=1.0)

    def test_total_mass(self, params):
        assert params.total_mass == params.m_trunk + 2 * params.m_leg

    def test_dict_round_trip(self, params):
        again = md.ModelParams.from_dict(params.to_dict())
        assert again == params

    def test_com_fraction_bounds(self):
        base = md.ModelParams.from_anthropometry().to_dict()
        base["com_fraction_leg"] = 1.5
        with pytest.raises(ValueError):
            md.ModelParams.from_dict(base)


class TestMassMatrix:
    def test_symmetry_exact(self, params, rng):
        for _ in range(100):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.5, 1.5, 3)])
            M = md.mass_matrix(params, q)
            assert np.array_equal(M, M.T)

    def test_total_translational_mass(self, params, rng):
        for _ in range(20):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.5, 1.5, 3)])
            M = md.mass_matrix(params, q)
            assert M[0, 0] == pytest.approx(params.total_mass, abs=1e-12)
            assert M[1, 1] == pytest.approx(params.total_mass, abs=1e-12)

    def test_positive_definite_1000_samples(self, params, rng):
        for _ in range(1000):
            q = np.concatenate([rng.normal(0, 1, 2),
                                rng.uniform(-np.pi / 2, np.pi / 2, 3)])
            np.linalg.cholesky(md.mass_matrix(params, q))

    def test_depends_only_on_angles(self, params, rng):
        q1 = np.array([0.3, -0.7, 0.2, 0.4, -0.1])
        q2 = q1.copy()
        q2[:2] = rng.normal(0, 10, 2)
        assert np.array_equal(md.mass_matrix(params, q1),
                              md.mass_matrix(params, q2))

    def test_partials_match_finite_differences(self, params, rng):
        h = 1e-6
        for _ in range(20):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            dM = md.mass_matrix_partials(params, q)
            for k in range(5):
                qp = q.copy()
                qm = q.copy()
                qp[k] += h
                qm[k] -= h
                fd = (md.mass_matrix(params, qp) - md.mass_matrix(params, qm)) / (2 * h)
                assert np.max(np.abs(dM[k] - fd)) < 1e-6


class TestEnergies:
    def test_kinetic_zero_velocity(self, params):
        st = md.State(q=np.array([0.1, 0.2, 0.3, -0.2, 0.5]), p=np.zeros(5))
        chk = md.kinetic_energy_check(params, st)
        assert chk.via_mass_matrix == 0.0
        assert chk.via_segments == 0.0

    def test_kinetic_pure_translation(self, params):
        q = np.array([0.0, 0.0, 0.25, -0.4, 0.3])
        st = md.State.from_velocity(params, q, np.array([1.0, 0, 0, 0, 0]))
        chk = md.kinetic_energy_check(params, st)
        expected = 0.5 * params.total_mass
        assert chk.via_mass_matrix == pytest.approx(expected, rel=1e-12)
        assert chk.via_segments == pytest.approx(expected, rel=1e-12)

    def test_kinetic_cross_check_random(self, params, rng):
        for _ in range(200):
            st = random_state(params, rng)
            assert md.kinetic_energy_check(params, st).rel_discrepancy < 1e-10

    def test_potential_vertical_translation(self, params, rng):
        q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1, 1, 3)])
        h = 0.37
        q_up = q.copy()
        q_up[md.PY] += h
        dv = md.potential_energy(params, q_up) - md.potential_energy(params, q)
        assert dv == pytest.approx(params.total_mass * params.g * h, rel=1e-12)

    def test_potential_px_invariant(self, params, rng):
        for _ in range(20):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1, 1, 3)])
            assert md.potential_gradient(params, q)[md.PX] == 0.0

    def test_potential_gradient_finite_differences(self, params, rng):
        for _ in range(50):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            g = md.potential_gradient(params, q)
            gfd = fd_gradient(lambda qq: md.potential_energy(params, qq), q)
            scale = max(1.0, np.max(np.abs(g)))
            assert np.max(np.abs(g - gfd)) / scale < 1e-6


class TestGradH:
    def test_zero_momentum(self, params, rng):
        q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1, 1, 3)])
        st = md.State(q=q, p=np.zeros(5))
        gq, gp = md.grad_H(params, st)
        assert np.array_equal(gp, np.zeros(5))
        assert np.allclose(gq, md.potential_gradient(params, q), atol=0)
        assert gq[md.PX] == 0.0

    def test_matches_finite_differences(self, params, rng):
        h = 1e-6
        for _ in range(100):
            st = random_state(params, rng)
            gq, gp = md.grad_H(params, st)

            def H_q(q):
                return md.hamiltonian(params, md.State(q=q, p=st.p))

            def H_p(p):
                return md.hamiltonian(params, md.State(q=st.q, p=p))

            gq_fd = fd_gradient(H_q, st.q, h)
            gp_fd = fd_gradient(H_p, st.p, h)
            scale_q = max(1.0, np.max(np.abs(gq)))
            scale_p = max(1.0, np.max(np.abs(gp)))
            assert np.max(np.abs(gq - gq_fd)) / scale_q < 1e-6
            assert np.max(np.abs(gp - gp_fd)) / scale_p < 1e-6


class TestConstraint:
    def test_matrix_shape_and_action(self, rng):
        A = md.constraint_matrix()
        assert A.shape == (2, 5)
        qdot = rng.normal(0, 1, 5)
        assert np.array_equal(A @ qdot, qdot[:2])
        assert np.linalg.matrix_rank(A) == 2
        assert np.array_equal(A @ np.array([0, 0, 1, 1, 1.0]), np.zeros(2))


class TestSchurBlocks:
    def test_annihilator_identity(self, params, rng):
        for _ in range(100):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            sb = md.schur_blocks(params, q)
            assert np.max(np.abs(sb.B_lam_perp @ sb.B_lam)) < 1e-12

    def test_determinant_identity(self, params, rng):
        for _ in range(100):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            sb = md.schur_blocks(params, q)
            det_m = np.linalg.det(md.mass_matrix(params, q))
            det_split = np.linalg.det(sb.M4) * np.linalg.det(sb.delta)
            assert abs(det_m - det_split) / abs(det_m) < 1e-10

    def test_x_lambda_block_structure(self, params, rng):
        q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
        sb = md.schur_blocks(params, q)
        assert np.array_equal(sb.X_lam[3:, :3], np.zeros((2, 3)))
        assert np.array_equal(sb.X_lam[3:, 3:], np.eye(2))
        assert np.array_equal(sb.X_lam[:3, :3], np.eye(3) - sb.Z_lam)

    def test_x_lambda_matches_projector_definition(self, params, rng):
        # X = I - A' W A M^-1 with W = (A M^-1 A')^-1, computed independently
        A = md.constraint_matrix()
        for _ in range(20):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            sb = md.schur_blocks(params, q)
            M_inv = np.linalg.inv(md.mass_matrix(params, q))
            W = np.linalg.inv(A @ M_inv @ A.T)
            X_ref = np.eye(5) - A.T @ W @ A @ M_inv
            assert np.max(np.abs(sb.X_lam - X_ref)) < 1e-9

    def test_delta_symmetric_positive_definite(self, params, rng):
        q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
        sb = md.schur_blocks(params, q)
        assert np.allclose(sb.delta, sb.delta.T, atol=1e-12)
        np.linalg.cholesky(sb.delta)


class TestGroundReaction:
    def test_static_standing_supports_weight(self, params):
        st = md.State(q=np.zeros(5), p=np.zeros(5))
        lam = md.grf_lambda(params, st, np.zeros(5))
        weight = params.total_mass * params.g
        assert lam[0] == pytest.approx(0.0, abs=1e-9 * weight)
        assert lam[1] == pytest.approx(weight, rel=1e-9)

    def test_static_arbitrary_pose_vs_direct_solve(self, params, rng):
        A = md.constraint_matrix()
        for _ in range(30):
            q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1.2, 1.2, 3)])
            st = md.State(q=q, p=np.zeros(5))
            lam = md.grf_lambda(params, st, np.zeros(5))
            # independent static solve: A M^-1 A' lam = A M^-1 grad V
            M_inv = np.linalg.inv(md.mass_matrix(params, q))
            rhs = A @ M_inv @ md.potential_gradient(params, q)
            lam_ref = np.linalg.solve(A @ M_inv @ A.T, rhs)
            assert np.max(np.abs(lam - lam_ref)) < 1e-9 * max(1, np.max(np.abs(lam_ref)))

    def test_constraint_preserved_along_full_dynamics(self, params):
        # multiplier-form integration with smooth bounded torque: the
        # constraint velocity stays flat, so its numerical derivative is ~0
        def tau_fn(t, st):
            tau = np.zeros(5)
            tau[md.THL] = 4.0 * math.sin(2.1 * t)
            tau[md.THR] = -3.0 * math.cos(1.7 * t)
            return tau

        q0 = np.array([0.0, 0.0, 0.12, 0.2, -0.1])
        st0 = md.State.from_velocity(params, q0, np.array([0, 0, 0.3, -0.2, 0.25]))
        dt = 5e-4
        t, q, p = md.simulate_full(params, st0, dt, 1200, tau_fn)
        a_qdot = np.empty((q.shape[0], 2))
        for i in range(q.shape[0]):
            qdot = np.linalg.solve(md.mass_matrix(params, q[i]), p[i])
            a_qdot[i] = qdot[:2]
        a_qddot = (a_qdot[2:] - a_qdot[:-2]) / (2 * dt)
        assert np.max(np.abs(a_qddot)) < 1e-8


class TestStepAndSimulate:
    def test_energy_conservation_passive(self, params):
        st0 = md.State.from_velocity(
            params, np.array([0, 0, 0.1, 0.15, -0.05]), np.zeros(5))
        traj = md.simulate(params, st0, dt=1e-4, n_steps=5000, record_every=50)
        drift = np.max(np.abs(traj.H - traj.H[0])) / abs(traj.H[0])
        assert drift < 1e-8

    def test_equilibrium_is_stationary(self, params):
        st0 = md.State(q=np.zeros(5), p=np.zeros(5))
        st1 = md.step(params, st0, np.zeros(2), np.zeros(2), 1e-3)
        assert np.max(np.abs(st1.q - st0.q)) < 1e-14
        assert np.max(np.abs(st1.p)) < 1e-14

    def test_step_matches_simulate(self, params):
        st0 = md.State.from_velocity(
            params, np.array([0, 0, 0.2, 0.1, -0.3]), np.array([0, 0, 0.5, 0.1, -0.2]))
        u = np.array([1.5, -2.0])
        st = st0
        for _ in range(10):
            st = md.step(params, st, u, np.zeros(2), 1e-3)
        traj = md.simulate(params, st0, 1e-3, 10,
                           controller=lambda t, q, qd: u)
        assert np.max(np.abs(traj.q[-1] - st.q)) < 1e-12
        assert np.max(np.abs(traj.p[-1] - st.p)) < 1e-12

    def test_pendulum_limit_period(self, params):
        # lock both hips by inverse dynamics; the trunk+legs swing about
        # the foot as one physical pendulum around the hanging pose phi=pi
        def locking_controller(t, q, qd):
            M = md.mass_matrix(params, q)
            dM = md.mass_matrix_partials(params, q)
            gq, _ = md.grad_H(params, md.State.from_velocity(params, q, qd))
            qd_a = qd[2:]
            Ma = M[2:, 2:]
            Mdot_a = sum(dM[k][2:, 2:] * qd[k] for k in (2, 3, 4))
            r0 = -gq[2:] - Mdot_a @ qd_a
            S = np.linalg.inv(Ma)
            u = -np.linalg.solve(S[1:, 1:], (S @ r0)[1:])
            return u

        amp = 0.02
        q0 = np.array([0.0, 0.0, math.pi + amp, 0.0, 0.0])
        st0 = md.State.from_velocity(params, q0, np.zeros(5))
        dt = 1e-3
        traj = md.simulate(params, st0, dt, 6000, controller=locking_controller)
        # hip angles stay locked
        assert np.max(np.abs(traj.q[:, 3:])) < 1e-6

        # period via upward zero crossings of phi - pi
        x = traj.q[:, md.PHI] - math.pi
        crossings = []
        for i in range(1, len(x)):
            if x[i - 1] < 0 <= x[i]:
                frac = -x[i - 1] / (x[i] - x[i - 1])
                crossings.append(traj.t[i - 1] + frac * dt)
        assert len(crossings) >= 2
        period = np.mean(np.diff(crossings))

        # oracle: physical pendulum with inertia M[2,2] at the locked pose
        # and stiffness from the potential curvature at the hanging pose
        J = md.mass_matrix(params, q0)[2, 2]
        h = 1e-4

        def v_of_phi(phi):
            return md.potential_energy(params, np.array([0, 0, phi, 0, 0]))

        v2 = (v_of_phi(math.pi + h) - 2 * v_of_phi(math.pi)
              + v_of_phi(math.pi - h)) / h ** 2
        period_ref = 2 * math.pi * math.sqrt(J / v2)
        assert abs(period - period_ref) / period_ref < 1e-3

    def test_integration_blowup_reported(self, params):
        st0 = md.State(q=np.zeros(5), p=np.zeros(5))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(IntegrationError, match="t="):
                md.simulate(params, st0, dt=1.0, n_steps=50,
                            controller=lambda t, q, qd: np.array([1e160, -1e160]))

    def test_reduced_rhs_matches_generic_path(self, params, rng):
        c = md._reduced_coeffs(params)
        for _ in range(50):
            q = np.concatenate([[0, 0], rng.uniform(-1.2, 1.2, 3)])
            qd = np.concatenate([[0, 0], rng.normal(0, 2, 3)])
            st = md.State.from_velocity(params, q, qd)
            tau = rng.normal(0, 5, 2)
            y = md.reduced_from_state(params, st)
            r = np.array(md._reduced_rhs(c, y, 0.0, lambda t, yy, q3: (tau[0], tau[1])))
            gq, gp = md.grad_H(params, st)
            pdot = -gq + md.B_MAP @ tau
            ref = np.concatenate([gp[2:], pdot[2:]])
            assert np.max(np.abs(r - ref)) < 1e-9

    def test_constraint_rows_exactly_zero(self, params, rng):
        # states produced by the reduced integrator satisfy A M^-1 p = 0
        st0 = md.State.from_velocity(
            params, np.array([0, 0, 0.3, 0.2, -0.4]), np.array([0, 0, 1.0, -0.5, 0.3]))
        traj = md.simulate(params, st0, 1e-3, 200)
        for i in (0, 50, 200):
            st = traj.state(i)
            qdot = st.velocity(params)
            assert np.max(np.abs(qdot[:2])) < 1e-12

    def test_trajectory_csv_schema(self, params):
        st0 = md.State(q=np.zeros(5), p=np.zeros(5))
        traj = md.simulate(params, st0, 1e-3, 5, record_grf=True)
        lines = traj.to_csv().strip().split("\n")
        assert lines[0].split(",") == [
            "t", "p_x", "p_y", "phi", "theta_l", "theta_r",
            "pp_x", "pp_y", "p_phi", "p_theta_l", "p_theta_r",
            "u_l", "u_r", "v_l", "v_r", "lambda_x", "lambda_y", "H"]
        assert len(lines) == 1 + 6


class TestStateValidation:
    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            md.State(q=np.array([np.nan, 0, 0, 0, 0]), p=np.zeros(5))

    def test_velocity_round_trip(self, params, rng):
        q = np.concatenate([rng.normal(0, 1, 2), rng.uniform(-1, 1, 3)])
        qdot = rng.normal(0, 2, 5)
        st = md.State.from_velocity(params, q, qdot)
        assert np.max(np.abs(st.velocity(params) - qdot)) < 1e-10
