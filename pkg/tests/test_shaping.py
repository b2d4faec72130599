import numpy as np
import pytest

from hamshape import basis as bs
from hamshape import model as md
from hamshape import shaping as sh
from hamshape.errors import BasisError

from conftest import random_state


@pytest.fixture(scope="module")
def phi_set():
    return bs.default_basis("phi")


@pytest.fixture(scope="module")
def wop_set():
    return bs.default_basis("wop")


def random_spec(params, basis, rng, scale=1.0):
    return sh.ShapingSpec(params=params, basis=basis,
                          alpha=scale * rng.normal(0, 1, basis.w))


class TestBuildJ2:
    def test_symmetric_jacobian_gives_zero(self, rng):
        S = rng.normal(0, 1, (5, 5))
        S = S + S.T
        assert np.array_equal(sh.build_J2(S), np.zeros((5, 5)))

    def test_single_entry(self):
        E = np.zeros((5, 5))
        E[3, 4] = 1.0
        J2 = sh.build_J2(E)
        expected = np.zeros((5, 5))
        expected[4, 3] = 1.0
        expected[3, 4] = -1.0
        assert np.array_equal(J2, expected)

    def test_always_skew(self, rng):
        for _ in range(50):
            J = rng.normal(0, 1, (5, 5))
            J2 = sh.build_J2(J)
            assert np.array_equal(J2 + J2.T, np.zeros((5, 5)))


class TestControlLaw:
    def test_zero_alpha(self, params, phi_set, rng):
        spec = sh.ShapingSpec(params=params, basis=phi_set,
                              alpha=np.zeros(phi_set.w))
        st = random_state(params, rng)
        assert np.array_equal(sh.control_law(spec, st), np.zeros(2))

    def test_single_potential_basis_linearity(self, params):
        # untied left sin term with alpha = 2 gives u = [2 sin(theta_l), 0]
        untied = bs.default_basis("wop", mirrored=False)
        idx = list(untied.ids).index("pot_sin_l")
        alpha = np.zeros(untied.w)
        alpha[idx] = 2.0
        spec = sh.ShapingSpec(params=params, basis=untied, alpha=alpha)
        q = np.array([0.0, 0.0, 0.3, 0.7, -0.2])
        st = md.State(q=q, p=np.zeros(5))
        u = sh.control_law(spec, st)
        assert u[0] == pytest.approx(2.0 * np.sin(0.7), rel=1e-14)
        assert u[1] == 0.0

    def test_term_wise_assembly(self, params, phi_set, rng):
        # u must equal B+ (-N_act + J2 M^-1 p + T_ext) with the three
        # channel sums evaluated separately
        for _ in range(100):
            st = random_state(params, rng)
            spec = random_spec(params, phi_set, rng)
            qdot = st.velocity(params)
            n_act = -sh.shaping_vector(spec, st.q, qdot,
                                       channels=(bs.Channel.POTENTIAL,))
            j2_term = sh.shaping_vector(spec, st.q, qdot,
                                        channels=(bs.Channel.VELOCITY,))
            t_ext = sh.shaping_vector(spec, st.q, qdot,
                                      channels=(bs.Channel.LEAK,))
            combined = -n_act + j2_term + t_ext
            u = sh.control_law(spec, st)
            assert np.max(np.abs(u - combined[3:])) < 1e-12
            assert np.max(np.abs(combined[:3])) == 0.0

    def test_linear_in_alpha(self, params, phi_set, rng):
        st = random_state(params, rng)
        a1 = rng.normal(0, 1, phi_set.w)
        a2 = rng.normal(0, 1, phi_set.w)
        c1, c2 = 1.7, -0.4
        u1 = sh.control_law(sh.ShapingSpec(params, phi_set, a1), st)
        u2 = sh.control_law(sh.ShapingSpec(params, phi_set, a2), st)
        u = sh.control_law(sh.ShapingSpec(params, phi_set, c1 * a1 + c2 * a2), st)
        assert np.max(np.abs(u - (c1 * u1 + c2 * u2))) < 1e-12


class TestMatchingResidual:
    def test_compliant_wop_spec_zero(self, params, wop_set, rng):
        for _ in range(100):
            st = random_state(params, rng)
            spec = random_spec(params, wop_set, rng)
            r = sh.matching_residual(params, st, spec)
            assert np.max(np.abs(r)) < 1e-12

    def test_compliant_phi_spec_zero_1000_states(self, params, phi_set, rng):
        worst = 0.0
        for _ in range(1000):
            st = random_state(params, rng)
            spec = random_spec(params, phi_set, rng)
            worst = max(worst, np.max(np.abs(sh.matching_residual(params, st, spec))))
        assert worst < 1e-12

    def test_noncompliant_basis_flagged(self, params):
        bad = bs.BasisFunction(
            id="bad", channel=bs.Channel.LEAK, phi_dependent=True,
            act=lambda q, qd: (0.0, 0.0),
            eval_full=lambda q, qd: np.array([0.0, 0.0, 1.0, 0.0, 0.0]))
        bset = bs.BasisSet(mode=bs.Mode.PHI, functions=(bad,))
        spec = sh.ShapingSpec(params=params, basis=bset, alpha=np.array([1.0]))
        st = md.State(q=np.zeros(5), p=np.zeros(5))
        r = sh.matching_residual(params, st, spec)
        assert np.max(np.abs(r)) > 1e-3


class TestShapedPotential:
    def test_zero_alpha(self, params, phi_set, rng):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        q = random_state(params, rng).q
        assert sh.shaped_potential(spec, q) == 0.0

    def test_single_cos_primitive(self, params):
        untied = bs.default_basis("wop", mirrored=False)
        idx = list(untied.ids).index("pot_sin_l")
        alpha = np.zeros(untied.w)
        alpha[idx] = 1.0
        spec = sh.ShapingSpec(params, untied, alpha)
        q = np.array([0.0, 0.0, 0.0, 0.6, 0.0])
        # V_hat = -alpha * (-cos th_l); its th_l-derivative is -sin(th_l),
        # matching the declared N_act row -alpha*sin(th_l)
        h = 1e-6
        qp = q.copy()
        qm = q.copy()
        qp[md.THL] += h
        qm[md.THL] -= h
        fd = (sh.shaped_potential(spec, qp) - sh.shaped_potential(spec, qm)) / (2 * h)
        assert fd == pytest.approx(-np.sin(0.6), rel=1e-6)

    def test_gradient_matches_actuated_shaping_rows(self, params, phi_set, rng):
        for _ in range(30):
            spec = random_spec(params, phi_set, rng)
            q = random_state(params, rng).q
            n_act = -sh.shaping_vector(spec, q, np.zeros(5),
                                       channels=(bs.Channel.POTENTIAL,))
            h = 1e-6
            for k in (md.THL, md.THR):
                qp = q.copy()
                qm = q.copy()
                qp[k] += h
                qm[k] -= h
                fd = (sh.shaped_potential(spec, qp)
                      - sh.shaped_potential(spec, qm)) / (2 * h)
                assert fd == pytest.approx(n_act[k], rel=1e-6, abs=1e-6)

    def test_missing_primitive_raises(self, params):
        broken = bs.BasisFunction(
            id="nop", channel=bs.Channel.POTENTIAL, phi_dependent=False,
            act=lambda q, qd: (0.0, 0.0))
        bset = bs.BasisSet(mode=bs.Mode.WOP, functions=(broken,))
        spec = sh.ShapingSpec(params, bset, np.array([1.0]))
        with pytest.raises(BasisError):
            sh.shaped_potential(spec, np.zeros(5))


class TestClosedLoopGRF:
    def test_unshaped_equals_open_loop(self, params, phi_set, rng):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        for _ in range(20):
            st = random_state(params, rng)
            lam = md.grf_lambda(params, st, np.zeros(5))
            lam_tilde = sh.closed_loop_grf(params, st, spec, np.zeros(2))
            assert np.max(np.abs(lam - lam_tilde)) < 1e-10 * max(1, np.max(np.abs(lam)))

    def test_static_standing_supports_weight(self, params, phi_set):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        st = md.State(q=np.zeros(5), p=np.zeros(5))
        v = md.gravity_comp_torque(params, st.q)
        lam_tilde = sh.closed_loop_grf(params, st, spec, v)
        weight = params.total_mass * params.g
        assert lam_tilde[1] == pytest.approx(weight, rel=1e-9)

    def test_matches_open_loop_under_matched_torque(self, params, phi_set, rng):
        for _ in range(100):
            st = random_state(params, rng)
            spec = random_spec(params, phi_set, rng)
            v = rng.normal(0, 5, 2)
            u = sh.control_law(spec, st)
            lam_open = md.grf_lambda(params, st, md.B_MAP @ (u + v))
            lam_closed = sh.closed_loop_grf(params, st, spec, v)
            scale = max(1.0, np.max(np.abs(lam_open)))
            assert np.max(np.abs(lam_open - lam_closed)) < 1e-10 * scale


class TestPassivityAudit:
    @pytest.fixture(scope="class")
    def start_state(self, params):
        return md.State.from_velocity(
            params, np.array([0, 0, 0.1, 0.15, -0.05]), np.zeros(5))

    def test_conservative_system(self, params, phi_set, start_state):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-3, 1500)
        audit = sh.passivity_audit(traj, spec)
        assert audit.integrated_residual < 1e-5 * audit.mean_abs_H
        drift = np.max(np.abs(audit.H_tilde - audit.H_tilde[0]))
        assert drift / abs(audit.H_tilde[0]) < 1e-8

    def test_velocity_channel_is_workless(self, params, phi_set, start_state):
        ids = list(phi_set.ids)
        alpha = np.zeros(phi_set.w)
        alpha[ids.index("vel_lin")] = 0.9
        alpha[ids.index("vel_sin")] = -0.6
        spec = sh.ShapingSpec(params, phi_set, alpha)
        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-4, 10000)
        drift = np.max(np.abs(traj.H - traj.H[0])) / abs(traj.H[0])
        assert drift < 1e-9

    def test_leak_and_human_ports_balance(self, params, phi_set, start_state, rng):
        spec = random_spec(params, phi_set, rng, scale=0.3)

        def human(t, q, qd):
            return np.array([0.8 * np.sin(2.0 * t), -0.5 * np.sin(1.3 * t)])

        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-4, 10000,
                                       human=human)
        audit = sh.passivity_audit(traj, spec)
        assert audit.integrated_residual < 1e-5 * audit.mean_abs_H
        # leak port carries power when phi-dependent terms are active
        assert np.max(np.abs(audit.port_power_leak)) > 0.0

    def test_human_only_energy_bookkeeping(self, params, phi_set, start_state):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))

        def human(t, q, qd):
            return np.array([1.0, -1.0])

        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-3, 2000,
                                       human=human)
        audit = sh.passivity_audit(traj, spec)
        # constant torque does real work; balance must still close
        assert abs(audit.H_tilde[-1] - audit.H_tilde[0]) > 1e-3
        assert audit.integrated_residual < 1e-5 * audit.mean_abs_H

    def test_audit_rows_and_csv(self, params, phi_set, start_state):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-3, 10)
        audit = sh.passivity_audit(traj, spec)
        row = audit.row(0)
        assert isinstance(row, sh.EnergyAudit)
        assert row.t == 0.0
        header = audit.to_csv().splitlines()[0]
        assert header == "t,H_tilde,p_human,p_leak,residual,matching_residual_inf"
        assert len(audit.to_csv().splitlines()) == len(traj) + 1

    def test_v_sequence_shape_checked(self, params, phi_set, start_state):
        spec = sh.ShapingSpec(params, phi_set, np.zeros(phi_set.w))
        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-3, 10)
        with pytest.raises(ValueError):
            sh.passivity_audit(traj, spec, v_sequence=np.zeros((3, 2)))

    def test_matching_residual_logged_along_trajectory(self, params, phi_set,
                                                       start_state, rng):
        spec = random_spec(params, phi_set, rng, scale=0.2)
        traj = sh.simulate_closed_loop(params, spec, start_state, 1e-3, 50)
        audit = sh.passivity_audit(traj, spec, matching_every=1)
        assert np.max(audit.matching_residual_inf) < 1e-12
