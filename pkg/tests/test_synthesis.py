import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddhinf import conic, lmicore, synthesis
from ddhinf.conic import SolveReport
from ddhinf.linsys import batch_reactor, collect_data, disturbance_sequence
from ddhinf.synthesis import (
    DecisionLayout,
    DesignConfig,
    OutputMaps,
    build_mh_problem,
    build_model_problem,
    build_static_problem,
    dissipation_lmi,
    ellipsoid_lmi,
    extract_solution,
    hinf_aux_lmi,
    hinf_data_lmi,
    output_constraint_lmi,
    q_floor_lmi,
)

X0 = np.array([1.0, -0.65, 0.4, -0.1])


@pytest.fixture(scope="module")
def reactor():
    return batch_reactor()


@pytest.fixture(scope="module")
def record(reactor):
    rng = np.random.default_rng(0)
    u = rng.standard_normal((20, 2))
    w = disturbance_sequence(4, 1e-4, 20, rng)
    return collect_data(reactor, rng.standard_normal(4), u, w,
                        alpha_per_step=np.full(20, 1e-4))


@pytest.fixture(scope="module")
def cfg():
    return DesignConfig.batch_reactor_defaults()


@pytest.fixture(scope="module")
def solved(reactor, record, cfg):
    prob = build_static_problem(record, cfg, X0, OutputMaps.from_system(reactor))
    rep = conic.solve(prob)
    assert rep.status == "optimal"
    return prob, rep, extract_solution(rep, prob.layout)


class TestLayout:
    def test_reactor_decision_length(self):
        assert DecisionLayout(4, 2).size == 10 + 8 + 4 == 22

    def test_extract_roundtrip(self):
        layout = DecisionLayout(3, 2)
        rng = np.random.default_rng(1)
        Q = rng.standard_normal((3, 3))
        Q = Q + Q.T
        L = rng.standard_normal((2, 3))
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(Q)
        z[layout.l_off:layout.l_off + layout.n_l] = L.ravel()
        np.testing.assert_allclose(layout.extract_q(z), Q, atol=1e-14)
        np.testing.assert_allclose(layout.extract_l(z), L, atol=1e-14)


class TestDataLmi:
    def test_block_order(self, reactor, record):
        lmi = hinf_data_lmi(record, reactor.C1, reactor.D1, reactor.E1)
        p, q, l, q1 = 4, 2, 4, 1
        assert lmi.order == 3 * p + q + 2 * l + q1 == 23

    def test_constant_term_entrywise(self, reactor, record):
        # zero decision vector isolates F0: identity couplings at the
        # W-row/performance blocks plus -E1'E1, everything else zero
        lmi = hinf_data_lmi(record, reactor.C1, reactor.D1, reactor.E1)
        p, q, l, q1 = 4, 2, 4, 1
        expected = lmicore.assemble_blocks(
            [p, p, q, l, p, l, q1],
            {(3, 5): np.eye(l), (5, 5): -reactor.E1.T @ reactor.E1, (6, 6): np.eye(q1)})
        z = np.zeros(DecisionLayout(p, q).size)
        np.testing.assert_array_equal(lmi.evaluate(z), expected)

    def test_lambda_coefficient_is_padded_gram(self, reactor, record):
        layout = DecisionLayout(4, 2)
        lmi = hinf_data_lmi(record, reactor.C1, reactor.D1, reactor.E1, layout)
        M = np.vstack([record.X_plus, -record.X_minus, -record.U, -record.W,
                       np.zeros((4 + 4 + 1, 20))])
        np.testing.assert_allclose(lmi.coeffs[layout.lam], M @ M.T, atol=1e-12)

    def test_post_solve_residual(self, solved):
        prob, rep, _ = solved
        assert rep.lmi_residuals[0] >= -1e-6


class TestAuxLmi:
    def test_block_order(self, reactor):
        lmi = hinf_aux_lmi(reactor.C1, reactor.D1, reactor.E1, DecisionLayout(4, 2))
        assert lmi.order == 4 + 4 + 1 == 9

    def test_zero_feedthrough_decouples(self):
        # E1 = 0, D1 = 0: only Q and gI survive off the constant identity
        layout = DecisionLayout(2, 1)
        lmi = hinf_aux_lmi(np.ones((1, 2)), np.zeros((1, 1)), np.zeros((1, 2)),
                           layout, eps=1e-8)
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(2.0 * np.eye(2))
        z[layout.g] = 3.0
        F = lmi.evaluate(z) + 1e-8 * np.eye(lmi.order)
        # cross blocks stay zero except the C_L' column (E1=0 kills (0,1))
        np.testing.assert_allclose(F[:2, 2:4], 0.0, atol=1e-15)
        np.testing.assert_allclose(F[:2, :2], 2.0 * np.eye(2))
        np.testing.assert_allclose(F[2:4, 2:4], 3.0 * np.eye(2))

    def test_post_solve_strictness(self, solved):
        prob, rep, _ = solved
        aux = prob.lmis[1]
        assert aux.name == "hinf-aux"
        # unshifted matrix clears eps minus the acceptance tolerance
        unshifted = aux.residual(rep.z) + aux.strict_shift
        assert unshifted >= aux.strict_shift - 1e-6


class TestOutputLmi:
    def test_zero_output_map_reduces(self):
        layout = DecisionLayout(2, 1)
        lmi = output_constraint_lmi(np.zeros((1, 2)), np.zeros((1, 1)), 10.0,
                                    np.array([[1.2]]), layout)
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(np.eye(2))
        F = lmi.evaluate(z)
        np.testing.assert_allclose(F, lmicore.assemble_blocks(
            [1, 2], {(0, 0): np.array([[0.12]]), (1, 1): np.eye(2)}))

    def test_corner_constant(self, reactor):
        lmi = output_constraint_lmi(reactor.C2, reactor.D2, 10.0, 1.2 * np.eye(1),
                                    DecisionLayout(4, 2))
        assert lmi.F0[0, 0] == pytest.approx(0.12)

    def test_post_solve_residual(self, solved):
        prob, rep, _ = solved
        assert rep.lmi_residuals[2] >= -1e-6

    def test_rejects_nonpositive_cap(self, reactor):
        with pytest.raises(ValueError):
            output_constraint_lmi(reactor.C2, reactor.D2, 0.0, np.eye(1),
                                  DecisionLayout(4, 2))


class TestEllipsoidLmi:
    def test_origin_reduces_to_psd(self):
        layout = DecisionLayout(2, 1)
        lmi = ellipsoid_lmi(np.zeros(2), layout)
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(np.eye(2))
        z[layout.sigma] = 0.5
        assert lmi.residual(z) >= 0.0

    def test_fixed_q_identity_minimal_sigma(self):
        # Q pinned to I through a pair of one-sided LMIs: min sigma = x'x = 25
        layout = DecisionLayout(2, 1)
        x = np.array([3.0, 4.0])
        upper = {i: -Qk for i, Qk in layout.q_basis()}
        pin_up = conic.LmiConstraint(np.eye(2), upper, name="Q<=I")
        pin_dn = q_floor_lmi(layout, eps=0.0)
        pin_dn = conic.LmiConstraint(-np.eye(2), pin_dn.coeffs, name="Q>=I")
        c = np.zeros(layout.size)
        c[layout.sigma] = 1.0
        prob = conic.ConicProblem(c, [ellipsoid_lmi(x, layout), pin_up, pin_dn])
        rep = conic.solve(prob)
        assert rep.status == "optimal"
        assert rep.objective == pytest.approx(25.0, abs=1e-5)

    def test_schur_equivalence_randomized(self):
        # feasibility of the assembled block <=> x' Q^-1 x <= sigma
        rng = np.random.default_rng(7)
        for _ in range(40):
            p = int(rng.integers(1, 5))
            layout = DecisionLayout(p, 1)
            G = rng.standard_normal((p, p))
            Q = G @ G.T + 0.3 * np.eye(p)
            x = rng.standard_normal(p)
            sigma = float(rng.uniform(0.0, 3.0))
            z = np.zeros(layout.size)
            z[:layout.n_q] = lmicore.svec(Q)
            z[layout.sigma] = sigma
            feasible = ellipsoid_lmi(x, layout).residual(z) >= -1e-10
            schur = x @ np.linalg.solve(Q, x) <= sigma + 1e-8
            assert feasible == schur

    def test_active_at_optimum(self, solved):
        _, _, res = solved
        assert res.sigma == pytest.approx(float(X0 @ res.P @ X0), abs=1e-6)


class TestDissipationLmi:
    def test_zero_state_reduces(self):
        layout = DecisionLayout(2, 1)
        lmi = dissipation_lmi(np.zeros(2), np.eye(2), 1.0, 1.0, layout)
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(np.eye(2))
        assert lmi.residual(z) >= 0.0
        assert lmi.F0[0, 0] == 0.0

    def test_scalar_feasible_iff_q_geq_one(self):
        layout = DecisionLayout(1, 1)
        lmi = dissipation_lmi(np.array([1.0]), np.array([[1.0]]), 0.5, 0.5, layout)
        for qval, feasible in ((1.05, True), (0.95, False)):
            z = np.zeros(layout.size)
            z[0] = qval
            assert (lmi.residual(z) >= -1e-12) == feasible

    def test_rejects_indefinite_p(self):
        with pytest.raises(ValueError, match="positive definite"):
            dissipation_lmi(np.ones(2), np.diag([1.0, -1.0]), 0.0, 0.0, DecisionLayout(2, 1))


class TestAffinityAndSymmetry:
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    @settings(max_examples=25, deadline=None)
    def test_affine_combination(self, seed, t):
        rng = np.random.default_rng(seed)
        reactor = batch_reactor()
        u = rng.standard_normal((12, 2))
        w = disturbance_sequence(4, 1e-4, 12, rng)
        rec = collect_data(reactor, rng.standard_normal(4), u, w)
        layout = DecisionLayout(4, 2)
        lmis = [hinf_data_lmi(rec, reactor.C1, reactor.D1, reactor.E1, layout),
                hinf_aux_lmi(reactor.C1, reactor.D1, reactor.E1, layout),
                output_constraint_lmi(reactor.C2, reactor.D2, 10.0, 1.2 * np.eye(1), layout),
                ellipsoid_lmi(rng.standard_normal(4), layout)]
        z1 = rng.standard_normal(layout.size)
        z2 = rng.standard_normal(layout.size)
        zt = t * z1 + (1 - t) * z2
        for lmi in lmis:
            Ft = lmi.evaluate(zt)
            combo = t * lmi.evaluate(z1) + (1 - t) * lmi.evaluate(z2)
            np.testing.assert_allclose(Ft, combo, atol=1e-12)
            np.testing.assert_array_equal(Ft, Ft.T)


class TestProblems:
    def test_static_feasible_on_reactor(self, solved):
        _, rep, res = solved
        assert np.isfinite(res.gamma)
        assert rep.objective == pytest.approx(res.sigma + res.gamma_sq, abs=1e-9)

    def test_weight_modes(self, reactor, record, cfg):
        maps = OutputMaps.from_system(reactor)
        for r1, r2 in ((1.0, 0.0), (0.0, 1.0)):
            c = DesignConfig.batch_reactor_defaults(r1=r1, r2=r2)
            prob = build_static_problem(record, c, X0, maps)
            rep = conic.solve(prob)
            assert rep.status == "optimal"
            assert rep.objective == pytest.approx(
                r1 * rep.z[prob.layout.sigma] + r2 * rep.z[prob.layout.g], abs=1e-9)

    def test_mh_feasible_with_previous_certificate(self, reactor, record, cfg, solved):
        _, _, res = solved
        maps = OutputMaps.from_system(reactor)
        p0 = float(X0 @ res.P @ X0)
        prob = build_mh_problem(record, cfg, X0, res.P, p0, p0, cfg.sigma_s, maps)
        rep = conic.solve(prob)
        assert rep.status == "optimal"
        # Lemma-4-style bound: the step optimum cannot beat reusing the
        # previous solution by more than solver tolerance in reverse
        assert rep.objective <= p0 + res.gamma_sq + 1e-6

    def test_mh_cap_relaxation_monotone(self, reactor, record, cfg, solved):
        _, _, res = solved
        maps = OutputMaps.from_system(reactor)
        p0 = float(X0 @ res.P @ X0)
        objs = []
        for cap in (cfg.sigma_s, 2 * cfg.sigma_s):
            prob = build_mh_problem(record, cfg, X0, res.P, p0, p0, cap, maps)
            rep = conic.solve(prob)
            assert rep.status == "optimal"
            objs.append(rep.objective)
        assert objs[1] <= objs[0] + 1e-6

    def test_tiny_cap_infeasible(self, reactor, record, cfg, solved):
        _, _, res = solved
        maps = OutputMaps.from_system(reactor)
        p0 = float(X0 @ res.P @ X0)
        prob = build_mh_problem(record, cfg, X0, res.P, p0, p0, 1e-9, maps)
        rep = conic.solve(prob)
        assert rep.status == "infeasible"

    def test_model_problem_solves(self, reactor, cfg):
        prob = build_model_problem(reactor, cfg, X0)
        rep = conic.solve(prob)
        assert rep.status == "optimal"

    def test_data_vs_model_gamma_ordering(self, reactor, record):
        # gamma-only objective: the data-driven level cannot beat the
        # model-based one (informativity ordering)
        c = DesignConfig.batch_reactor_defaults(r1=0.0, r2=1.0)
        maps = OutputMaps.from_system(reactor)
        rep_d = conic.solve(build_static_problem(record, c, X0, maps))
        rep_m = conic.solve(build_model_problem(reactor, c, X0))
        assert rep_d.status == rep_m.status == "optimal"
        gd = rep_d.z[DecisionLayout(4, 2).g]
        gm = rep_m.z[DecisionLayout(4, 2).g]
        assert np.sqrt(gm) <= np.sqrt(gd) + 1e-6


class TestExtract:
    def test_identity_q_returns_l(self):
        layout = DecisionLayout(3, 2)
        rng = np.random.default_rng(2)
        L = rng.standard_normal((2, 3))
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(np.eye(3))
        z[layout.l_off:layout.l_off + 6] = L.ravel()
        res = extract_solution(SolveReport(status="optimal", z=z), layout)
        np.testing.assert_allclose(res.K, L, atol=1e-14)

    def test_gain_residual(self):
        layout = DecisionLayout(4, 2)
        rng = np.random.default_rng(3)
        G = rng.standard_normal((4, 4))
        Q = G @ G.T + np.eye(4)
        L = rng.standard_normal((2, 4))
        z = np.zeros(layout.size)
        z[:layout.n_q] = lmicore.svec(Q)
        z[layout.l_off:layout.l_off + 8] = L.ravel()
        res = extract_solution(SolveReport(status="optimal", z=z), layout)
        assert np.linalg.norm(res.K @ Q - L) <= 1e-10

    def test_singular_q_rejected(self):
        layout = DecisionLayout(2, 1)
        z = np.zeros(layout.size)
        with pytest.raises(ValueError, match="singular"):
            extract_solution(SolveReport(status="optimal", z=z), layout)

    def test_non_optimal_rejected(self):
        with pytest.raises(ValueError, match="status"):
            extract_solution(SolveReport(status="infeasible"), DecisionLayout(2, 1))

    def test_reactor_gain_stabilizes(self, reactor, solved):
        _, _, res = solved
        assert lmicore.spectral_radius(reactor.A + reactor.B @ res.K) < 1.0


class TestDesignConfig:
    def test_lambda_bound_enforced(self):
        with pytest.raises(ValueError, match="y2_max"):
            DesignConfig(sigma_s=10.0, Lambda=2.0 * np.eye(1), y2_max=np.array([1.0]))

    def test_weights_validated(self):
        with pytest.raises(ValueError, match="weights"):
            DesignConfig.batch_reactor_defaults(r1=0.0, r2=0.0)
