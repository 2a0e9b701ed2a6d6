import numpy as np
import pytest

from gpcbf.barrier import CertificateTerms, halfspace_qp_filter
from gpcbf.errors import FactorizationError
from gpcbf.socp import (
    STATUS_INFEASIBLE,
    STATUS_OPTIMAL,
    SafetyConeData,
    assemble_safety_cone,
    build_S,
    build_program,
    effective_phi,
    feasibility_necessary,
    feasibility_sufficient,
    matrix_sqrt_factor,
    pointwise_conditions,
    safety_filter_step,
    solve,
)
from gpcbf.validate import grid_oracle_u, random_feasible_instance


def _random_spd(rng, n, scale=1.0):
    M = rng.normal(size=(n, n))
    return scale * (M @ M.T) + 0.1 * np.eye(n)


class TestMatrixSqrtFactor:
    def test_identity(self):
        np.testing.assert_allclose(matrix_sqrt_factor(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(
            matrix_sqrt_factor(np.diag([4.0, 9.0])), np.diag([2.0, 3.0])
        )

    def test_random_spd_reconstructs(self):
        rng = np.random.default_rng(0)
        S = _random_spd(rng, 5)
        L = matrix_sqrt_factor(S)
        assert np.allclose(np.triu(L), L)  # upper triangular
        err = np.max(np.abs(L.T @ L - S))
        assert err <= 1e-10 * np.max(np.abs(S))

    def test_non_pd_rejected(self):
        with pytest.raises(FactorizationError):
            matrix_sqrt_factor(np.diag([1.0, -1.0]))


def _cert(zf, zg, const):
    return CertificateTerms(zf=np.asarray(zf, float), zg=np.atleast_1d(np.asarray(zg, float)), const=float(const))


class TestAssembleSafetyCone:
    def test_prior_identity_hand_assembly(self):
        cert = _cert([0.5, -1.0], [2.0], 0.25)
        gamma = np.array([4.0, 1.0])
        cone = assemble_safety_cone(cert, np.zeros(3), np.eye(3), 1.0, gamma)
        np.testing.assert_allclose(cone.A, [[0.0], [0.0], [1.0]])
        np.testing.assert_allclose(cone.b, [4.0, 1.0, 0.0])
        np.testing.assert_allclose(cone.c, [2.0])
        assert cone.d == pytest.approx(0.5 * 4.0 - 1.0 + 0.25)

    def test_beta_zero_degenerates_to_affine(self):
        cert = _cert([0.5, -1.0], [2.0], 0.25)
        cone = assemble_safety_cone(cert, np.zeros(3), np.eye(3), 0.0, np.array([4.0, 1.0]))
        assert cone.degenerate
        np.testing.assert_allclose(cone.A, np.zeros((3, 1)))
        np.testing.assert_allclose(cone.b, np.zeros(3))

    def test_zero_mean_prior(self):
        cert = _cert([1.0, 2.0], [-0.5], 3.0)
        gamma = np.array([3.0, 1.0])
        cone = assemble_safety_cone(cert, np.zeros(3), np.eye(3), 2.0, gamma)
        np.testing.assert_allclose(cone.c, cert.zg)
        assert cone.d == pytest.approx(float(cert.zf @ gamma) + cert.const)

    def test_cone_encodes_posterior_std(self):
        # |A u + b| must equal beta * sqrt(y' Sigma y) at y = [gamma; u]
        rng = np.random.default_rng(1)
        sigma = _random_spd(rng, 3)
        gamma = np.array([2.0, 1.0])
        cert = _cert([0.3, 0.1], [1.2], -0.4)
        beta = 1.7
        cone = assemble_safety_cone(cert, rng.normal(size=3), sigma, beta, gamma)
        for u in (-2.0, 0.0, 1.5):
            y = np.array([2.0, 1.0, u])
            lhs = np.linalg.norm(cone.A @ [u] + cone.b)
            assert lhs == pytest.approx(beta * np.sqrt(y @ sigma @ y), rel=1e-10)


class TestEffectivePhi:
    def test_constant_folded_into_last_drift_entry(self):
        cert = _cert([1.0, 2.0], [0.5], 7.0)
        mu = np.array([0.1, 0.2, 0.3])
        phi = effective_phi(cert, mu)
        np.testing.assert_allclose(phi, [1.1, 9.2, 0.8])

    def test_phi_reproduces_cone_rhs(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            cert = _cert(rng.normal(size=2), rng.normal(size=1), rng.normal())
            mu = rng.normal(size=3)
            gamma = np.array([rng.uniform(0.5, 4.0), 1.0])
            cone = assemble_safety_cone(cert, mu, np.eye(3), 1.0, gamma)
            phi = effective_phi(cert, mu)
            u = rng.normal()
            y = np.concatenate((gamma, [u]))
            assert float(phi @ y) == pytest.approx(float(cone.c @ [u]) + cone.d, rel=1e-12)


class TestBuildProgram:
    def test_minimal_shape(self):
        prog = build_program(np.zeros(1), None)
        assert prog.n_var == 2
        np.testing.assert_allclose(prog.f, [0.0, 1.0])
        assert len(prog.cones) == 1

    def test_soft_constraint_adds_slack(self):
        prog = build_program(np.zeros(1), None, soft=[(np.array([1.0]), 0.5, 7.0)])
        assert prog.n_var == 3
        np.testing.assert_allclose(prog.f, [0.0, 1.0, 7.0])
        assert len(prog.affines) == 2

    def test_safety_cone_zero_padded(self):
        cone = SafetyConeData(
            A=np.arange(3.0).reshape(3, 1), b=np.ones(3), c=np.array([2.0]), d=1.0
        )
        prog = build_program(np.zeros(1), cone, soft=[(np.array([0.0]), 0.0, 1.0)])
        M2, n2, p2, q2 = prog.cones[1]
        assert M2.shape == (3, 3)
        np.testing.assert_allclose(M2[:, 0], [0.0, 1.0, 2.0])
        np.testing.assert_allclose(M2[:, 1:], 0.0)
        np.testing.assert_allclose(p2, [2.0, 0.0, 0.0])


class TestSolve:
    def test_inactive_constraint_returns_nominal(self):
        cone = SafetyConeData(A=np.zeros((3, 1)), b=np.zeros(3), c=np.array([1.0]), d=0.0)
        out = solve(build_program(np.array([5.0]), cone))
        assert out.status == STATUS_OPTIMAL
        assert out.iterations == 0
        np.testing.assert_allclose(out.u, [5.0])
        assert out.t == 0.0

    def test_matches_grid_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(150):
            cone, u_nom = random_feasible_instance(rng)
            out = solve(build_program(u_nom, cone), tol=1e-9)
            assert out.status == STATUS_OPTIMAL
            ustar = grid_oracle_u(cone, u_nom)
            assert abs(float(out.u[0]) - ustar) <= 2e-4

    def test_detects_infeasible_cone(self):
        # |u| <= -5 has no solution
        cone = SafetyConeData(
            A=np.array([[1.0]]), b=np.array([0.0]), c=np.array([0.0]), d=-5.0
        )
        out = solve(build_program(np.zeros(1), cone), tol=1e-9)
        assert out.status == STATUS_INFEASIBLE

    def test_epigraph_tight_at_optimum(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            cone, u_nom = random_feasible_instance(rng)
            out = solve(build_program(u_nom, cone), tol=1e-9)
            if out.status == STATUS_OPTIMAL and out.iterations > 0:
                assert out.t == pytest.approx(float(np.abs(out.u - u_nom)[0]), abs=1e-7)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        cone, u_nom = random_feasible_instance(rng)
        prog = build_program(u_nom, cone)
        out1 = solve(prog, tol=1e-9)
        out2 = solve(prog, tol=1e-9)
        assert float(out1.u[0]) == float(out2.u[0])
        assert out1.iterations == out2.iterations

    def test_optimal_satisfies_constraints(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            cone, u_nom = random_feasible_instance(rng)
            prog = build_program(u_nom, cone)
            out = solve(prog, tol=1e-9)
            assert out.status == STATUS_OPTIMAL
            slacks = out.diagnostics["constraint_slacks"]
            assert min(slacks) >= -1e-7

    def test_soft_constraint_tradeoff(self):
        # weight above 1 enforces u >= 10; weight below 1 leaves u at nominal
        tight = solve(
            build_program(np.array([5.0]), None, soft=[(np.array([1.0]), -10.0, 100.0)]),
            tol=1e-9,
        )
        loose = solve(
            build_program(np.array([5.0]), None, soft=[(np.array([1.0]), -10.0, 0.1)]),
            tol=1e-9,
        )
        assert tight.u[0] == pytest.approx(10.0, abs=1e-6)
        assert loose.u[0] == pytest.approx(5.0, abs=1e-6)

    def test_multi_input_projection(self):
        # m = 2 affine constraint: solution is the Euclidean projection
        cone = SafetyConeData(
            A=np.zeros((4, 2)), b=np.zeros(4), c=np.array([1.0, 1.0]), d=-4.0
        )
        u_nom = np.array([1.0, 1.0])
        out = solve(build_program(u_nom, cone), tol=1e-10)
        expected = halfspace_qp_filter(u_nom, np.array([1.0, 1.0]), -4.0)
        np.testing.assert_allclose(out.u, expected, atol=1e-8)


class TestFeasibilityNecessary:
    def test_boundary(self):
        assert feasibility_necessary(np.array([1.0, 0, 0]), np.eye(3), 1.0) == pytest.approx(0.0)

    def test_certified_infeasible(self):
        assert feasibility_necessary(np.array([1.0, 0, 0]), np.eye(3), 2.0) == pytest.approx(0.75)

    def test_scaled(self):
        assert feasibility_necessary(np.array([2.0, 0.0]), 4.0 * np.eye(2), 1.0) == pytest.approx(0.0)

    def test_singular_sigma_raises(self):
        with pytest.raises(np.linalg.LinAlgError):
            feasibility_necessary(np.array([1.0, 0.0]), np.zeros((2, 2)), 1.0)


class TestBuildS:
    def _random_inputs(self, rng, r=2, m=1):
        cert = _cert(rng.normal(size=r), rng.normal(size=m), rng.normal())
        mu = rng.normal(size=r + m)
        sigma = _random_spd(rng, r + m)
        beta = float(rng.uniform(0.5, 3.0))
        gamma = np.concatenate((rng.uniform(0.5, 4.0, size=r - 1), [1.0]))
        return cert, mu, sigma, beta, gamma

    def test_schur_identity(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            cert, mu, sigma, beta, gamma = self._random_inputs(rng)
            S = build_S(cert, mu, sigma, beta, gamma)
            phi = effective_phi(cert, mu)
            M_over_1 = beta**2 * sigma - np.outer(phi, phi)
            np.testing.assert_allclose(S, M_over_1, atol=1e-10 * max(1, np.abs(M_over_1).max()))

    def test_identity_case(self):
        cert = _cert([0.0, 0.0], [0.0], 0.0)
        S = build_S(cert, np.zeros(3), np.eye(3), 1.0, np.array([1.0, 1.0]))
        np.testing.assert_allclose(S, np.eye(3), atol=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(8)
        cert, mu, sigma, beta, gamma = self._random_inputs(rng, r=3, m=2)
        S = build_S(cert, mu, sigma, beta, gamma)
        np.testing.assert_allclose(S, S.T, atol=1e-12)


class TestFeasibilitySufficient:
    def test_scalar_certified(self):
        certified, eig = feasibility_sufficient(np.array([[0.25 - 1.0]]))
        assert certified and eig == pytest.approx(-0.75)

    def test_zero_actuation_not_certified(self):
        A = np.array([[0.5], [0.2]])
        S3 = A.T @ A  # c = 0
        certified, eig = feasibility_sufficient(S3)
        assert not certified
        assert eig >= 0.0

    def test_matches_characteristic_polynomial_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            M = rng.normal(size=(3, 3))
            S3 = 0.5 * (M + M.T)
            certified, eig = feasibility_sufficient(S3)
            roots = np.roots(np.poly(S3))
            assert eig == pytest.approx(float(np.max(roots.real)), abs=1e-8)
            assert certified == bool(np.max(roots.real) < -1e-10)


class TestPointwiseConditions:
    def test_zero_inputs(self):
        S = np.zeros((3, 3))
        phi = np.zeros(3)
        affine, quad = pointwise_conditions(np.zeros(2), np.zeros(1), S, phi)
        assert affine == 0.0 and quad == 0.0

    def test_hold_at_solver_optimum(self):
        rng = np.random.default_rng(10)
        checked = 0
        for _ in range(100):
            r, m = 2, 1
            cert = _cert(rng.normal(size=r), rng.normal(size=m), rng.normal())
            mu = 0.1 * rng.normal(size=r + m)
            sigma = _random_spd(rng, r + m, scale=0.2)
            beta = float(rng.uniform(0.2, 1.5))
            gamma = np.array([rng.uniform(0.5, 3.0), 1.0])
            cone = assemble_safety_cone(cert, mu, sigma, beta, gamma)
            out = solve(build_program(rng.normal(size=m), cone), tol=1e-9)
            if out.status != STATUS_OPTIMAL:
                continue
            phi = effective_phi(cert, mu)
            S = build_S(cert, mu, sigma, beta, gamma)
            affine, quad = pointwise_conditions(gamma, out.u, S, phi)
            assert affine >= -1e-8
            assert quad <= 1e-8 * max(1.0, np.abs(S).max() * (1 + float(out.u @ out.u)))
            checked += 1
        assert checked > 50

    def test_certified_eigendirection_makes_quadratic_negative(self):
        # replicate the sufficient-condition proof construction numerically
        rng = np.random.default_rng(11)
        for _ in range(20):
            r, m = 2, 2
            cert = _cert(rng.normal(size=r), rng.normal(size=m), rng.normal())
            mu = rng.normal(size=r + m) * 0.1
            sigma = _random_spd(rng, r + m, scale=0.05)
            beta = 0.4
            gamma = np.array([1.5, 1.0])
            S = build_S(cert, mu, sigma, beta, gamma)
            S3 = S[r:, r:]
            certified, max_eig = feasibility_sufficient(S3)
            if not certified:
                continue
            eigvals, eigvecs = np.linalg.eigh(S3)
            e_m = eigvecs[:, -1]
            phi = effective_phi(cert, mu)
            c = phi[r:]
            u = 1e6 * np.sign(float(c @ e_m)) * e_m
            affine, quad = pointwise_conditions(gamma, u, S, phi)
            assert quad < 0.0
            assert affine > 0.0


class TestFilterInvariants:
    def test_beta_monotone_objective(self):
        rng = np.random.default_rng(12)
        checked = 0
        while checked < 40:
            r, m = 2, 1
            cert = _cert(rng.normal(size=r), rng.normal(size=m) + 1.0, rng.normal())
            mu = rng.normal(size=3) * 0.1
            sigma = _random_spd(rng, 3, scale=0.1)
            gamma = np.array([2.0, 1.0])
            u_nom = rng.normal(size=1)
            betas = sorted(rng.uniform(0.0, 2.0, size=2))
            outs = []
            for beta in betas:
                cone = assemble_safety_cone(cert, mu, sigma, beta, gamma)
                outs.append(solve(build_program(u_nom, cone), tol=1e-9))
            if any(o.status != STATUS_OPTIMAL for o in outs):
                continue
            assert outs[1].t >= outs[0].t - 1e-7
            checked += 1

    def test_beta_zero_reduces_to_halfspace(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            r, m = 2, 1
            cert = _cert(rng.normal(size=r), rng.normal(size=m), rng.normal())
            mu = rng.normal(size=3)
            sigma = _random_spd(rng, 3)
            gamma = np.array([rng.uniform(0.5, 4.0), 1.0])
            u_nom = rng.normal(size=1) * 3
            out = safety_filter_step(u_nom, cert, mu, sigma, 0.0, gamma, tol=1e-10)
            phi = effective_phi(cert, mu)
            c, d = phi[r:], float(phi[:r] @ gamma)
            if np.linalg.norm(c) < 1e-3:
                continue
            expected = halfspace_qp_filter(u_nom, c, d)
            assert out.status == STATUS_OPTIMAL
            np.testing.assert_allclose(out.u, expected, atol=1e-8)

    def test_step_diagnostics_populated(self):
        rng = np.random.default_rng(14)
        cert = _cert([0.2, -0.1], [1.0], 0.5)
        out = safety_filter_step(
            np.zeros(1), cert, np.zeros(3), np.eye(3), 1.0, np.array([2.0, 1.0])
        )
        d = out.diagnostics
        assert "necessary_condition_value" in d
        assert "sufficient_condition_eigenvalue" in d
        assert "constraint_slacks" in d
        assert d["degenerate_zg"] is False

    def test_necessary_condition_certificate_upgrades_status(self):
        # tiny beta-scaled uncertainty dominated by phi: value > 0 certifies
        cert = _cert([0.0, 0.0], [0.0], 0.0)
        mu = np.array([1.0, 0.0, 0.0])
        sigma = np.eye(3)
        out = safety_filter_step(np.zeros(1), cert, mu, sigma, 2.0, np.array([1.0, 1.0]))
        assert out.status == STATUS_INFEASIBLE
        assert out.diagnostics["necessary_condition_value"] > 0.0
