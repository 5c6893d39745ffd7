import numpy as np
import pytest

from viaguard import (BarrierSpec, BoxSet, ControlAffineSystem, SearchParams,
                      algorithm1, certify, dense_verify, result_from_dict,
                      result_to_dict, sample_sphere, sup_H, triangulate,
                      worst_case_over_vulnerable_subsets)
from viaguard.viability import CERTIFIED, INFEASIBLE

from conftest import integrator


def secure_only_system(n, delta=0.0):
    """f = 0, attacker channel has zero gain: sup_H = -2 sum |x_i|."""
    return ControlAffineSystem(
        n=n, m_v=1, m_s=n, f=lambda x: np.zeros(n),
        g_v=lambda x: np.zeros((n, 1)), g_s=lambda x: np.eye(n),
        U_v=BoxSet.symmetric([1.0]), U_s=BoxSet.symmetric(np.ones(n)),
        delta=delta)


def unstable_integrator(n, gain):
    """dx/dt = gain * x + u_s + u_v; certifies only on a shrunken boundary."""
    eye = np.eye(n)
    return ControlAffineSystem(
        n=n, m_v=n, m_s=n,
        f=lambda x, k=gain: k * np.asarray(x, dtype=float),
        g_v=lambda x: eye, g_s=lambda x: eye,
        U_v=BoxSet.symmetric(np.ones(n)), U_s=BoxSet.symmetric(np.ones(n)),
        delta=0.0)


@pytest.fixture
def sphere3(unit_barrier_3d):
    return triangulate(sample_sphere(3, 256)), unit_barrier_3d


class TestCertify:
    def test_passes_when_resolution_term_is_small(self, sphere3):
        mesh, bar = sphere3
        sys = secure_only_system(3)
        report = certify(mesh, sys, bar, sys.U_v, l_h=1.0)
        assert report.passed and report.worst_margin <= -2.0 + 1.0 * mesh.d_a + 1e-12
        assert report.violating_indices.size == 0

    def test_fails_everywhere_with_large_disturbance(self, sphere3):
        mesh, bar = sphere3
        sys = secure_only_system(3, delta=10.0)  # l_B * delta = 20 dominates
        report = certify(mesh, sys, bar, sys.U_v, l_h=1.0)
        assert not report.passed
        assert report.violating_indices.size == mesh.n_points
        assert report.worst_margin > 0

    def test_margins_match_pointwise_definition(self, sphere3):
        mesh, bar = sphere3
        sys = integrator(3, delta=0.05)
        box = BoxSet.symmetric([0.3, 0.3, 0.3])
        report = certify(mesh, sys, bar, box, l_h=0.7)
        direct = np.array([sup_H(sys, bar, p, box) for p in mesh.points])
        direct += 0.7 * mesh.d_a + bar.l_B * sys.delta
        assert np.allclose(report.margins, direct, atol=1e-12)

    def test_requires_triangulated_mesh(self, unit_barrier_3d):
        sys = secure_only_system(3)
        with pytest.raises(ValueError, match="triangulated"):
            certify(sample_sphere(3, 16), sys, unit_barrier_3d, sys.U_v, 1.0)


class TestAlgorithm1:
    def test_analytic_bound_on_planar_integrator(self, unit_barrier_2d):
        sys = integrator(2)
        params = SearchParams(eps1=0.01, eps2=0.05, n_c0=64, n_max=1024,
                              seed=0, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.status == CERTIFIED
        assert result.c == 0.0
        analytic = 1.0 - 1.0 * result.d_a / 2.0
        assert np.all(np.abs(result.uv_tilde.upper - analytic) <= params.eps1 + 1e-12)
        assert np.all(result.uv_tilde.upper == -result.uv_tilde.lower)

    def test_singleton_attack_box_returned_unchanged(self, unit_barrier_2d):
        sys = ControlAffineSystem(
            n=2, m_v=1, m_s=2, f=lambda x: np.zeros(2),
            g_v=lambda x: np.zeros((2, 1)), g_s=lambda x: np.eye(2),
            U_v=BoxSet(np.zeros(1), np.zeros(1)),
            U_s=BoxSet.symmetric([1.0, 1.0]))
        params = SearchParams(eps1=0.1, eps2=0.1, n_c0=32, n_max=128, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.status == CERTIFIED and result.c == 0.0
        assert np.array_equal(result.uv_tilde.lower, [0.0])
        assert np.array_equal(result.uv_tilde.upper, [0.0])
        assert result.iterations.erosions == 0
        assert result.iterations.c_steps == 0
        assert result.iterations.doublings == 0

    def test_unstable_drift_needs_positive_c(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=1.05)
        params = SearchParams(eps1=0.05, eps2=0.05, n_c0=64, n_max=512,
                              seed=0, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.status == CERTIFIED
        assert result.c > 0.0
        # certificate must actually hold on the stored boundary
        mesh = triangulate(sample_sphere(2, result.n_points)).rescaled(
            np.zeros(2), unit_barrier_2d.boundary_radius(result.c))
        assert certify(mesh, sys, unit_barrier_2d, result.uv_tilde,
                       result.l_h_used).passed

    def test_infeasible_reports_best_margin(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=10.0)
        params = SearchParams(eps1=0.25, eps2=0.25, n_c0=8, n_max=32, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.status == INFEASIBLE
        assert result.worst_margin > 0.0
        assert not result.uv_tilde.is_empty

    def test_termination_counter_bounds(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=10.0)
        params = SearchParams(eps1=0.25, eps2=0.25, n_c0=8, n_max=32, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        doubling_cap = int(np.log2(params.n_max / params.n_c0)) + 1
        c_cap = int(np.ceil(1.0 / params.eps2)) + 1
        erosion_cap = int(np.ceil(float(np.max(sys.U_v.width)) / (2 * params.eps1))) + 1
        it = result.iterations
        assert it.doublings <= doubling_cap
        assert it.c_steps <= doubling_cap * c_cap
        assert it.erosions <= doubling_cap * c_cap * erosion_cap

    def test_deterministic_given_seed(self, unit_barrier_3d):
        sys = integrator(3)
        params = SearchParams(eps1=0.02, eps2=0.1, n_c0=64, n_max=256,
                              seed=5, lh_mode="fixed")
        a = result_to_dict(algorithm1(sys, unit_barrier_3d, params))
        b = result_to_dict(algorithm1(sys, unit_barrier_3d, params))
        assert a == b

    def test_recompute_mode_also_certifies(self, unit_barrier_2d):
        sys = integrator(2)
        params = SearchParams(eps1=0.05, eps2=0.1, n_c0=64, n_max=256,
                              seed=0, lh_mode="recompute")
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.status == CERTIFIED

    def test_rejects_undersized_initial_mesh(self, unit_barrier_3d):
        sys = integrator(3)
        with pytest.raises(ValueError, match="n\\+1"):
            algorithm1(sys, unit_barrier_3d,
                       SearchParams(eps1=0.1, eps2=0.1, n_c0=3, n_max=8, l_h=1.0))

    def test_param_validation(self):
        with pytest.raises(ValueError):
            SearchParams(eps1=0.0, eps2=0.1, n_c0=8, n_max=16)
        with pytest.raises(ValueError):
            SearchParams(eps1=0.1, eps2=0.1, n_c0=16, n_max=16)
        with pytest.raises(ValueError):
            SearchParams(eps1=0.1, eps2=0.1, n_c0=8, n_max=16, lh_mode="auto")


class TestMonotonicity:
    def test_erosion_never_hurts(self, sphere3):
        mesh, bar = sphere3
        sys = integrator(3)
        worst = np.inf
        box = sys.U_v
        for _ in range(6):
            report = certify(mesh, sys, bar, box, l_h=0.5)
            assert report.worst_margin <= worst + 1e-12
            worst = report.worst_margin
            box = box.erode(0.1)

    def test_disturbance_shifts_margin_exactly(self, sphere3):
        mesh, bar = sphere3
        base = integrator(3, delta=0.0)
        bumped = integrator(3, delta=0.25)
        box = BoxSet.symmetric([0.5, 0.5, 0.5])
        w0 = certify(mesh, base, bar, box, l_h=1.0).worst_margin
        w1 = certify(mesh, bumped, bar, box, l_h=1.0).worst_margin
        assert w1 - w0 == pytest.approx(bar.l_B * 0.25, abs=1e-12)


class TestDenseVerify:
    @pytest.fixture
    def certified(self, unit_barrier_2d):
        sys = integrator(2)
        params = SearchParams(eps1=0.01, eps2=0.05, n_c0=64, n_max=1024,
                              seed=0, l_h=1.0)
        return sys, unit_barrier_2d, algorithm1(sys, unit_barrier_2d, params)

    def test_certified_result_passes(self, certified):
        sys, bar, result = certified
        report = dense_verify(result, sys, bar, oversample=10, seed=3)
        assert report.passed
        assert report.worst_margin <= 1e-6

    def test_inflated_bound_fails(self, certified):
        sys, bar, result = certified
        from dataclasses import replace
        tampered = replace(result, uv_tilde=BoxSet.symmetric([1.5, 1.5]))
        report = dense_verify(tampered, sys, bar, oversample=10, seed=3)
        assert not report.passed

    def test_understated_c_fails_on_unstable_system(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=1.05)
        params = SearchParams(eps1=0.05, eps2=0.05, n_c0=64, n_max=512,
                              seed=0, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        assert result.c > 0.0
        assert dense_verify(result, sys, unit_barrier_2d, 10, seed=2).passed
        from dataclasses import replace
        corrupted = replace(result, c=0.0)
        assert not dense_verify(corrupted, sys, unit_barrier_2d, 10, seed=2).passed

    def test_margins_differ_from_certify_by_resolution_slack(self, unit_barrier_3d):
        # same sampler, same count, same points: only the l_H * d_a term differs
        sys = integrator(3)
        mesh = triangulate(sample_sphere(3, 200))
        box = BoxSet.symmetric([0.4, 0.4, 0.4])
        cert = certify(mesh, sys, unit_barrier_3d, box, l_h=0.8)
        from viaguard.viability import ViabilityResult, IterationCounters
        result = ViabilityResult(
            c=0.0, uv_tilde=box, n_points=200, d_a=mesh.d_a, worst_margin=cert.worst_margin,
            l_h_used=0.8, l_b_used=2.0, delta=0.0,
            iterations=IterationCounters(), status=CERTIFIED)
        dense = dense_verify(result, sys, unit_barrier_3d, oversample=1, seed=0)
        assert np.allclose(dense.margins, cert.margins - 0.8 * mesh.d_a, atol=1e-12)

    def test_requires_certified_status(self, certified):
        sys, bar, result = certified
        from dataclasses import replace
        with pytest.raises(ValueError, match="Certified"):
            dense_verify(replace(result, status=INFEASIBLE), sys, bar)

    def test_oversample_validated(self, certified):
        sys, bar, result = certified
        with pytest.raises(ValueError, match="oversample"):
            dense_verify(result, sys, bar, oversample=0)


class TestResultSerialization:
    def test_round_trip_is_exact(self, unit_barrier_2d):
        sys = integrator(2)
        params = SearchParams(eps1=0.01, eps2=0.05, n_c0=64, n_max=256,
                              seed=1, l_h=1.0)
        result = algorithm1(sys, unit_barrier_2d, params)
        doc = result_to_dict(result, tool_version="x")
        back = result_from_dict(doc)
        assert result_to_dict(back, tool_version="x") == doc
        assert back.c == result.c
        assert np.array_equal(back.uv_tilde.lower, result.uv_tilde.lower)


class TestSubsetSweep:
    def test_single_channel_matches_direct_run(self, unit_barrier_2d):
        sys = ControlAffineSystem(
            n=2, m_v=1, m_s=1, f=lambda x: np.zeros(2),
            g_v=lambda x: np.eye(2)[:, :1], g_s=lambda x: np.eye(2)[:, 1:],
            U_v=BoxSet.symmetric([1.0]), U_s=BoxSet.symmetric([1.0]))
        params = SearchParams(eps1=0.1, eps2=0.25, n_c0=32, n_max=128,
                              seed=0, l_h=1.0)
        sweep = worst_case_over_vulnerable_subsets(sys, unit_barrier_2d, params)
        assert set(sweep.results) == {(0,), (1,), (0, 1)}
        direct = algorithm1(sys, unit_barrier_2d, params)
        single = sweep.results[(0,)]
        assert single.status == direct.status and single.c == direct.c
        assert np.array_equal(single.uv_tilde.upper, direct.uv_tilde.upper)

    def test_symmetric_channels_give_identical_results(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=1.05)
        params = SearchParams(eps1=0.1, eps2=0.1, n_c0=32, n_max=128,
                              seed=0, l_h=1.0)
        sweep = worst_case_over_vulnerable_subsets(sys, unit_barrier_2d, params)
        singles = [sweep.results[s] for s in sweep.results if len(s) == 1]
        # channels 0/1 are vulnerable copies, 2/3 their secure twins
        by_len = {}
        for s, r in sweep.results.items():
            by_len.setdefault(len(s), []).append((s, r))
        assert sweep.c_star is not None
        assert sweep.c_star == max(r.c for r in sweep.results.values() if r.certified)
        assert len(singles) == 4
        assert len({round(r.c, 12) for _, r in by_len[1]}) <= 2

    def test_subset_cap(self, unit_barrier_2d):
        sys = unstable_integrator(2, gain=1.05)  # m = 4
        params = SearchParams(eps1=0.25, eps2=0.5, n_c0=8, n_max=16, l_h=1.0)
        with pytest.raises(ValueError, match="explicit subsets"):
            worst_case_over_vulnerable_subsets(sys, unit_barrier_2d, params,
                                               max_inputs=3)
        sweep = worst_case_over_vulnerable_subsets(
            sys, unit_barrier_2d, params, subsets=[(0,), (1, 2)])
        assert set(sweep.results) == {(0,), (1, 2)}
