"""Tests for the certification pipeline against closed-form oracles."""

import math

import numpy as np
import pytest

from hypencil.hyperbolic import HPoint, dist_hyp, vertical_triangle
from hypencil.models import (
    PencilEmbedding,
    constant_embedding,
    euclidean_plane_target,
    identity_embedding,
    pencil_embedding,
    warped_plane_target,
)
from hypencil.spaces import ExactHyperbolicSpace, StarSpace
from hypencil.certify import (
    Certificate,
    CertificationError,
    GridBundle,
    HypothesisEstimates,
    certify_embedding,
    check_divergence,
    compute_K,
    default_grids,
    derived_Delta,
    displaced_height,
    divergence_schedule,
    estimate_C0,
    estimate_delta,
    estimate_eps_R,
    hyperbolicity_probe,
    probe_sweep,
    sweep_flags_nonhyperbolic,
    verify_almost_isometry,
)

# the thinness constant of an ideal triangle in the hyperbolic plane,
# log(1 + sqrt 2), frozen from a dense two-parameter search
IDEAL_TRIANGLE_THINNESS = 0.8813735870195430


def star_pencil(legs=5, leg_length=30.0):
    """Degenerate pencil into a star: flow lines share the hub ray upward
    and fan into distinct legs downward; every triangle is 0-slim."""
    star = StarSpace(legs, leg_length)

    def mapper(x, t):
        t = min(max(t, -leg_length), leg_length)
        if t >= 0:
            return (0, t)
        leg = 1 if float(x[0]) < 0 else 2
        return (leg, -t)

    return PencilEmbedding(star, 2, "star", _mapper=mapper)


class TestComputeK:
    def test_degenerate_tree_values(self):
        est = HypothesisEstimates(0.0, 1.0, 0.0, True)
        cert = compute_K(est, 0.0)
        assert cert.Delta == 0.0
        assert cert.C1 == 1.0
        assert cert.K1 == 4.0
        assert cert.K2 == 2.0
        assert cert.K == 4.0

    def test_worked_arithmetic(self):
        est = HypothesisEstimates(1.0, 1.0, 1.0, True)
        cert = compute_K(est, 2.0)
        assert cert.Delta == 3.0
        assert cert.C1 == 20.0
        assert cert.K1 == 2 * 22 + 3 + 2
        assert cert.K2 == 21 + 8 + 2 + 3 + 2
        assert cert.K == 49.0

    def test_no_certificate_without_divergence(self):
        est = HypothesisEstimates(0.5, 1.0, 0.5, False)
        with pytest.raises(CertificationError):
            compute_K(est, 1.0)

    def test_defining_equalities_enforced(self):
        est = HypothesisEstimates(1.0, 1.0, 1.0, True)
        with pytest.raises(ValueError):
            Certificate(estimates=est, C0=2.0, Delta=99.0, C1=20.0,
                        K1=49.0, K2=36.0, K=49.0)

    def test_certificate_json_keys(self):
        est = HypothesisEstimates(1.0, 1.0, 1.0, True)
        cert = compute_K(est, 2.0)
        doc = cert.to_json_dict()
        assert set(doc) == {
            "delta", "epsilon", "R", "C0", "Delta", "C1", "K1", "K2", "K",
            "sup_discrepancy", "pairs", "pass", "grids", "witnesses",
        }


class TestEstimateDelta:
    def test_identity_plane_below_ideal_thinness(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        val = estimate_delta(F, grid)
        assert val <= 0.9
        # sampled estimate brackets the dense-search constant
        assert val == pytest.approx(IDEAL_TRIANGLE_THINNESS, abs=0.02)

    def test_star_pencil_is_zero_slim(self):
        # dyadic step and depth keep coincident samples bit-identical, so
        # the 0-slimness of the tree comes out as an exact zero
        F = star_pencil()
        base = default_grids(identity_embedding(2))
        grid = GridBundle(
            triangle_separations=base.triangle_separations,
            side_top=8.0,
            depth=16.0,
            pair_t_values=base.pair_t_values,
            pair_separations=base.pair_separations,
            divergence_separation=base.divergence_separation,
            divergence_t_values=base.divergence_t_values,
            verify_x_range=base.verify_x_range,
            verify_t_range=base.verify_t_range,
            side_step=1.0 / 64.0,
        )
        val = estimate_delta(F, grid)
        assert val == 0.0

    def test_grid_size_precondition(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        small = GridBundle(
            triangle_separations=(1.0, 2.0),
            side_top=grid.side_top, depth=grid.depth,
            pair_t_values=grid.pair_t_values,
            pair_separations=grid.pair_separations,
            divergence_separation=grid.divergence_separation,
            divergence_t_values=grid.divergence_t_values,
            verify_x_range=grid.verify_x_range,
            verify_t_range=grid.verify_t_range,
        )
        with pytest.raises(ValueError):
            estimate_delta(F, small)

    def test_monotone_in_grid(self):
        # estimates are maxima over samples: more triangles never shrink them
        F = identity_embedding(2)
        grid = default_grids(F)
        sub = GridBundle(
            triangle_separations=grid.triangle_separations[:10],
            side_top=grid.side_top, depth=grid.depth,
            pair_t_values=grid.pair_t_values,
            pair_separations=grid.pair_separations,
            divergence_separation=grid.divergence_separation,
            divergence_t_values=grid.divergence_t_values,
            verify_x_range=grid.verify_x_range,
            verify_t_range=grid.verify_t_range,
        )
        assert estimate_delta(F, grid) >= estimate_delta(F, sub)


class TestEstimateEpsR:
    def test_identity_R_below_one(self):
        # horocyclic bound: pairs with w < 1 are at most 2 asinh(1/2) apart
        F = identity_embedding(2)
        eps, R = estimate_eps_R(F, default_grids(F))
        assert eps == 1.0
        assert R <= 1.0
        assert R == pytest.approx(2 * math.asinh(0.4995), abs=0.01)

    def test_warped_plane_R_within_snap_budget(self):
        wp = warped_plane_target(-2.0, 11.0, 1.0, 0.05, x2_max=0.1)
        F = pencil_embedding(wp, None, 2)
        eps, R = estimate_eps_R(F, default_grids(F))
        assert R <= 1.0 + 2 * wp.resolution

    def test_height_range_precondition(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        bad = GridBundle(
            triangle_separations=grid.triangle_separations,
            side_top=grid.side_top, depth=grid.depth,
            pair_t_values=tuple(np.linspace(-2, 2, 9)),
            pair_separations=grid.pair_separations,
            divergence_separation=grid.divergence_separation,
            divergence_t_values=grid.divergence_t_values,
            verify_x_range=grid.verify_x_range,
            verify_t_range=grid.verify_t_range,
        )
        with pytest.raises(ValueError):
            estimate_eps_R(F, bad)


class TestDivergence:
    def test_identity_diverges(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        sched = divergence_schedule(F, grid)
        rec = {}
        assert check_divergence(F, sched, R=1.0, record=rec)
        # oracle: distances along the schedule follow 2 asinh(w/2)
        ws = np.array(rec["divergence_trace"]["w"])
        ds = np.array(rec["divergence_trace"]["d"])
        assert np.allclose(ds, 2 * np.arcsinh(np.sort(ws) / 2), rtol=1e-9)

    def test_constant_map_fails(self):
        F = constant_embedding(ExactHyperbolicSpace(2), HPoint([0.0], 0.0))
        grid = default_grids(identity_embedding(2))
        assert not check_divergence(F, divergence_schedule(F, grid), R=0.0)

    def test_narrow_schedule_rejected(self):
        F = identity_embedding(2)
        sched = [(np.array([-1.0]), np.array([1.0]), t) for t in (0.0, -1.0, -2.0)]
        with pytest.raises(ValueError):
            check_divergence(F, sched)


class TestDisplacedHeight:
    def oracle_h(self, sep, Delta):
        # closed form in the plane: the distance from (x, t) to the opposite
        # vertical line is asinh(e^{-t} sep), so the displaced height solves
        # asinh(e^{-t} sep) = Delta
        return math.log(sep / math.sinh(Delta))

    def test_matches_closed_form(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        Delta = 2.9
        for sep in (0.5, 2.0, 8.0):
            T = vertical_triangle([-sep / 2], [sep / 2])
            h = displaced_height(F, T, Delta, grid)
            assert h == pytest.approx(self.oracle_h(sep, Delta), abs=2e-3)

    def test_matches_dense_search_oracle(self):
        # oracle: dense scan over (t, s) pairs for the first crossing
        F = identity_embedding(2)
        grid = default_grids(F)
        Delta = 2.9
        sep = 2.0
        T = vertical_triangle([-1.0], [1.0])
        ts = np.linspace(T.midpoint_height, T.midpoint_height - 4, 4001)
        ss = np.linspace(-grid.depth, grid.side_top, 4001)
        from hypencil.hyperbolic import distance_arrays
        h_oracle = None
        for t in ts:
            d = distance_arrays(np.array([[-1.0]]), t,
                                np.full((len(ss), 1), 1.0), ss).min()
            if d > Delta:
                break
            h_oracle = t
        got = displaced_height(F, T, Delta, grid)
        assert got == pytest.approx(h_oracle, abs=2e-3)

    def test_gap_bounded_by_Delta_plus_two(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        Delta = 2.9
        for sep in (0.1, 1.0, 10.0):
            T = vertical_triangle([-sep / 2], [sep / 2])
            h = displaced_height(F, T, Delta, grid)
            assert T.midpoint_height - h <= Delta + 2.0

    def test_symmetric_triangle_same_height(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        T1 = vertical_triangle([-1.0], [1.0])
        T2 = vertical_triangle([1.0], [-1.0])
        h1 = displaced_height(F, T1, 2.9, grid)
        h2 = displaced_height(F, T2, 2.9, grid)
        assert h1 == pytest.approx(h2, abs=2e-3)

    def test_sides_close_at_displaced_height(self):
        # proximity bound at the displaced height, recorded per triangle
        F = identity_embedding(2)
        grid = default_grids(F)
        rec = {}
        T = vertical_triangle([-2.0], [2.0])
        displaced_height(F, T, 2.9, grid, record=rec)
        entry = rec["slim_above"][0]
        assert entry["d_at_h"] <= entry["bound"]


class TestEstimateC0:
    def test_identity_bounded(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        Delta = 2.9
        C0 = estimate_C0(F, grid, Delta)
        # closed form: t(r) - h_T = log(sinh Delta / 2), independent of size
        expected = math.log(math.sinh(Delta) / 2.0)
        assert C0 == pytest.approx(expected, abs=5e-3)
        assert C0 <= Delta + 2.0

    def test_singleton_reduces_to_one_triangle(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        Delta = 2.9
        T = vertical_triangle([-1.0], [1.0])
        h = displaced_height(F, T, Delta, grid)
        single = GridBundle(
            triangle_separations=(2e-3, 2.0, 2e1, 0.02, 0.2, 5.0, 8.0, 1.0, 3.0, 0.5),
            side_top=grid.side_top, depth=grid.depth,
            pair_t_values=grid.pair_t_values,
            pair_separations=grid.pair_separations,
            divergence_separation=grid.divergence_separation,
            divergence_t_values=grid.divergence_t_values,
            verify_x_range=grid.verify_x_range,
            verify_t_range=grid.verify_t_range,
        )
        C0 = estimate_C0(F, single, Delta)
        assert C0 >= T.midpoint_height - h - 1e-6

    def test_decade_precondition(self):
        F = identity_embedding(2)
        grid = default_grids(F)
        narrow = GridBundle(
            triangle_separations=tuple(np.linspace(1.0, 2.0, 12)),
            side_top=grid.side_top, depth=grid.depth,
            pair_t_values=grid.pair_t_values,
            pair_separations=grid.pair_separations,
            divergence_separation=grid.divergence_separation,
            divergence_t_values=grid.divergence_t_values,
            verify_x_range=grid.verify_x_range,
            verify_t_range=grid.verify_t_range,
        )
        with pytest.raises(ValueError):
            estimate_C0(F, narrow, 2.9)


class TestVerifyAndPipeline:
    @pytest.mark.parametrize("n", [2, 3])
    def test_identity_certifies_with_zero_discrepancy(self, n):
        cert, table, _ = certify_embedding(identity_embedding(n), pairs=200, seed=0)
        assert cert.passed
        assert cert.empirical_sup_discrepancy == 0.0
        assert math.isfinite(cert.K)

    def test_plane_pencil_in_h3_zero_discrepancy(self):
        F = pencil_embedding(ExactHyperbolicSpace(3), None, 2)
        cert, table, _ = certify_embedding(F, pairs=200, seed=0)
        assert cert.passed
        assert cert.empirical_sup_discrepancy == 0.0

    def test_constant_map_raises(self):
        F = constant_embedding(ExactHyperbolicSpace(2), HPoint([0.0], 0.0))
        with pytest.raises(CertificationError, match="divergence"):
            certify_embedding(F, pairs=50, seed=0)

    def test_table_shape_and_reproducibility(self):
        F = identity_embedding(2)
        cert1, t1, _ = certify_embedding(F, pairs=64, seed=9)
        cert2, t2, _ = certify_embedding(F, pairs=64, seed=9)
        assert t1.shape == (64, 3)
        assert np.array_equal(t1, t2)

    def test_pass_flag_consistency(self):
        F = identity_embedding(2)
        cert, _, _ = certify_embedding(F, pairs=64, seed=9)
        assert cert.passed == (cert.empirical_sup_discrepancy <= cert.K)


class TestHyperbolicityProbe:
    def test_star_is_exactly_zero(self):
        star = StarSpace(5, 8.0)
        val = hyperbolicity_probe(star, 500, rng=np.random.default_rng(0))
        assert val == 0.0

    def test_euclidean_defect_grows_with_box(self):
        rows = probe_sweep(
            lambda size: euclidean_plane_target(size / 2, size / 40),
            [2.0, 4.0, 8.0], 400, seed=0,
        )
        vals = [v for _, v in rows]
        assert vals[0] < vals[1] < vals[2]
        assert sweep_flags_nonhyperbolic(rows)

    def test_exact_plane_defect_plateaus(self):
        rows = probe_sweep(
            lambda size: ExactHyperbolicSpace(2), [4.0, 8.0, 16.0], 2000, seed=0,
        )
        vals = [v for _, v in rows]
        assert max(vals) < 4.0
        assert not sweep_flags_nonhyperbolic(rows)

    def test_quadruple_minimum(self):
        with pytest.raises(ValueError):
            hyperbolicity_probe(StarSpace(3), 99)
