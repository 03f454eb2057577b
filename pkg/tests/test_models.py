"""Tests for square-tiled surfaces, warped targets, and pencil embeddings."""

import math

import numpy as np
import pytest

from hypencil.hyperbolic import HPoint, dist_hyp
from hypencil.models import (
    GOLDEN_SLOPE,
    Leaf,
    SquareTiledSurface,
    constant_embedding,
    euclidean_plane_target,
    golden_leaf,
    identity_embedding,
    pencil_embedding,
    square_torus,
    staircase_surface,
    warped_cover_target,
    warped_plane_target,
)
from hypencil.spaces import ExactHyperbolicSpace


class TestSquareTiledSurface:
    def test_staircase_has_one_cone_point_of_angle_six_pi(self):
        s = staircase_surface()
        cones = s.cone_points
        assert len(cones) == 1
        orbit, angle = cones[0]
        assert len(orbit) == 12
        assert angle == pytest.approx(6 * math.pi)
        assert s.genus == 2

    def test_gauss_bonnet_exact(self):
        # sum(angle - 2 pi) = 2 pi (2g - 2), in exact integer units of pi/2
        for surf in (staircase_surface(), square_torus()):
            lhs, rhs = surf.gauss_bonnet_sides()
            assert lhs == rhs

    def test_torus_has_no_cone_points(self):
        t = square_torus()
        assert t.cone_points == []
        assert t.genus == 1

    def test_bad_permutation_rejected(self):
        with pytest.raises(ValueError):
            SquareTiledSurface(2, right_glue=(0, 0), top_glue=(0, 1))

    def test_disconnected_gluing_rejected(self):
        # two squares glued only to themselves
        with pytest.raises(ValueError):
            SquareTiledSurface(2, right_glue=(0, 1), top_glue=(0, 1))

    def test_every_corner_in_exactly_one_orbit(self):
        s = staircase_surface()
        seen = [sc for orbit in s.corner_orbits() for sc in orbit]
        assert len(seen) == len(set(seen)) == 4 * s.num_squares


class TestLeaf:
    def test_direction_normalized(self):
        leaf = Leaf((0.0, 0.0), (3.0, 4.0))
        assert np.allclose(leaf.direction, (0.6, 0.8))

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError):
            Leaf((0.0, 0.0), (0.0, 0.0))

    def test_golden_leaf_slope(self):
        leaf = golden_leaf()
        assert leaf.direction[1] / leaf.direction[0] == pytest.approx(GOLDEN_SLOPE)

    def test_leaf_hitting_cone_point_rejected(self):
        # slope 1 through the square center runs straight into a corner,
        # and every staircase corner is the cone point
        leaf = Leaf((0.5, 0.5), (1.0, 1.0))
        with pytest.raises(ValueError, match="cone point"):
            warped_cover_target(staircase_surface(), 1, 0.0, 0.5, 0.1, leaf=leaf,
                                leaf_range=0.9)


class TestWarpedPlaneTarget:
    def test_degenerate_boxes_rejected(self):
        with pytest.raises(ValueError):
            warped_plane_target(1.0, 0.0, 1.0, 0.1)
        with pytest.raises(ValueError):
            warped_plane_target(-1.0, 1.0, 1.0, -0.1)
        with pytest.raises(ValueError):
            warped_plane_target(-1.0, 1.0, 0.0, 0.1)

    def test_vertical_distance_within_two_percent(self):
        wp = warped_plane_target(-0.5, 4.5, 0.4, 0.1, x2_max=0.2)
        a = wp.nearest_vertex((0.0, 0.0, 0.0))
        b = wp.nearest_vertex((0.0, 0.0, 4.0))
        assert wp.distance(a, b) == pytest.approx(4.0, rel=0.02)

    def test_horocyclic_bound_on_mesh(self):
        # d(((0,0),t), ((u,0),t)) <= e^{-t} u: the straight horizontal track
        # has exactly that weight, so the shortest path cannot exceed it
        wp = warped_plane_target(-1.0, 2.0, 1.0, 0.1, x2_max=0.2)
        for t in (0.0, 0.5, 1.0):
            for u in (0.4, 0.8):
                a = wp.nearest_vertex((0.0, 0.0, t))
                b = wp.nearest_vertex((u, 0.0, t))
                assert wp.distance(a, b) <= math.exp(-t) * u + 1e-9

    def test_oracle_flag_attached(self):
        wp = warped_plane_target(-0.5, 0.5, 0.3, 0.1)
        assert isinstance(wp.oracle, ExactHyperbolicSpace)
        assert wp.oracle.dim == 3

    def test_slice_routing_matches_full_graph(self):
        # in-plane queries answered on the 2D slice equal 3D mesh distances
        wp = warped_plane_target(-0.8, 1.2, 0.5, 0.1, x2_max=0.2)
        rng = np.random.default_rng(4)
        for _ in range(12):
            a = wp.nearest_vertex((rng.uniform(-0.4, 0.4), 0.0, rng.uniform(-0.6, 1.0)))
            b = wp.nearest_vertex((rng.uniform(-0.4, 0.4), 0.0, rng.uniform(-0.6, 1.0)))
            d_slice = wp.distance(a, b)
            d_full = wp.mesh.distance(a, b)
            assert d_slice == pytest.approx(d_full, rel=1e-9, abs=1e-12)

    def test_accuracy_against_exact_oracle(self):
        wp = warped_plane_target(-1.0, 3.0, 1.0, 0.05, x2_max=0.1)
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(30):
            pa = (rng.uniform(-0.7, 0.7), 0.0, rng.uniform(-0.3, 1.0))
            pb = (rng.uniform(-0.7, 0.7), 0.0, rng.uniform(-0.3, 1.0))
            a, b = wp.nearest_vertex(pa), wp.nearest_vertex(pb)
            ca, cb = wp.vertex_coords(a), wp.vertex_coords(b)
            exact = dist_hyp(HPoint(ca[:2], ca[2]), HPoint(cb[:2], cb[2]))
            if exact < 0.5:
                continue
            worst = max(worst, abs(wp.distance(a, b) - exact) / exact)
        assert worst < 0.02


class TestWarpedCoverTarget:
    def test_staircase_cover_builds_and_connected(self):
        wc = warped_cover_target(staircase_surface(), 1, -0.5, 0.5, 0.1,
                                 leaf_range=0.6)
        assert wc.mesh.is_connected()
        lhs, rhs = wc.surface.gauss_bonnet_sides()
        assert lhs == rhs

    def test_cone_points_become_branch_vertices(self):
        # a fully developed cone vertex carries 6 pi of surface: three times
        # the planar edges of a regular 2 pi vertex
        wc = warped_cover_target(staircase_surface(), 1, 0.0, 0.5, 0.1,
                                 leaf_range=0.6, complete_fans=True)
        regular = 16
        degs = [wc.base_degree(b) for b in wc.cone_base_nodes]
        assert max(degs) == 3 * regular

    def test_identity_distance(self):
        wc = warped_cover_target(staircase_surface(), 1, -0.5, 0.5, 0.1,
                                 leaf_range=0.5)
        v = wc.vertex_at(0, 2)
        assert wc.distance(v, v) == 0.0

    def test_local_distances_match_plane_away_from_cones(self):
        # same warp, same stencil: local queries in a flat patch agree with
        # the plane model on offsets both lattices carry
        h = 0.1
        wc = warped_cover_target(staircase_surface(), 1, -0.5, 1.5, h,
                                 leaf_range=0.5)
        wp = warped_plane_target(-0.5, 1.5, 1.0, h, x2_max=1.0)
        copy0 = wc.trace.copies[len(wc.trace.copies) // 2]
        base0 = wc.base_node(copy0, np.array([0.3, 0.3]))
        k0 = wc.height_index(0.0)
        offsets = [(3, 0, 0), (0, 3, 0), (0, 0, 4), (2, 0, 2), (0, 2, 2), (2, 2, 0)]
        for (di, dj, dk) in offsets:
            a_c = wc.vertex_at(base0, k0)
            # matching cover vertex addressed inside the same square copy;
            # developing-plane coordinates overlap between sheets, so
            # coordinate snapping must not cross copies
            base_b = wc.base_node(copy0, np.array([0.3 + di * h, 0.3 + dj * h]))
            b_c = wc.vertex_at(base_b, k0 + dk)
            d_cover = wc.distance(a_c, b_c)
            b_plane_a = wp.nearest_vertex((0.0, 0.0, 0.0))
            b_plane_b = wp.nearest_vertex((di * h, dj * h, dk * h))
            d_plane = wp.mesh.distance(b_plane_a, b_plane_b)
            assert d_cover == pytest.approx(d_plane, rel=0.02, abs=1e-9)

    def test_sheets_below_one_rejected(self):
        with pytest.raises(ValueError):
            warped_cover_target(staircase_surface(), 0, -0.5, 0.5, 0.1)


class TestPencilEmbeddings:
    def test_identity_is_exact_isometry(self):
        F = identity_embedding(3)
        rng = np.random.default_rng(0)
        for _ in range(50):
            x1, t1 = rng.uniform(-3, 3, 2), rng.uniform(-2, 2)
            x2, t2 = rng.uniform(-3, 3, 2), rng.uniform(-2, 2)
            p, q = F.map_point(x1, t1), F.map_point(x2, t2)
            assert F.target.distance(p, q) == dist_hyp(HPoint(x1, t1), HPoint(x2, t2))

    def test_coordinate_plane_pencil_is_isometric(self):
        # the plane spanned by the first coordinate inside hyperbolic 3-space
        F = pencil_embedding(ExactHyperbolicSpace(3), None, 2)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x1, t1 = rng.uniform(-3, 3, 1), rng.uniform(-2, 2)
            x2, t2 = rng.uniform(-3, 3, 1), rng.uniform(-2, 2)
            d_dom = dist_hyp(HPoint(x1, t1), HPoint(x2, t2))
            d_img = F.target.distance(F.map_point(x1, t1), F.map_point(x2, t2))
            assert d_img == d_dom

    def test_basepoint_maps_to_marked_point(self):
        F = identity_embedding(2)
        p = F.map_point([0.0], 0.0)
        assert p == HPoint([0.0], 0.0)

    def test_dimension_checks(self):
        with pytest.raises(ValueError):
            pencil_embedding(ExactHyperbolicSpace(2), None, 3)
        with pytest.raises(ValueError):
            pencil_embedding(ExactHyperbolicSpace(3), None, 1)

    def test_mesh_pencil_requires_n_two(self):
        wp = warped_plane_target(-0.5, 0.5, 0.3, 0.1)
        with pytest.raises(ValueError):
            pencil_embedding(wp, None, 3)

    def test_leaf_parameter_out_of_range_rejected(self):
        wp = warped_plane_target(-0.5, 0.5, 0.3, 0.1)
        F = pencil_embedding(wp, None, 2)
        with pytest.raises(ValueError, match="leaf|box"):
            F.map_point([5.0], 0.0)
        wc = warped_cover_target(staircase_surface(), 1, -0.5, 0.5, 0.1,
                                 leaf_range=0.4)
        G = pencil_embedding(wc, None, 2)
        with pytest.raises(ValueError, match="leaf"):
            G.map_point([2.0], 0.0)

    def test_vertical_image_is_unit_speed_column(self):
        # mesh flow lines are vertical columns: params equal height gaps
        # exactly, and columns are genuine graph geodesics
        wp = warped_plane_target(-1.0, 2.0, 0.5, 0.1, x2_max=0.2)
        F = pencil_embedding(wp, None, 2)
        geo = F.vertical_image([0.2], np.array([-0.5, 1.5]))
        assert np.allclose(np.diff(geo.params), wp.resolution)
        d = wp.distance(int(geo.vertex_ids[0]), int(geo.vertex_ids[-1]))
        assert d == pytest.approx(geo.params[-1], rel=1e-12)

    def test_forward_asymptotic_columns(self):
        # image separation at fixed height decays as the height grows
        wp = warped_plane_target(-1.0, 4.0, 0.5, 0.1, x2_max=0.2)
        F = pencil_embedding(wp, None, 2)
        seps = []
        for t in (0.0, 1.0, 2.0, 3.0):
            a = F.map_point([-0.3], t)
            b = F.map_point([0.3], t)
            seps.append(wp.distance(a, b))
        assert seps[-1] < seps[0]
        assert seps[-1] < 0.1

    def test_constant_embedding_collapses(self):
        F = constant_embedding(ExactHyperbolicSpace(2), HPoint([0.0], 0.0))
        assert F.map_point([1.0], 5.0) == F.map_point([-2.0], -3.0)
        geo = F.vertical_image([1.0], np.array([0.0, 1.0, 2.0]))
        assert F.target.distance(
            F.map_point([0.0], 0.0), F.map_point([9.0], 9.0)
        ) == 0.0
