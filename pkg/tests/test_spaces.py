"""Tests for target spaces: exact hyperbolic, meshes, stars, JSON round trip."""

import json
import math

import numpy as np
import pytest

from hypencil.hyperbolic import HPoint, dist_hyp
from hypencil.spaces import (
    FLAT_STEPS_2D,
    PLANE_STEPS_2D,
    ExactHyperbolicSpace,
    MeshSpace,
    MeshUnreachableError,
    StarSpace,
    exact_hyperbolic_target,
    flat_weight,
    lattice_mesh,
    mesh_distance,
    mesh_from_json,
    mesh_geodesic,
    mesh_to_json,
    warped_weight,
)


def tiny_warped_mesh(h=0.1, x_max=1.0, t_min=-1.0, t_max=1.0):
    n = int(round(2 * x_max / h))
    nk = int(round((t_max - t_min) / h))
    return lattice_mesh(
        origins=np.array([-x_max, t_min]),
        counts=(n + 1, nk + 1),
        h=h,
        steps=PLANE_STEPS_2D,
        weight=warped_weight,
    )


class TestExactTarget:
    def test_dimension_validation(self):
        with pytest.raises(ValueError):
            exact_hyperbolic_target(1)

    def test_vertical_distance(self):
        space = exact_hyperbolic_target(2)
        assert space.distance(HPoint(0.0, 0.0), HPoint(0.0, 3.0)) == 3.0

    def test_equal_height_closed_form_in_h3(self):
        space = exact_hyperbolic_target(3)
        a = HPoint([0.0, 0.0], 0.0)
        b = HPoint([4.0, 0.0], 0.0)
        assert space.distance(a, b) == pytest.approx(2 * math.asinh(2.0), rel=1e-12)

    def test_geodesic_endpoints_reproduced(self):
        space = exact_hyperbolic_target(3)
        a = HPoint([0.5, 1.0], -0.5)
        b = HPoint([2.0, -1.0], 1.5)
        geo = space.geodesic(a, b, 17)
        assert np.allclose(geo.points[0], a.coords())
        assert np.allclose(geo.points[-1], b.coords())
        assert geo.length == pytest.approx(space.distance(a, b), rel=1e-10)

    def test_metric_axioms_random_triples(self):
        space = exact_hyperbolic_target(3)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            pts = [HPoint(rng.uniform(-3, 3, 2), rng.uniform(-2, 2)) for _ in range(3)]
            dab = space.distance(pts[0], pts[1])
            dba = space.distance(pts[1], pts[0])
            dbc = space.distance(pts[1], pts[2])
            dac = space.distance(pts[0], pts[2])
            assert dab == dba
            assert dac <= dab + dbc + 1e-12

    def test_distances_from_matches_scalar(self):
        space = exact_hyperbolic_target(2)
        a = HPoint(0.0, 0.0)
        targets = [HPoint(1.0, 0.5), HPoint(-2.0, 1.0)]
        batch = space.distances_from(a, targets)
        assert batch[0] == pytest.approx(space.distance(a, targets[0]))
        assert batch[1] == pytest.approx(space.distance(a, targets[1]))


class TestMeshSpace:
    def test_identity_and_adjacent(self):
        mesh = tiny_warped_mesh()
        assert mesh_distance(mesh, 5, 5) == 0.0
        # two height-adjacent vertices: pure vertical edge weight h
        nk = mesh.lattice_shape[1]
        assert mesh_distance(mesh, 0, 1) == pytest.approx(mesh.resolution, rel=1e-12)

    def test_vertical_distance_on_warped_mesh(self):
        # ((0), t_min) to ((0), t_max): the column is an exact geodesic
        mesh = tiny_warped_mesh(h=0.1, x_max=0.5, t_min=0.0, t_max=2.0)
        n1, nk = mesh.lattice_shape
        i0 = n1 // 2
        a = i0 * nk + 0
        b = i0 * nk + (nk - 1)
        assert mesh_distance(mesh, a, b) == pytest.approx(2.0, rel=1e-12)

    def test_symmetry_and_triangle_inequality(self):
        mesh = tiny_warped_mesh()
        rng = np.random.default_rng(1)
        for _ in range(60):
            a, b, c = rng.integers(0, mesh.num_vertices, 3)
            dab = mesh.distance(a, b)
            dba = mesh.distance(b, a)
            assert dab == pytest.approx(dba, abs=1e-12)
            assert mesh.distance(a, c) <= dab + mesh.distance(b, c) + 1e-12

    def test_unreachable_raises(self):
        mesh = MeshSpace(
            vertices=np.array([[0.0], [1.0], [5.0], [6.0]]),
            edge_src=np.array([0, 2]),
            edge_dst=np.array([1, 3]),
            edge_weight=np.array([1.0, 1.0]),
            resolution=1.0,
        )
        assert not mesh.is_connected()
        with pytest.raises(MeshUnreachableError):
            mesh_distance(mesh, 0, 3)

    def test_refinement_monotonicity(self):
        # a fixed diagonal pair: distances do not increase as h halves
        vals = []
        pair = ((-0.5, -0.5), (0.5, 0.5))
        for h in (0.2, 0.1, 0.05):
            mesh = tiny_warped_mesh(h=h, x_max=1.0, t_min=-1.0, t_max=1.0)
            a = mesh.nearest_vertex(pair[0])
            b = mesh.nearest_vertex(pair[1])
            vals.append(mesh_distance(mesh, a, b))
        assert vals[1] <= vals[0] + 1e-9
        assert vals[2] <= vals[1] + 1e-9

    def test_mesh_accuracy_vs_exact(self):
        # coarse sanity bound; the tight 2% check lives in the acceptance suite
        mesh = tiny_warped_mesh(h=0.05, x_max=1.0, t_min=-0.5, t_max=1.5)
        n1, nk = mesh.lattice_shape
        a = mesh.nearest_vertex((-0.6, 0.2))
        b = mesh.nearest_vertex((0.6, 0.4))
        pa = HPoint(mesh.vertices[a][0], mesh.vertices[a][1])
        pb = HPoint(mesh.vertices[b][0], mesh.vertices[b][1])
        exact = dist_hyp(pa, pb)
        got = mesh_distance(mesh, a, b)
        assert abs(got - exact) / exact < 0.02


class TestMeshGeodesic:
    def test_adjacent_two_samples(self):
        mesh = tiny_warped_mesh()
        geo = mesh_geodesic(mesh, 0, 1, 2)
        assert len(geo) == 2
        assert np.allclose(geo.points[0], mesh.vertices[0])
        assert np.allclose(geo.points[-1], mesh.vertices[1])

    def test_degenerate_single_point(self):
        mesh = tiny_warped_mesh()
        geo = mesh_geodesic(mesh, 7, 7, 5)
        assert len(geo) == 1
        assert geo.params[0] == 0.0

    def test_vertical_pair_monotone_heights(self):
        mesh = tiny_warped_mesh(h=0.1, x_max=0.5, t_min=0.0, t_max=2.0)
        n1, nk = mesh.lattice_shape
        i0 = n1 // 2
        geo = mesh_geodesic(mesh, i0 * nk, i0 * nk + nk - 1, 9)
        heights = geo.points[:, -1]
        assert np.all(np.diff(heights) >= -mesh.resolution)

    def test_params_cumulative(self):
        mesh = tiny_warped_mesh()
        geo = mesh_geodesic(mesh, 0, mesh.num_vertices - 1, 12)
        assert geo.params[0] == 0.0
        assert np.all(np.diff(geo.params) > 0)
        assert geo.length == pytest.approx(
            mesh_distance(mesh, 0, mesh.num_vertices - 1), rel=1e-9
        )


class TestJsonRoundTrip:
    def test_round_trip_preserves_distances(self):
        mesh = tiny_warped_mesh(h=0.2)
        text = mesh_to_json(mesh)
        doc = json.loads(text)
        assert set(doc) == {"vertices", "edges", "resolution"}
        back = mesh_from_json(text)
        assert back.num_vertices == mesh.num_vertices
        assert back.resolution == mesh.resolution
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.integers(0, mesh.num_vertices, 2)
            assert back.distance(a, b) == pytest.approx(mesh.distance(a, b), rel=1e-12)


class TestStarSpace:
    def test_path_metric(self):
        star = StarSpace(4, 8.0)
        assert star.distance((0, 3.0), (0, 5.0)) == 2.0
        assert star.distance((0, 3.0), (2, 5.0)) == 8.0

    def test_geodesic_passes_hub(self):
        star = StarSpace(3, 8.0)
        geo = star.geodesic((0, 2.0), (1, 2.0), 5)
        assert geo.length == 4.0
        mid = geo.points[2]
        assert mid[1] == pytest.approx(0.0)


class TestLatticeBuilder:
    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            lattice_mesh(np.array([0.0, 0.0]), (1, 5), 0.1, FLAT_STEPS_2D, flat_weight)
        with pytest.raises(ValueError):
            lattice_mesh(np.array([0.0, 0.0]), (5, 5), -0.1, FLAT_STEPS_2D, flat_weight)

    def test_edge_weights_match_metric_at_midpoint(self):
        mesh = tiny_warped_mesh(h=0.5, x_max=1.0, t_min=0.0, t_max=1.0)
        # pick a horizontal edge and check its weight against the warp factor
        horiz = np.flatnonzero(
            (mesh.vertices[mesh.edge_src][:, 1] == mesh.vertices[mesh.edge_dst][:, 1])
            & (np.abs(mesh.vertices[mesh.edge_src][:, 0]
                      - mesh.vertices[mesh.edge_dst][:, 0]) == 0.5)
        )
        e = horiz[0]
        t_mid = mesh.vertices[mesh.edge_src[e]][1]
        expected = math.exp(-t_mid) * 0.5
        assert mesh.edge_weight[e] == pytest.approx(expected, rel=1e-12)

    def test_connected(self):
        mesh = tiny_warped_mesh(h=0.25)
        assert mesh.is_connected()
