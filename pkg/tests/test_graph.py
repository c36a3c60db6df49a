import math

import numpy as np
import pytest

from spcp import DataError
from spcp.graph import (
    adjacency_weight,
    alpha_upper_bound,
    build_vf_graph,
    precision_matrix,
    standard_vf54_layout,
    synthetic_garway_heath_angles,
)
from conftest import random_graph


def grid_layout(rows, cols):
    sid = 1
    out = []
    for r in range(rows):
        for c in range(cols):
            out.append((sid, r, c, False))
            sid += 1
    return out


def distinct_angles(layout):
    return {sid: (7.0 * sid) % 360 for sid, _, _, blind in layout if not blind}


class TestBuildGraph:
    def test_queen_2x2_has_six_edges(self):
        layout = grid_layout(2, 2)
        g = build_vf_graph(layout, distinct_angles(layout), dissim_scale=1.0)
        assert g.n_edges == 6  # 4 rook + 2 diagonal

    def test_vf54_reduces_to_52_sites(self):
        layout = standard_vf54_layout()
        assert len(layout) == 54
        g = build_vf_graph(layout, synthetic_garway_heath_angles(layout))
        assert g.m == 52
        assert len(g.blind_spot_ids) == 2

    def test_1x3_strip_has_no_corner_contact(self):
        layout = grid_layout(1, 3)
        g = build_vf_graph(layout, distinct_angles(layout), dissim_scale=1.0)
        assert g.n_edges == 2
        assert sorted(map(tuple, g.edges.tolist())) == [(0, 1), (1, 2)]

    def test_edges_unique_and_no_self_loops(self, rng):
        g = random_graph(rng, 12)
        assert np.all(g.edges[:, 0] < g.edges[:, 1])
        seen = set(map(tuple, g.edges.tolist()))
        assert len(seen) == g.n_edges

    def test_missing_angle_rejected(self):
        layout = grid_layout(2, 2)
        angles = distinct_angles(layout)
        del angles[3]
        with pytest.raises(DataError, match="missing angle"):
            build_vf_graph(layout, angles)

    def test_duplicate_site_id_rejected(self):
        layout = grid_layout(2, 2)
        layout.append((1, 5, 5, False))
        with pytest.raises(DataError, match="duplicate site id"):
            build_vf_graph(layout, distinct_angles(layout))

    def test_all_blind_rejected(self):
        layout = [(1, 0, 0, True), (2, 0, 1, True)]
        with pytest.raises(DataError, match="empty graph"):
            build_vf_graph(layout, {})

    def test_angle_range_enforced(self):
        layout = grid_layout(1, 2)
        with pytest.raises(DataError, match="outside"):
            build_vf_graph(layout, {1: 10.0, 2: 360.0})

    def test_dissim_rescaling(self):
        layout = grid_layout(1, 2)
        g = build_vf_graph(layout, {1: 100.0, 2: 250.0}, dissim_scale=100.0)
        np.testing.assert_allclose(g.dissim, [1.0, 2.5])

    def test_json_round_trippable(self, rng):
        import json

        g = random_graph(rng, 8)
        doc = json.loads(g.to_json())
        assert doc["m"] == 8
        assert len(doc["edges"]) == g.n_edges


class TestAdjacencyWeight:
    def test_zero_alpha_gives_one(self):
        assert adjacency_weight(0.0, 7.3) == 1.0

    def test_identical_covariates_give_one(self):
        assert adjacency_weight(3.7, 0.0) == 1.0

    def test_upper_bound_alpha_gives_half_weight(self, rng):
        g = random_graph(rng, 10)
        b = alpha_upper_bound(g)
        zmin = g.edge_dissim().min()
        assert adjacency_weight(b, zmin) == pytest.approx(0.5, rel=1e-12)

    def test_monotone_in_alpha_and_z(self):
        alphas = np.linspace(0, 4, 17)
        w = adjacency_weight(alphas, 0.8)
        assert np.all(np.diff(w) < 0)
        zs = np.linspace(0, 5, 17)
        w = adjacency_weight(0.7, zs)
        assert np.all(np.diff(w) < 0)

    def test_negative_inputs_rejected(self):
        with pytest.raises(DataError):
            adjacency_weight(-0.1, 1.0)
        with pytest.raises(DataError):
            adjacency_weight(0.1, -1.0)


class TestAlphaUpperBound:
    def test_direct_formula(self):
        layout = grid_layout(1, 2)
        g = build_vf_graph(layout, {1: 10.0, 2: 11.0}, dissim_scale=1.0)
        assert alpha_upper_bound(g) == pytest.approx(math.log(2), rel=1e-12)
        g = build_vf_graph(layout, {1: 10.0, 2: 10.5}, dissim_scale=1.0)
        assert alpha_upper_bound(g) == pytest.approx(2 * math.log(2), rel=1e-12)

    def test_degenerate_dissimilarity_rejected(self):
        layout = grid_layout(1, 3)
        with pytest.raises(DataError, match="degenerate dissimilarity"):
            alpha_upper_bound(build_vf_graph(layout, {1: 5.0, 2: 5.0, 3: 5.0}))


class TestPrecisionMatrix:
    def test_two_site_hand_computation(self):
        layout = grid_layout(1, 2)
        g = build_vf_graph(layout, {1: 5.0, 2: 5.0})  # z_ij = 0 -> weight 1
        Q = precision_matrix(g, 0.0, 0.99).Q
        np.testing.assert_allclose(Q, [[1.0, -0.99], [-0.99, 1.0]], atol=1e-15)

    def test_large_alpha_kills_offdiagonals(self, rng):
        g = random_graph(rng, 9)
        Q = precision_matrix(g, 1e6, 0.95).Q
        off = Q - np.diag(np.diag(Q))
        assert np.abs(off).max() < 1e-12
        np.testing.assert_allclose(np.diag(Q), 0.05, atol=1e-12)

    def test_path_graph_positive_definite(self):
        layout = grid_layout(1, 3)
        g = build_vf_graph(layout, {1: 10.0, 2: 40.0, 3: 80.0}, dissim_scale=1.0)
        Q = precision_matrix(g, 0.1, 0.99).Q
        assert np.linalg.eigvalsh(Q).min() > 0

    def test_rho_bounds_enforced(self, rng):
        g = random_graph(rng, 5)
        for rho in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(DataError):
                precision_matrix(g, 0.1, rho)

    def test_symmetric_pd_property_random_graphs(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            m = int(rng.integers(2, 21))
            g = random_graph(rng, m)
            alpha = float(rng.uniform(0, alpha_upper_bound(g)))
            rho = float(rng.uniform(0.01, 0.999))
            Q = precision_matrix(g, alpha, rho).Q
            assert np.abs(Q - Q.T).max() < 1e-12
            assert np.linalg.eigvalsh(Q).min() > 0

    def test_laplacian_row_identity(self, rng):
        g = random_graph(rng, 14)
        rho = 0.99
        Q = precision_matrix(g, 0.2, rho).Q
        lhs = np.diag(Q) - (1 - rho)
        rhs = -(Q.sum(axis=1) - np.diag(Q))
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
