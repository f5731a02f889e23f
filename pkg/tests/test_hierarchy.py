"""Region merging, the level stack and geodesic set distances.

Verified behaviour:

- the visit-distribution overlap coefficient matches a dense evaluation,
  is symmetric, bounded by [0, 1] and 1 on identical rows
- one merge round joins each region with its best neighbor above the
  threshold, collapses intent chains with union-find, never merges
  across a strictly-not-greater threshold, and numbers new regions by
  first appearance
- the built hierarchy nests exactly, keeps region adjacency equal to
  the label adjacency of the pixel grid, shrinks strictly until a
  stall or a single region, and carries row-stochastic visit matrices
- geodesic set distance matches a Floyd-Warshall oracle and is
  symmetric
- the on-disk hierarchy round-trips and replays visit matrices
"""

import numpy as np
import pytest
import scipy.sparse

from hipix import DataError
from hipix import graph as gr
from hipix import hierarchy as hi
from hipix import walks as wk
from hipix.image import build_image_adjacency

from conftest import build_graph, build_small_hierarchy, make_two_region_image


def dense_bc(p, q):
    return float(np.sqrt(p * q).sum())


def make_transition(dense):
    return wk.TransitionMatrix(raw=scipy.sparse.csr_matrix(np.asarray(dense)))


class TestOverlapCoefficient:
    def test_matches_dense_oracle(self):
        """Sparse overlap equals dense sum of sqrt products on random
        stochastic rows."""
        rng = np.random.default_rng(42)
        m = 30
        dense = rng.random((m, m)) * (rng.random((m, m)) < 0.3)
        dense[np.arange(m), np.arange(m)] += 0.1  # no empty rows
        T = make_transition(dense)
        S = T.stochastic().toarray()
        for _ in range(200):
            r, s = rng.integers(0, m, 2)
            np.testing.assert_allclose(
                hi.bhattacharyya(T, int(r), int(s)),
                dense_bc(S[r], S[s]),
                atol=1e-12,
            )

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(42)
        m = 25
        dense = rng.random((m, m)) * (rng.random((m, m)) < 0.4)
        dense[np.arange(m), np.arange(m)] += 0.1
        T = make_transition(dense)
        rows = rng.integers(0, m, 40)
        cols = rng.integers(0, m, 40)
        got = hi.bhattacharyya_pairs(T, rows, cols)
        expect = [hi.bhattacharyya(T, int(r), int(c)) for r, c in zip(rows, cols)]
        np.testing.assert_allclose(got, expect, atol=1e-12)

    def test_identical_rows_give_one(self):
        dense = np.array([[0.25, 0.25, 0.5], [0.25, 0.25, 0.5], [1.0, 0.0, 0.0]])
        T = make_transition(dense)
        np.testing.assert_allclose(hi.bhattacharyya(T, 0, 1), 1.0, atol=1e-12)

    def test_disjoint_rows_give_zero(self):
        dense = np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
        T = make_transition(dense)
        assert hi.bhattacharyya(T, 0, 1) == 0.0

    def test_symmetric_and_bounded(self):
        rng = np.random.default_rng(42)
        dense = rng.random((10, 10)) * (rng.random((10, 10)) < 0.5)
        dense[np.arange(10), np.arange(10)] += 0.1
        T = make_transition(dense)
        for _ in range(50):
            r, s = rng.integers(0, 10, 2)
            a = hi.bhattacharyya(T, int(r), int(s))
            b = hi.bhattacharyya(T, int(s), int(r))
            np.testing.assert_allclose(a, b, atol=1e-15)
            assert 0.0 <= a <= 1.0 + 1e-12


def level_from_labels(labels, width, height, connectivity=4):
    labels = np.asarray(labels, dtype=np.int64)
    edges = build_image_adjacency(height, width, connectivity)
    a, b = labels[edges[:, 0]], labels[edges[:, 1]]
    keep = a != b
    rag = np.unique(
        np.stack([np.minimum(a[keep], b[keep]), np.maximum(a[keep], b[keep])], axis=1),
        axis=0,
    )
    return hi.SuperpixelLevel(
        level=0,
        labels=labels,
        sizes=np.bincount(labels),
        rag=rag.astype(np.int64),
    )


class TestMergeRound:
    def test_mutual_best_pair_merges(self):
        """Two regions that point at each other merge into one group."""
        # 1x4 strip of regions 0..3; rows of T chosen so 0-1 and 2-3 pair up
        labels = np.arange(4)
        level = level_from_labels(labels, 4, 1)
        dense = np.array(
            [
                [0.5, 0.5, 0.0, 0.0],
                [0.5, 0.5, 0.0, 0.0],
                [0.0, 0.0, 0.5, 0.5],
                [0.0, 0.0, 0.5, 0.5],
            ]
        )
        merge_map = hi.boruvka_merge_level(level, make_transition(dense))
        np.testing.assert_array_equal(merge_map, [0, 0, 1, 1])

    def test_intent_chain_collapses(self):
        """0 wants 1, 1 wants 2: all three end in one group."""
        labels = np.arange(3)
        level = level_from_labels(labels, 3, 1)
        dense = np.array(
            [
                [0.6, 0.4, 0.0],
                [0.1, 0.5, 0.4],
                [0.0, 0.5, 0.5],
            ]
        )
        merge_map = hi.boruvka_merge_level(level, make_transition(dense))
        np.testing.assert_array_equal(merge_map, [0, 0, 0])

    def test_strictly_greater_threshold_required(self):
        """Overlap exactly at the threshold does not merge."""
        labels = np.arange(2)
        level = level_from_labels(labels, 2, 1)
        dense = np.array([[1.0, 0.0], [0.0, 1.0]])  # overlap 0 at threshold 0
        merge_map = hi.boruvka_merge_level(level, make_transition(dense))
        np.testing.assert_array_equal(merge_map, [0, 1])
        # raise the threshold above a positive pair and nothing merges
        dense = np.array([[0.8, 0.2], [0.2, 0.8]])
        T = make_transition(dense)
        b = hi.bhattacharyya(T, 0, 1)
        assert hi.boruvka_merge_level(level, T, bc_threshold=b + 1e-9).max() == 1
        assert hi.boruvka_merge_level(level, T, bc_threshold=b - 1e-9).max() == 0

    def test_only_region_neighbors_merge(self):
        """High overlap without region adjacency cannot merge."""
        # horizontal strip 0 | 1 | 2 where 0 and 2 are identical but apart
        labels = np.arange(3)
        level = level_from_labels(labels, 3, 1)
        dense = np.array(
            [
                [0.5, 0.0, 0.5],
                [0.0, 1.0, 0.0],
                [0.5, 0.0, 0.5],
            ]
        )
        merge_map = hi.boruvka_merge_level(level, make_transition(dense))
        # 0-2 are not adjacent; 0-1 and 1-2 overlaps are zero
        np.testing.assert_array_equal(merge_map, [0, 1, 2])

    def test_new_ids_follow_first_appearance(self):
        """Group numbering is by first old id in each group."""
        labels = np.arange(5)
        level = level_from_labels(labels, 5, 1)
        dense = np.eye(5) * 0.6 + 0.4 * np.eye(5)[:, ::-1]  # pairs (0,4), (1,3)
        merge_map = hi.boruvka_merge_level(level, make_transition(dense))
        # adjacency is a path, so 0-4 and 1-3 are not region neighbors
        np.testing.assert_array_equal(merge_map, np.arange(5))

    def test_best_neighbor_intent_on_random_fixtures(self):
        """Whenever a region has a neighbor with overlap above the
        threshold, it lands in the same group as its best neighbor."""
        rng = np.random.default_rng(42)
        for trial in range(10):
            w, h = 6, 5
            labels = rng.integers(0, 8, w * h)
            labels = np.unique(labels, return_inverse=True)[1]
            level = level_from_labels(labels, w, h)
            m = int(labels.max()) + 1
            dense = rng.random((m, m)) * (rng.random((m, m)) < 0.6)
            dense[np.arange(m), np.arange(m)] += 0.05
            T = make_transition(dense)
            merge_map = hi.boruvka_merge_level(level, T)
            S = T.stochastic().toarray()
            nbrs = {r: set() for r in range(m)}
            for a, b in level.rag:
                nbrs[int(a)].add(int(b))
                nbrs[int(b)].add(int(a))
            for r in range(m):
                cand = sorted(
                    ((-dense_bc(S[r], S[s]), s) for s in nbrs[r]),
                )
                if cand and -cand[0][0] > 0.0:
                    best = cand[0][1]
                    assert merge_map[r] == merge_map[best]

    def test_size_mismatch_rejected(self):
        level = level_from_labels(np.arange(3), 3, 1)
        with pytest.raises(DataError):
            hi.boruvka_merge_level(level, make_transition(np.eye(4)))


class TestHierarchyBuild:
    def test_level_zero_is_identity(self, region_hierarchy):
        h, _ = region_hierarchy
        np.testing.assert_array_equal(h.levels[0].labels, np.arange(100))
        np.testing.assert_array_equal(h.levels[0].sizes, np.ones(100))

    def test_sizes_are_label_counts(self, region_hierarchy):
        h, _ = region_hierarchy
        for lv in h.levels:
            np.testing.assert_array_equal(
                lv.sizes, np.bincount(lv.labels, minlength=lv.m)
            )
            assert int(lv.sizes.sum()) == 100
            assert lv.sizes.min() >= 1

    def test_levels_nest_exactly(self, region_hierarchy):
        """Pixel labels at level l+1 are the parent map applied to level
        l labels."""
        h, _ = region_hierarchy
        for l in range(h.n_levels - 1):
            parent = h.levels[l].parent
            assert parent is not None
            np.testing.assert_array_equal(
                h.levels[l + 1].labels, parent[h.levels[l].labels]
            )

    def test_strictly_shrinking(self, region_hierarchy):
        h, _ = region_hierarchy
        sizes = h.level_sizes()
        assert all(a > b for a, b in zip(sizes, sizes[1:]))

    def test_terminates_at_stall_or_singleton(self, region_hierarchy):
        h, _ = region_hierarchy
        assert h.levels[-1].m == 1 or h.stalled

    def test_rag_matches_label_adjacency(self, region_hierarchy):
        """Each level's region adjacency equals the distinct label pairs
        across pixel-grid edges."""
        h, _ = region_hierarchy
        edges = build_image_adjacency(10, 10, 4)
        for lv in h.levels:
            a, b = lv.labels[edges[:, 0]], lv.labels[edges[:, 1]]
            keep = a != b
            expect = np.unique(
                np.stack(
                    [np.minimum(a[keep], b[keep]), np.maximum(a[keep], b[keep])],
                    axis=1,
                ),
                axis=0,
            )
            np.testing.assert_array_equal(lv.rag, expect)

    def test_transitions_follow_levels(self, region_hierarchy):
        h, _ = region_hierarchy
        assert len(h.transitions) == h.n_levels
        for lv, T in zip(h.levels, h.transitions):
            assert T.size == lv.m
            sums = np.asarray(T.stochastic().sum(axis=1)).ravel()
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_regions_stay_connected(self, region_hierarchy):
        """Every region is one connected component of the pixel grid."""
        h, _ = region_hierarchy
        edges = build_image_adjacency(10, 10, 4)
        for lv in h.levels:
            same = lv.labels[edges[:, 0]] == lv.labels[edges[:, 1]]
            adj = scipy.sparse.csr_matrix(
                (
                    np.ones(int(same.sum()), dtype=np.int8),
                    (edges[same, 0], edges[same, 1]),
                ),
                shape=(100, 100),
            )
            ncomp, _ = scipy.sparse.csgraph.connected_components(adj, directed=False)
            assert ncomp == lv.m

    def test_children_of_inverts_parent(self, region_hierarchy):
        h, _ = region_hierarchy
        for l in range(1, h.n_levels):
            parent = h.levels[l - 1].parent
            for r in range(h.levels[l].m):
                kids = h.children_of(l, np.array([r]))
                np.testing.assert_array_equal(kids, np.flatnonzero(parent == r))

    def test_max_levels_cap(self, region_image):
        g = build_graph(region_image)
        T0 = wk.run_random_walks(g, walks=20, steps=6, seed=7)
        edges = build_image_adjacency(10, 10, 4)
        h = hi.build_hierarchy(10, 10, edges, T0, max_levels=2)
        assert h.n_levels <= 2


class TestGeodesicDistance:
    def test_matches_floyd_warshall(self):
        """Sampled geodesic Hausdorff equals a dense all-pairs oracle
        when no subsampling happens."""
        rng = np.random.default_rng(42)
        img = make_two_region_image(6, 6, 3, seed=1)
        g = build_graph(img)
        n = g.n
        dense = np.full((n, n), np.inf)
        np.fill_diagonal(dense, 0.0)
        for i in range(n):
            idx, d = g.row(i)
            for j, dij in zip(idx, d):
                dense[i, j] = min(dense[i, j], dij)
                dense[j, i] = min(dense[j, i], dij)
        for k in range(n):
            dense = np.minimum(dense, dense[:, [k]] + dense[[k], :])
        set_a = np.array([0, 1, 2, 7])
        set_b = np.array([30, 31, 35])
        cross = dense[np.ix_(set_a, set_b)]
        expect = max(cross.min(axis=1).max(), cross.min(axis=0).max())
        got = hi.geodesic_hausdorff(g, set_a, set_b, samples=100, seed=0)
        np.testing.assert_allclose(got, expect, rtol=1e-10)

    def test_symmetric(self):
        img = make_two_region_image(6, 6, 3, seed=2)
        g = build_graph(img)
        a = np.arange(0, 10)
        b = np.arange(20, 32)
        d_ab = hi.geodesic_hausdorff(g, a, b, samples=100, seed=0)
        d_ba = hi.geodesic_hausdorff(g, b, a, samples=100, seed=0)
        np.testing.assert_allclose(d_ab, d_ba, rtol=1e-12)

    def test_empty_set_rejected(self):
        img = make_two_region_image(6, 6, 3, seed=3)
        g = build_graph(img)
        with pytest.raises(DataError):
            hi.geodesic_hausdorff(g, np.array([]), np.array([1]))


class TestHierarchyIO:
    def test_round_trip_labels_and_sizes(self, tmp_path, region_hierarchy):
        h, _ = region_hierarchy
        hi.save_hierarchy(tmp_path / "h.bin", h)
        loaded = hi.load_hierarchy(tmp_path / "h.bin")
        assert loaded.n_levels == h.n_levels
        assert loaded.level_sizes() == h.level_sizes()
        assert loaded.stalled == h.stalled
        for a, b in zip(loaded.levels, h.levels):
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.sizes, b.sizes)
            if b.parent is None:
                assert a.parent is None
            else:
                np.testing.assert_array_equal(a.parent, b.parent)

    def test_replay_restores_transitions(self, tmp_path, region_hierarchy, region_image):
        """Visit matrices rebuilt from the pixel-level matrix match the
        ones produced during construction exactly."""
        h, g = region_hierarchy
        hi.save_hierarchy(tmp_path / "h.bin", h)
        wk.save_transition(tmp_path / "t0.bin", h.transitions[0])
        t0 = wk.load_transition(tmp_path / "t0.bin")
        edges = build_image_adjacency(10, 10, 4)
        loaded = hi.load_hierarchy(
            tmp_path / "h.bin", T0=t0, adjacency_edges=edges
        )
        assert len(loaded.transitions) == h.n_levels
        for a, b in zip(loaded.transitions, h.transitions):
            np.testing.assert_allclose(
                a.raw.toarray(), b.raw.toarray(), rtol=1e-6
            )
        for a, b in zip(loaded.levels, h.levels):
            np.testing.assert_array_equal(a.rag, b.rag)
