import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snails.errors import InvalidParameterError
from snails.neighbors import (NeighborIndex, brute_force_cluster, build_index, gilbert_cluster,
                              percolation_scan)
from snails.rng import Box, sample_poisson_points

from oracles import bfs_cluster, gap_cluster_mean, geometric_cluster_mean, linear_scan


def test_empty_index():
    idx = build_index([], 2, 1.0)
    assert len(idx) == 0
    assert idx.query([0.0, 0.0]).size == 0


def test_hand_checked_query():
    idx = build_index([(0, 0.0), (1, 0.5), (2, 2.0)], 1, 1.0)
    assert idx.query([0.0]).tolist() == [0, 1]


def test_tie_at_radius_is_adjacent():
    idx = build_index([(0, 0.0), (1, 1.0)], 1, 1.0)
    assert idx.query([0.0]).tolist() == [0, 1]
    idx2 = build_index([(0, (0.0, 0.0)), (1, (0.6, 0.8))], 2, 1.0)
    assert idx2.query([0.0, 0.0]).tolist() == [0, 1]


def test_duplicate_ids_rejected():
    with pytest.raises(InvalidParameterError):
        build_index([(0, 0.0), (0, 1.0)], 1, 1.0)


def test_bad_radius_rejected():
    with pytest.raises(InvalidParameterError):
        NeighborIndex([0], [[0.0]], 0.0)


def test_grid_queries_match_linear_scan():
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 100, (1000, 2))
    idx = NeighborIndex(np.arange(1000), pts, 1.0, 2)
    for q in rng.uniform(-1, 101, (1000, 2)):
        assert set(idx.query(q).tolist()) == linear_scan(pts, q, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 80), st.floats(0.2, 3.0), st.integers(0, 2**32 - 1),
       st.floats(-50, 50))
def test_query_matches_scan_and_translation_invariant(d, n, radius, seed, shift):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-5, 5, (n, d))
    q = rng.uniform(-6, 6, d)
    idx = NeighborIndex(np.arange(n), pts, radius, d)
    got = set(idx.query(q).tolist())
    assert got == linear_scan(pts, q, radius)
    moved = NeighborIndex(np.arange(n), pts + shift, radius, d)
    # translation can move points across the tie by one ulp; compare away from ties
    dist = np.sqrt(((pts - q) ** 2).sum(axis=1)) if n else np.zeros(0)
    clear = set(np.flatnonzero(np.abs(dist - radius) > 1e-9).tolist())
    assert set(moved.query(q + shift).tolist()) & clear == got & clear


def test_cluster_hand_checked():
    idx = build_index([(0, 0.0), (1, 0.8), (2, 1.7), (3, 3.0)], 1, 1.0)
    assert gilbert_cluster(idx, 0).members == {0, 1, 2}
    assert gilbert_cluster(build_index([(5, 1.0)], 1, 1.0), 5).members == {5}


def test_cluster_unknown_seed():
    with pytest.raises(InvalidParameterError):
        gilbert_cluster(build_index([(0, 0.0)], 1, 1.0), 3)


def test_cluster_matches_bfs_oracle_on_poisson_configurations():
    rng = np.random.default_rng(2)
    region = Box((0,), (40,))
    for _ in range(1000):
        pts = sample_poisson_points(rng, 0.5, region)
        if len(pts) == 0:
            continue
        idx = NeighborIndex(np.arange(len(pts)), pts, 1.0, 1)
        seed = int(rng.integers(len(pts)))
        assert gilbert_cluster(idx, seed).members == bfs_cluster(pts, [seed], 1.0)


def test_brute_force_cluster_agrees_with_oracle():
    rng = np.random.default_rng(3)
    for _ in range(100):
        pts = rng.uniform(0, 10, (40, 2))
        assert brute_force_cluster(pts, [0], 1.2) == bfs_cluster(pts, [0], 1.2)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 2), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_cluster_symmetry(d, n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 8, (n, d))
    idx = NeighborIndex(np.arange(n), pts, 1.0, d)
    c0 = gilbert_cluster(idx, 0).members
    for j in range(n):
        cj = gilbert_cluster(idx, j).members
        assert (j in c0) == (cj == c0)
    # no outside point within radius of a member
    outside = [k for k in range(n) if k not in c0]
    for m in c0:
        assert not (set(idx.query(pts[m]).tolist()) & set(outside))


def test_cluster_boundary_flag():
    region = Box((0,), (10,))
    idx = build_index([(0, 5.0), (1, 5.5)], 1, 1.0)
    assert not gilbert_cluster(idx, 0, region).touches_boundary
    idx = build_index([(0, 5.0), (1, 5.9), (2, 6.8), (3, 7.7), (4, 8.6), (5, 9.5)], 1, 1.0)
    assert gilbert_cluster(idx, 0, region).touches_boundary


def test_percolation_scan_zero_intensity_singletons():
    pts = percolation_scan([0.0], 2, [10.0], 50, np.random.default_rng(0))
    assert pts[0].mean_cluster_size == 1.0 and pts[0].boundary_touch_freq == 0.0


def test_percolation_mean_matches_gap_oracle():
    # on the line the origin cluster extends while consecutive gaps are <= radius
    rng = np.random.default_rng(4)
    (pt,) = percolation_scan([1.0], 1, [60.0], 4000, rng)
    oracle = gap_cluster_mean(1.0, 1.0, 20000, np.random.default_rng(5))
    exact = geometric_cluster_mean(1.0, 1.0)
    assert abs(oracle - exact) < 0.1
    se = (pt.ci_high - pt.ci_low) / (2 * 1.96)
    assert abs(pt.mean_cluster_size - exact) < 4 * se


def test_percolation_touch_frequency_decays_with_box_in_1d():
    pts = percolation_scan([2.0], 1, [6.0, 12.0, 24.0, 50.0, 100.0, 200.0], 1000, np.random.default_rng(6))
    freqs = [p.boundary_touch_freq for p in pts]
    assert all(b <= a for a, b in zip(freqs, freqs[1:]))
    assert freqs[0] > freqs[1] > freqs[2] > freqs[3]
    assert freqs[-1] == 0.0
