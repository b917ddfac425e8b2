import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snails.errors import InvalidParameterError
from snails.rng import (Box, RngStream, bridge_crossing_probability, keyed_exponential, keyed_uniform, mix64,
                        sample_exponential, sample_gaussian_increment, sample_poisson_points)

from oracles import bridge_oracle


def test_mix64_known_value():
    # SplitMix64 output for state 0 after one increment, from the reference generator
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(0, 2**40), st.integers(0, 2**40))
def test_keyed_uniform_in_open_unit_interval(key, a, b, c):
    u = keyed_uniform(key, a, b, c)
    assert 0.0 < u < 1.0
    assert u == keyed_uniform(key, a, b, c)


def test_keyed_uniform_distribution():
    u = np.array([keyed_uniform(12345, k, 7, 3) for k in range(20000)])
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(u))
    counts = np.histogram(u, bins=10, range=(0, 1))[0]
    chi2 = ((counts - 2000) ** 2 / 2000).sum()
    assert chi2 < 30  # 9 dof, p ~ 4e-4


def test_keyed_uniform_addresses_differ():
    vals = {keyed_uniform(1, a, b, c) for a in range(5) for b in range(5) for c in range(5)}
    assert len(vals) == 125


def test_stream_determinism_and_independence():
    a = RngStream(42, 3).motion.standard_normal(5)
    b = RngStream(42, 3).motion.standard_normal(5)
    c = RngStream(42, 4).motion.standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    s = RngStream(42, 3)
    assert s.contact_key == RngStream(42, 3).contact_key != s.clock_key
    assert s.spawn(4).motion.standard_normal(5).tolist() == c.tolist()


def test_stream_substreams_independent_of_use_order():
    s1, s2 = RngStream(9, 1), RngStream(9, 1)
    s1.init.random(100)
    np.testing.assert_array_equal(s1.motion.standard_normal(3), s2.motion.standard_normal(3))


def test_stream_rejects_bad_seed():
    with pytest.raises(InvalidParameterError):
        RngStream(-1)


def test_independent_streams_uncorrelated():
    x = np.array([RngStream(5, k).motion.standard_normal() for k in range(4000)])
    y = np.array([RngStream(5, k + 4000).motion.standard_normal() for k in range(4000)])
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(4000)


def test_box_validation():
    assert Box.cube(2, 3).volume == 64
    with pytest.raises(InvalidParameterError):
        Box((0,), (0,))
    with pytest.raises(InvalidParameterError):
        Box((0, 0), (1,))
    assert Box.cube(1).contains([0.5]) and not Box.cube(1).contains([0.5], margin=0.6)


def test_poisson_zero_intensity():
    assert sample_poisson_points(RngStream(1), 0.0, Box((0,), (5,))).shape == (0, 1)


def test_poisson_rejects_bad_intensity():
    with pytest.raises(InvalidParameterError):
        sample_poisson_points(RngStream(1), math.inf, Box((0,), (5,)))
    with pytest.raises(InvalidParameterError):
        sample_poisson_points(RngStream(1), -1, Box((0,), (5,)))


def test_poisson_mean_equals_variance_small_region():
    gen = np.random.default_rng(3)
    counts = np.array([len(sample_poisson_points(gen, 2.0, Box((0,), (5,)))) for _ in range(20000)])
    se = counts.std() / math.sqrt(len(counts))
    assert abs(counts.mean() - 10) < 4 * se
    assert abs(counts.var(ddof=1) - 10) < 4 * 10 * math.sqrt(2 / len(counts)) + 0.5


def test_poisson_mean_large_region():
    gen = np.random.default_rng(4)
    counts = np.array([len(sample_poisson_points(gen, 1.0, Box((-50,), (50,)))) for _ in range(10000)])
    assert abs(counts.mean() - 100) < 3 * counts.std() / 100
    # mean = variance signature
    x = counts.astype(float)
    m4 = np.mean((x - x.mean()) ** 4)
    vse = math.sqrt((m4 - x.var() ** 2) / len(x))
    assert abs(x.var(ddof=1) - x.mean()) < 4 * vse


def test_poisson_positions_uniform():
    pts = sample_poisson_points(np.random.default_rng(5), 50.0, Box((0, 10), (2, 11)))
    assert pts.shape[1] == 2
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] <= 2) & (pts[:, 1] >= 10) & (pts[:, 1] <= 11))
    assert abs(pts[:, 0].mean() - 1) < 4 * math.sqrt(1 / 3 / len(pts))


def test_poisson_deterministic_per_stream():
    a = sample_poisson_points(RngStream(8, 1), 3.0, Box.cube(5, 2))
    b = sample_poisson_points(RngStream(8, 1), 3.0, Box.cube(5, 2))
    np.testing.assert_array_equal(a, b)


def test_gaussian_increment_variance():
    gen = np.random.default_rng(6)
    x = np.array([sample_gaussian_increment(gen, 1.0, 1.0, 1)[0] for _ in range(100000)])
    assert abs(x.var() - 1) < 0.05


def test_gaussian_increment_scaled_2d():
    gen = np.random.default_rng(7)
    x = np.array([sample_gaussian_increment(gen, 0.25, 4.0, 2) for _ in range(20000)])
    assert x.shape == (20000, 2)
    np.testing.assert_allclose(x.var(axis=0), [1, 1], rtol=0.05)
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.03


def test_gaussian_increment_small_dt_scale():
    gen = np.random.default_rng(8)
    x = np.array([sample_gaussian_increment(gen, 1e-8, 1.0, 1)[0] for _ in range(2000)])
    assert 0.5e-4 < np.sqrt(np.mean(x**2)) < 2e-4


@pytest.mark.parametrize("dt", [0.0, -1.0])
def test_gaussian_increment_rejects_dt(dt):
    with pytest.raises(InvalidParameterError):
        sample_gaussian_increment(np.random.default_rng(0), dt, 1.0, 1)


@pytest.mark.parametrize("rate", [1.0, 4.0])
def test_exponential_mean(rate):
    gen = np.random.default_rng(9)
    x = np.array([sample_exponential(gen, rate) for _ in range(100000)])
    assert abs(x.mean() - 1 / rate) < 3 * (1 / rate) / math.sqrt(len(x))


def test_exponential_tail():
    gen = np.random.default_rng(10)
    x = np.array([sample_exponential(gen, 0.5) for _ in range(100000)])
    p = np.mean(x > 2)
    assert abs(p - math.exp(-1)) < 4 * math.sqrt(p * (1 - p) / len(x))


@pytest.mark.parametrize("rate", [0.0, -2.0, math.inf])
def test_exponential_rejects_rate(rate):
    with pytest.raises(InvalidParameterError):
        sample_exponential(np.random.default_rng(0), rate)


def test_keyed_exponential_mean():
    x = np.array([keyed_exponential(77, j, 2.0) for j in range(50000)])
    assert abs(x.mean() - 0.5) < 4 * 0.5 / math.sqrt(len(x))


def test_bridge_closed_form_values():
    assert bridge_crossing_probability(2, 2, 1, 0.1, 2) == pytest.approx(math.exp(-10), rel=1e-12)
    assert bridge_crossing_probability(1 + 1e-9, 1 + 1e-9, 1, 1, 2) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("x0,x1", [(1.0, 2.0), (0.5, 2.0), (2.0, 1.0)])
def test_bridge_rejects_endpoint_at_or_below_level(x0, x1):
    with pytest.raises(InvalidParameterError):
        bridge_crossing_probability(x0, x1, 1.0, 0.1, 1.0)


@given(st.floats(1e-6, 5), st.floats(1e-6, 5), st.floats(1e-4, 2), st.floats(0.1, 4))
def test_bridge_probability_bounds_and_monotonicity(g0, g1, dt, diffusion):
    p = bridge_crossing_probability(1 + g0, 1 + g1, 1.0, dt, diffusion)
    assert 0.0 <= p <= 1.0
    assert bridge_crossing_probability(1 + 2 * g0, 1 + g1, 1.0, dt, diffusion) <= p
    assert bridge_crossing_probability(1 + g0, 1 + g1, 1.0, 2 * dt, diffusion) >= p


def test_bridge_matches_fine_grid_oracle():
    est, se = bridge_oracle(1.2, 1.3, 1.0, 0.05, 2.0, 100000, 256, np.random.default_rng(11))
    closed = bridge_crossing_probability(1.2, 1.3, 1.0, 0.05, 2.0)
    assert abs(closed - est) < max(0.02 * est, 4 * se)
