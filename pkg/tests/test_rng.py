import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from orlicz_lab.rng import SplitMix64

MASK = (1 << 64) - 1


def reference(seed, n):
    """Scalar SplitMix64 with Python integers."""
    out = []
    state = seed & MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def test_published_seed_zero_stream():
    vals = [int(v) for v in SplitMix64(0).next_u64(3)]
    assert vals == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


@given(st.integers(0, MASK), st.integers(1, 50))
def test_matches_scalar_reference(seed, n):
    assert [int(v) for v in SplitMix64(seed).next_u64(n)] == reference(seed, n)


@given(st.integers(0, MASK), st.integers(1, 20), st.integers(1, 20))
def test_chunking_invariant(seed, a, b):
    g = SplitMix64(seed)
    joined = np.concatenate([g.next_u64(a), g.next_u64(b)])
    np.testing.assert_array_equal(joined, SplitMix64(seed).next_u64(a + b))


def test_uniform_top_bits():
    u = SplitMix64(7).uniform(5)
    raw = reference(7, 5)
    np.testing.assert_array_equal(u, np.array([(z >> 11) * 2.0 ** -53 for z in raw]))
    assert np.all((0 <= u) & (u < 1))
    assert isinstance(SplitMix64(7).uniform(), float)


def test_uniform_range_and_moments():
    u = SplitMix64(1).uniform(20000, -2.0, 3.0)
    assert u.min() >= -2.0 and u.max() < 3.0
    assert u.mean() == pytest.approx(0.5, abs=0.05)


def test_normal_box_muller():
    g = SplitMix64(3)
    z = SplitMix64(3).normal(4)
    u = g.uniform(8).reshape(4, 2)
    np.testing.assert_allclose(z, np.sqrt(-2 * np.log1p(-u[:, 0])) * np.cos(2 * np.pi * u[:, 1]))
    big = SplitMix64(4).normal(40000)
    assert big.mean() == pytest.approx(0.0, abs=0.02)
    assert big.std() == pytest.approx(1.0, abs=0.02)


def test_integers():
    k = SplitMix64(5).integers(3, 9, 1000)
    assert k.min() >= 3 and k.max() <= 8 and len(np.unique(k)) == 6


def test_child_streams_differ_and_repeat():
    g1, g2 = SplitMix64(11), SplitMix64(11)
    c1, c2 = g1.child(), g2.child()
    np.testing.assert_array_equal(c1.next_u64(4), c2.next_u64(4))
    assert not np.array_equal(SplitMix64(11).child().next_u64(4), SplitMix64(11).next_u64(4))


def test_seed_wraps_to_u64():
    np.testing.assert_array_equal(SplitMix64(-1).next_u64(2), SplitMix64(MASK).next_u64(2))
