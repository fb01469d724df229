import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from nlmarkov import rng


@given(st.integers(0, 2**64 - 1), st.integers(1, 4), st.integers(0, 10**6))
def test_prefix_stability(seed, stream, step):
    # draw i does not depend on how many draws were requested
    a = rng.normals(seed, stream, step, 37)
    b = rng.normals(seed, stream, step, 5)
    assert np.array_equal(a[:5], b)


def test_streams_and_steps_are_distinct():
    base = rng.uniforms(7, rng.BROWNIAN, 3, 64)
    assert not np.array_equal(base, rng.uniforms(7, rng.INITIAL, 3, 64))
    assert not np.array_equal(base, rng.uniforms(7, rng.BROWNIAN, 4, 64))
    assert not np.array_equal(base, rng.uniforms(8, rng.BROWNIAN, 3, 64))


def test_uniforms_open_interval_and_distribution():
    u = rng.uniforms(1, 1, 0, 200_000)
    assert u.min() > 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_normals_distribution():
    z = rng.normals(11, rng.BROWNIAN, 0, 200_000)
    assert np.all(np.isfinite(z))
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_bad_seed_rejected():
    import pytest

    with pytest.raises(ValueError):
        rng.uniforms(-1, 1, 0, 3)


def test_generator_reproducible():
    a = rng.generator(3, rng.BOOTSTRAP).integers(0, 1000, 20)
    b = rng.generator(3, rng.BOOTSTRAP).integers(0, 1000, 20)
    assert np.array_equal(a, b)
