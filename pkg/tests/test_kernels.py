import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causalid.dynamics import Trajectory, TrajectoryBatch
from causalid.kernels import KernelConfig, embed, gaussian_kernel, mmd2_unbiased


def naive_mmd2(X, Y, ell=1.0):
    """Independent double-loop oracle."""
    m = len(X)

    def k(a, b):
        return math.exp(-sum((p - q) ** 2 for p, q in zip(a, b)) / (2 * ell * ell))

    s = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                s += k(X[i], X[j]) + k(Y[i], Y[j]) - k(X[i], Y[j]) - k(X[j], Y[i])
    return s / (m * (m - 1))


@st.composite
def sample_pair(draw, max_m=6, max_d=8):
    m = draw(st.integers(2, max_m))
    d = draw(st.integers(1, max_d))
    el = st.floats(-3, 3, allow_nan=False)
    return draw(arrays(float, (m, d), elements=el)), draw(arrays(float, (m, d), elements=el))


def test_kernel_values():
    assert gaussian_kernel([1.0, 2.0], [1.0, 2.0]) == 1.0
    assert gaussian_kernel([0.0], [1.0]) == pytest.approx(0.6065306597126334, abs=1e-15)
    assert gaussian_kernel([0.0], [2.0], KernelConfig(2.0)) == pytest.approx(math.exp(-0.5))
    with pytest.raises(ValueError):
        gaussian_kernel([0.0], [1.0, 2.0])


@given(arrays(float, 4, elements=st.floats(-5, 5)), arrays(float, 4, elements=st.floats(-5, 5)))
def test_kernel_symmetric_and_bounded(a, b):
    v = gaussian_kernel(a, b)
    assert v == gaussian_kernel(b, a)
    assert 0 <= v <= 1


def test_lengthscale_validated():
    for bad in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            KernelConfig(bad)


@settings(max_examples=100, deadline=None)
@given(sample_pair(), st.sampled_from([0.5, 1.0, 2.0]))
def test_matches_naive_oracle(pair, ell):
    X, Y = pair
    assert mmd2_unbiased(X, Y, KernelConfig(ell)) == pytest.approx(naive_mmd2(X.tolist(), Y.tolist(), ell), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(sample_pair())
def test_identical_sets_give_exact_zero(pair):
    X, _ = pair
    assert mmd2_unbiased(X, X.copy()) == 0.0


@settings(max_examples=50, deadline=None)
@given(sample_pair(), st.randoms(use_true_random=False))
def test_joint_permutation_invariance(pair, rnd):
    X, Y = pair
    p = list(range(len(X)))
    rnd.shuffle(p)
    assert mmd2_unbiased(X[p], Y[p]) == pytest.approx(mmd2_unbiased(X, Y), abs=1e-12)


def test_cross_terms_depend_on_pairing():
    # the i != j cross sum drops the paired terms k(x_i, y_i), so reordering one set alone can matter
    X = np.array([[0.0], [1.0]])
    assert mmd2_unbiased(X, X) == 0.0
    assert mmd2_unbiased(X, X[::-1]) == pytest.approx(2 * (math.exp(-0.5) - 1), abs=1e-15)


def test_three_sample_fixture():
    rng = np.random.default_rng(12)
    X, Y = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    assert mmd2_unbiased(X, Y) == pytest.approx(naive_mmd2(X.tolist(), Y.tolist()), abs=1e-12)


def test_far_apart_point_masses_give_two():
    X = np.zeros((10, 4))
    Y = np.full((10, 4), 50.0)
    assert mmd2_unbiased(X, Y) == pytest.approx(2.0, abs=1e-15)


def test_batched_leading_axes():
    rng = np.random.default_rng(1)
    X, Y = rng.normal(size=(2, 3, 5, 4)), rng.normal(size=(2, 3, 5, 4))
    out = mmd2_unbiased(X, Y)
    assert out.shape == (2, 3)
    assert out[1, 2] == pytest.approx(mmd2_unbiased(X[1, 2], Y[1, 2]), abs=1e-15)


def test_negative_values_not_clamped():
    rng = np.random.default_rng(3)
    vals = [mmd2_unbiased(rng.normal(size=(5, 2)), rng.normal(size=(5, 2))) for _ in range(50)]
    assert min(vals) < 0


def test_unbiased_under_null():
    rng = np.random.default_rng(2024)
    vals = np.array([mmd2_unbiased(rng.normal(size=(8, 3)), rng.normal(size=(8, 3))) for _ in range(600)])
    assert abs(vals.mean()) < 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_input_validation():
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        mmd2_unbiased(np.zeros((3, 3)), np.zeros((4, 3)))
    with pytest.raises(ValueError):
        mmd2_unbiased(np.full((3, 1), np.nan), np.zeros((3, 1)))


class TestEmbed:
    def _batch(self, runs, T=100):
        rng = np.random.default_rng(0)
        return TrajectoryBatch(tuple(
            Trajectory(rng.normal(size=(T + 1, 2)), np.zeros((T, 1))) for _ in range(runs)
        ))

    def test_shape(self):
        assert embed(self._batch(10), 1).shape == (10, 101)

    def test_constant_run_subtracted_is_zero(self):
        b = TrajectoryBatch((Trajectory(np.full((3, 1), 4.2), np.zeros((2, 1))),) * 2)
        np.testing.assert_array_equal(embed(b, 0, subtract_initial=True), np.zeros((2, 3)))

    def test_subtracts_each_runs_own_start(self):
        b = self._batch(4, 5)
        e = embed(b, 0, True)
        np.testing.assert_allclose(e, b.states()[..., 0] - b.states()[:, :1, 0])
        assert not e[:, 0].any()

    def test_index_checked(self):
        with pytest.raises(IndexError):
            embed(self._batch(2, 3), 2)
