import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssda.numgrad import GradResult, NumericError, as_tensor, cosine, finite_diff_grad, sq_l2_dist
from ssda.objectives import ge2e_loss

from . import oracles


def test_as_tensor_rejects_non_finite():
    with pytest.raises(NumericError):
        as_tensor([1.0, float("nan")])
    assert as_tensor([1, 2, 3, 4], shape=(2, 2)).shape == (2, 2)


def test_cosine_basic():
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    a, b = (1.0, 2.0, 3.0), (4.0, 5.0, 6.0)
    # 32 / (sqrt(14) * sqrt(77))
    assert cosine(a, b) == pytest.approx(32 / math.sqrt(14 * 77), abs=1e-15)
    assert cosine(a, b) == pytest.approx(oracles.cos(a, b), abs=1e-15)


def test_cosine_zero_norm_raises():
    with pytest.raises(NumericError):
        cosine([0, 0], [1, 0])


def test_sq_l2_dist_basic(rng):
    assert sq_l2_dist([1.5, 2], [1.5, 2]) == 0.0
    assert sq_l2_dist([0, 0], [3, 4]) == 25.0
    a, b = rng.normal(size=16), rng.normal(size=16)
    naive = 0.0
    for x, y in zip(a, b):
        naive += (x - y) * (x - y)
    assert sq_l2_dist(a, b) == pytest.approx(naive, rel=1e-14)
    with pytest.raises(NumericError):
        sq_l2_dist([1, 2], [1, 2, 3])


vec = arrays(np.float64, 5, elements=st.floats(-10, 10, allow_nan=False)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(1e-2, 1e2), st.floats(1e-2, 1e2))
def test_cosine_symmetric_and_scale_invariant(a, b, alpha, beta):
    c = cosine(a, b)
    assert -1.0 <= c <= 1.0
    assert cosine(b, a) == pytest.approx(c, abs=1e-12)
    assert cosine(alpha * a, beta * b) == pytest.approx(c, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(vec, vec)
def test_sq_l2_dist_metric_properties(a, b):
    assert sq_l2_dist(a, a) == 0.0
    assert sq_l2_dist(a, b) == pytest.approx(sq_l2_dist(b, a), abs=1e-12)
    if np.max(np.abs(a - b)) > 1e-100:
        assert sq_l2_dist(a, b) > 0.0


def test_finite_diff_quadratic_and_constant():
    g = finite_diff_grad(lambda p: float(p["x"][0] ** 2), {"x": np.array([3.0])}, h=1e-4)
    assert g["x"][0] == pytest.approx(6.0, abs=1e-7)
    g = finite_diff_grad(lambda p: 7.0, {"a": np.ones((2, 3)), "b": np.zeros(4)})
    assert not g["a"].any() and not g["b"].any()


def test_finite_diff_rejects_bad_step_and_nonfinite():
    with pytest.raises(NumericError):
        finite_diff_grad(lambda p: 0.0, {"x": np.zeros(1)}, h=0.0)
    with pytest.raises(NumericError, match=r"x\[1\]"):
        finite_diff_grad(lambda p: np.inf if p["x"][1] > 0 else 0.0, {"x": np.zeros(2)})


def test_finite_diff_matches_ge2e_gradient(rng):
    x = rng.normal(size=(4, 2, 8))
    out = ge2e_loss(x)
    num = finite_diff_grad(lambda p: ge2e_loss(p["x"]).value, {"x": x}, h=1e-4)
    a, n = out.grads["embeddings"], num["x"]
    assert np.max(np.abs(a - n) / (np.abs(n) + 1e-8)) <= 1e-4


def test_grad_result_check():
    params = {"w": np.zeros((2, 2))}
    GradResult(1.0, {"w": np.ones((2, 2))}).check(params)
    with pytest.raises(NumericError):
        GradResult(1.0, {}).check(params)
    with pytest.raises(NumericError):
        GradResult(1.0, {"w": np.ones(3)}).check(params)
