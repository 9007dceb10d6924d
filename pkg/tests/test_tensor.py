import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kvmms import tensor
from kvmms.errors import SingularMatrixError

from conftest import fd_matrix_derivative, rel_err

floats = st.floats(-3, 3, allow_nan=False)
mats = st.lists(floats, min_size=4, max_size=4).map(lambda v: np.array(v).reshape(2, 2))


def test_cauchy_green_examples():
    assert np.array_equal(tensor.cauchy_green(np.eye(2)), np.eye(2))
    F = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert np.array_equal(tensor.cauchy_green(F), np.diag([4.0, 1.0]))


def test_cauchy_green_rate_examples():
    S = np.array([[1.0, 2.0], [2.0, -1.0]])
    assert np.allclose(tensor.cauchy_green_rate(np.eye(2), S), 2 * S)
    Wsk = np.array([[0.0, 1.3], [-1.3, 0.0]])
    F = np.array([[1.2, 0.3], [-0.1, 0.9]])
    assert np.allclose(tensor.cauchy_green_rate(F, Wsk @ F), 0.0, atol=1e-14)
    N = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.array_equal(tensor.cauchy_green_rate(np.eye(2), N), np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_frobenius_examples():
    assert tensor.frobenius(np.eye(2)) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert tensor.frobenius(np.zeros((2, 2))) == 0.0
    assert tensor.frobenius(np.array([[3.0, 4.0], [0.0, 0.0]])) == 5.0
    assert tensor.frobenius(np.ones((2, 2, 2))) == pytest.approx(math.sqrt(8))


def test_det_inv_examples():
    assert tensor.det(np.eye(2)) == 1.0
    assert tensor.det(np.diag([2.0, 3.0])) == 6.0
    assert np.array_equal(tensor.inv(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    assert tensor.det(np.array([[5.0]])) == 5.0


def test_inv_singular_raises():
    with pytest.raises(SingularMatrixError):
        tensor.inv(np.array([[1.0, 2.0], [2.0, 4.0]]))


@given(mats)
def test_inv_roundtrip(M):
    if abs(np.linalg.det(M)) < 1e-3:
        return
    assert np.allclose(M @ tensor.inv(M), np.eye(2), atol=1e-12 * max(1.0, np.abs(M).max() / abs(np.linalg.det(M))))


def test_rotation_examples():
    assert np.array_equal(tensor.random_rotation(seed=0, d=1), np.array([[1.0]]))
    th = 0.7
    assert np.allclose(tensor.random_rotation(d=2, angle=th),
                       [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]], atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_rotation_membership(seed):
    Q = tensor.random_rotation(seed=seed)
    assert np.abs(Q.T @ Q - np.eye(2)).max() <= 1e-12
    assert abs(np.linalg.det(Q) - 1) <= 1e-12


@given(mats, mats)
def test_linearization_identity(F0, F1):
    dF = F1 - F0
    lhs = dF.T @ F0 + F0.T @ dF - (F1.T @ F1 - F0.T @ F0)
    assert np.allclose(lhs, -dF.T @ dF, atol=1e-12 * max(1.0, np.abs(F0).max(), np.abs(F1).max()) ** 2)


def test_cauchy_green_rate_matches_fd(rng):
    for _ in range(20):
        F, Fd = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        eps = 1e-6
        fd = (tensor.cauchy_green(F + eps * Fd) - tensor.cauchy_green(F - eps * Fd)) / (2 * eps)
        assert rel_err(tensor.cauchy_green_rate(F, Fd), fd) <= 1e-8


def _det_exact(M):
    return M[0][0] * M[1][1] - M[0][1] * M[1][0]


def test_det_increment_matches_rational_arithmetic(rng):
    F = rng.standard_normal((50, 2, 2))
    dF = 1e-9 * rng.standard_normal((50, 2, 2))
    got = tensor.det_increment(F, dF)
    for k in range(50):
        a = [[Fraction(x) for x in row] for row in F[k]]
        b = [[Fraction(x) + Fraction(y) for x, y in zip(r1, r2)] for r1, r2 in zip(F[k], dF[k])]
        exact = float(_det_exact(b) - _det_exact(a))
        assert got[k] == pytest.approx(exact, rel=1e-12)


def test_pow_increment_is_stable():
    b = np.array([1.0, 2.0, 0.5])
    delta = np.array([1e-14, -1e-13, 3e-15])
    for e in (0.75, 1.0, 1.5):
        exact = np.array([float((bi + di) ** e - bi**e) for bi, di in zip(b, delta)])
        approx = e * b ** (e - 1) * delta
        assert np.allclose(tensor.pow_increment(b, delta, e), approx, rtol=1e-6)
        assert np.allclose(tensor.pow_increment(b, delta, e), exact, rtol=1e-2)
    assert tensor.pow_increment(np.array([0.0]), np.array([4.0]), 1.5)[0] == pytest.approx(8.0)


# constants from a dense grid search over a/(a+b) with 2e6 points
@pytest.mark.parametrize("pt, expected", [(1.5, math.sqrt(2) - 1), (2.0, 1.0), (3.0, 3.0)])
def test_power_inequality_constant(pt, expected):
    assert tensor.power_inequality_constant(pt) == pytest.approx(expected, rel=1e-6)


@settings(max_examples=200)
@given(st.floats(0, 50), st.floats(0, 50), st.sampled_from([1.5, 2.0, 3.0]))
def test_power_inequality_holds(a, b, pt):
    C = tensor.power_inequality_constant(pt)
    lhs = (a + b) ** pt
    rhs = a**pt + b**pt + C * (a ** (pt - 1) * b + b ** (pt - 1) * a)
    assert lhs <= rhs * (1 + 1e-9) + 1e-12


def test_fd_helper_sanity():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(fd_matrix_derivative(lambda M: float(np.sum(M * M)), X), 2 * X, atol=1e-8)
