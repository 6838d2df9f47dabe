import numpy as np
import pytest

from bracketflow.core import BracketTensor, act_gl, rescale, validate_point
from bracketflow.families import berger3, semisimple_concrete_su2, unimodular3


def random_invertible(rng, n, scale=0.6):
    """Well-conditioned random matrix (shifted so the determinant stays away
    from zero)."""
    while True:
        h = np.eye(n) + scale * rng.normal(size=(n, n))
        if abs(np.linalg.det(h)) > 0.1:
            return h


def solvable_point(alpha, beta):
    """Non-unimodular solvable bracket mu(X1,X2)=alpha X2, mu(X1,X3)=beta X3."""
    t = np.zeros((3, 3, 3))
    t[0, 1, 1] = alpha
    t[1, 0, 1] = -alpha
    t[0, 2, 2] = beta
    t[2, 0, 2] = -beta
    return validate_point(BracketTensor(0, 3, t))


def compatible_block_q1(rng):
    """Isotropy-compatible block for the isotropy-1 dimension-3 family.

    h_n = R(theta) diag(x, y, y) with R a rotation in the (X2, X3) plane
    commutes appropriately with the isotropy operator, and products of such
    maps stay in the same set.
    """
    x, y = rng.uniform(0.5, 1.6, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    rot = np.eye(3)
    rot[1, 1] = rot[2, 2] = np.cos(theta)
    rot[1, 2] = -np.sin(theta)
    rot[2, 1] = np.sin(theta)
    h_n = rot @ np.diag([x, y, y])
    h_q = np.array([[rng.uniform(0.5, 1.5)]])
    return h_q, h_n


def random_valid_point(rng, allow_q1=True):
    """Random validated membership point, built from catalog seeds moved by
    group elements (which preserve membership)."""
    kind = rng.integers(0, 4 if allow_q1 else 3)
    if kind == 0:
        params = rng.uniform(-1.5, 1.5, size=3)
        mu = unimodular3(*params).point.bracket
        h = random_invertible(rng, 3)
        mu = act_gl(mu, np.zeros((0, 0)), h)
    elif kind == 1:
        a, b = rng.uniform(-1.2, 1.2, size=2)
        mu = semisimple_concrete_su2(a, b).point.bracket
        h = random_invertible(rng, 3)
        mu = act_gl(mu, np.zeros((0, 0)), h)
    elif kind == 2:
        alpha, beta = rng.uniform(-1.0, 1.0, size=2)
        mu = solvable_point(alpha, beta).bracket
        h = random_invertible(rng, 3)
        mu = act_gl(mu, np.zeros((0, 0)), h)
    else:
        a, b, c = rng.uniform(-1.2, 1.2, size=3)
        mu = berger3(a, b, c).point.bracket
        h_q, h_n = compatible_block_q1(rng)
        mu = act_gl(mu, h_q, h_n)
    if rng.random() < 0.3:
        mu = rescale(rng.uniform(0.5, 2.0), mu)
    point = validate_point(mu, tol=1e-7)
    assert point.valid, point.report.as_dict()
    return point


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
