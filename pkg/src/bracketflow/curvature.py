"""Ricci curvature of a homogeneous space from its structure constants.

The Ricci operator on p decomposes as Ric = M - B/2 - U, where M is the
moment-map operator (a quadratic expression in the p-valued part of the
bracket), B is the Killing form of the full algebra restricted to p, and
U = S(ad H) symmetrizes left multiplication by the mean-curvature vector H.
Traces and adjoints are always taken against the fixed orthonormal basis
of p.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BracketTensor, HomogeneousPoint, act_pi_n

__all__ = [
    "CurvatureReport",
    "mean_curvature",
    "killing_operator",
    "moment_operator",
    "ricci_operator",
    "curvature_report",
    "delta_map",
    "delta_adjoint",
    "laplacian_op",
]


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def mean_curvature(mu: BracketTensor | np.ndarray) -> np.ndarray:
    """Mean-curvature vector H in p, with <H, X_i> = tr ad(X_i).

    Computed from the p-valued part of the bracket; on valid points this
    equals the trace of ad over all of g (the isotropy blocks contribute
    nothing there).
    """
    mu_p = mu.mu_p if isinstance(mu, BracketTensor) else np.asarray(mu, dtype=float)
    return np.einsum("ijj->i", mu_p)


def killing_operator(mu: BracketTensor) -> np.ndarray:
    """Killing form restricted to p as a symmetric operator.

    <B X, Y> = tr ad(X) ad(Y) over the whole algebra, so unlike the other
    curvature pieces this sees the full bracket, isotropy rows included.
    """
    q = mu.q
    rows = mu.c[q:, :, :]
    b = np.einsum("ilk,jkl->ij", rows, rows)
    return _sym(b)


def moment_operator(mu_p: np.ndarray) -> np.ndarray:
    """Moment-map operator M on p from the p-valued bracket part.

    M also satisfies tr(M E) = (1/4) <pi(E) mu_p, mu_p> for every operator E,
    which the tests use as an independent oracle.
    """
    mu_p = np.asarray(mu_p, dtype=float)
    first = np.einsum("xij,yij->xy", mu_p, mu_p)
    second = np.einsum("ijx,ijy->xy", mu_p, mu_p)
    return _sym(-0.5 * first + 0.25 * second)


def mean_curvature_op(mu_p: np.ndarray, h: np.ndarray | None = None) -> np.ndarray:
    """U = S(ad_{mu_p} H): symmetrized left multiplication by H."""
    if h is None:
        h = mean_curvature(mu_p)
    ad_h = np.einsum("i,ijk->kj", h, mu_p)
    return _sym(ad_h)


def ricci_operator(mu: BracketTensor) -> np.ndarray:
    """Ricci operator Ric = M - B/2 - U on p.

    Defined for every bracket, membership conditions or not; the flow
    right-hand side relies on that.
    """
    mu_p = mu.mu_p
    return moment_operator(mu_p) - 0.5 * killing_operator(mu) - mean_curvature_op(mu_p)


@dataclass(frozen=True, eq=False)
class CurvatureReport:
    """All Ricci-curvature ingredients of one homogeneous point."""

    H: np.ndarray
    B: np.ndarray
    M: np.ndarray
    U: np.ndarray
    Ric: np.ndarray
    R: float

    def as_dict(self) -> dict:
        return {
            "H": self.H.tolist(),
            "B": self.B.tolist(),
            "M": self.M.tolist(),
            "U": self.U.tolist(),
            "Ric": self.Ric.tolist(),
            "R": self.R,
        }


def curvature_pieces(mu: BracketTensor) -> CurvatureReport:
    """Assemble the full curvature report without membership checks."""
    mu_p = mu.mu_p
    h = mean_curvature(mu_p)
    b = killing_operator(mu)
    m = moment_operator(mu_p)
    u = mean_curvature_op(mu_p, h)
    ric = m - 0.5 * b - u
    return CurvatureReport(H=h, B=b, M=m, U=u, Ric=ric, R=float(np.trace(ric)))


def curvature_report(point: HomogeneousPoint) -> CurvatureReport:
    """Curvature report of a validated point (raises on invalid input)."""
    point.require_valid()
    return curvature_pieces(point.bracket)


def delta_map(mu_p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """delta(A) = -pi(A) mu_p, the variation of the bracket along gl(p)."""
    return -act_pi_n(np.asarray(a, dtype=float), mu_p)


def delta_adjoint(mu_p: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Adjoint of delta w.r.t. the trace form on gl(p) and the tensor norm.

    Satisfies <delta_adj(lam), A> = <lam, delta(A)> for all A, and
    delta_adj(mu_p) = -4 M.
    """
    mu_p = np.asarray(mu_p, dtype=float)
    lam = np.asarray(lam, dtype=float)
    t1 = -np.einsum("ijm,ijl->ml", lam, mu_p)
    t2 = np.einsum("ijm,ajm->ai", lam, mu_p)
    t3 = np.einsum("ijm,ibm->bj", lam, mu_p)
    return t1 + t2 + t3


def laplacian_op(mu_p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Delta(A) = S(delta_adj(delta(A))); positive semidefinite in A."""
    return _sym(delta_adjoint(mu_p, delta_map(mu_p, a)))
