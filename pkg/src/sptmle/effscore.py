"""Efficient regression score, information, and influence functions for the ATE.

For residual ``e = y - m(a, w; beta)``, basis row ``phi = phi(a, w)``, the
training-fold mean basis ``gbar``, error score ``l'`` and variance ``v`` the
efficient score is::

    S(O) = (phi - gbar) * (-l'(e)) + gbar * e / v

which is the parametric score ``-phi l'(e)`` minus its projection onto
mean-zero functions of ``(A, W)`` and onto error perturbations ``a(e)`` with
``E a = E[e a] = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .design import Dataset, MeanModelSpec
from .exceptions import InsufficientDataError, SingularInformationError

INFO_TOL = 1e-10


@dataclass(frozen=True)
class EffScoreContext:
    spec: MeanModelSpec
    beta: np.ndarray
    density: Any
    gbar: np.ndarray
    psi_grad: np.ndarray
    info: np.ndarray
    info_inv: np.ndarray

    @property
    def direction(self) -> np.ndarray:
        """Least favourable direction ``info^{-1} psi_grad``."""
        return self.info_inv @ self.psi_grad


@dataclass(frozen=True)
class PsiEstimate:
    psi: float
    grad: np.ndarray
    bound: Optional[float] = None


def score_matrix(X, y, beta, gbar, density) -> np.ndarray:
    """Rows of the efficient score for design rows ``X`` and outcomes ``y``."""
    e = y - X @ beta
    lp = density.score(e)
    return (X - gbar) * (-lp)[:, None] + np.outer(e / density.v_hat, gbar)


def invert_information(info: np.ndarray, labels=None) -> np.ndarray:
    """Inverse via eigendecomposition; refuses near-singular matrices."""
    w, V = np.linalg.eigh(info)
    if not w[-1] > 0 or w[0] <= INFO_TOL * w[-1]:
        direction = V[:, 0]
        name = ""
        if labels is not None:
            top = np.argsort(-np.abs(direction))[:3]
            name = "; near-null direction loads on " + ", ".join(
                f"{labels[j]} ({direction[j]:+.3f})" for j in top if abs(direction[j]) > 1e-3
            )
        raise SingularInformationError(
            f"information matrix is singular (eigenvalues {w[0]:.3e} .. {w[-1]:.3e}){name}",
            direction,
        )
    inv = (V / w) @ V.T
    return 0.5 * (inv + inv.T)


def _info_from_scores(S: np.ndarray) -> np.ndarray:
    M = S.T @ S / S.shape[0]
    return 0.5 * (M + M.T)


def information_matrix(spec: MeanModelSpec, beta, density, train: Dataset) -> np.ndarray:
    """Fold average of ``S S^T`` using the fold's own ``gbar``; validated invertible."""
    if train.n < spec.k:
        raise InsufficientDataError(f"fold of size {train.n} for {spec.k} coefficients")
    X = spec.design(train.A, train.W)
    S = score_matrix(X, train.Y, np.asarray(beta, float), X.mean(axis=0), density)
    info = _info_from_scores(S)
    invert_information(info, spec.labels)
    return info


def build_context(spec: MeanModelSpec, beta, density, train: Dataset) -> EffScoreContext:
    beta = np.asarray(beta, dtype=float)
    X = spec.design(train.A, train.W)
    gbar = X.mean(axis=0)
    psi_grad = spec.contrast_design(train.W).mean(axis=0)
    info = _info_from_scores(score_matrix(X, train.Y, beta, gbar, density))
    info_inv = invert_information(info, spec.labels)
    return EffScoreContext(spec, beta, density, gbar, psi_grad, info, info_inv)


def efficient_score(ctx: EffScoreContext, W, A, Y) -> np.ndarray:
    """Efficient score rows (``n x k``) for observations ``(W, A, Y)``."""
    X = ctx.spec.design(A, np.atleast_2d(W))
    return score_matrix(X, np.atleast_1d(np.asarray(Y, float)), ctx.beta, ctx.gbar, ctx.density)


def eif_beta(ctx: EffScoreContext, W, A, Y) -> np.ndarray:
    return efficient_score(ctx, W, A, Y) @ ctx.info_inv


def plugin_ate(spec: MeanModelSpec, beta, W) -> PsiEstimate:
    """Average the treatment contrast over an empirical covariate sample."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 0:
        raise InsufficientDataError("plug-in ATE needs a non-empty covariate sample")
    D = spec.contrast_design(W)
    return PsiEstimate(float(np.mean(D @ np.asarray(beta, float))), D.mean(axis=0))


def eif_psi(ctx: EffScoreContext, psi_hat: float, W, A, Y) -> np.ndarray:
    W = np.atleast_2d(W)
    delta = ctx.spec.contrast_design(W) @ ctx.beta
    return (delta - psi_hat) + eif_beta(ctx, W, A, Y) @ ctx.psi_grad


def efficiency_bound(ctx: EffScoreContext, W) -> float:
    """``Var{Delta(W)} + psi_grad' I^{-1} psi_grad`` over the given covariate sample."""
    W = np.atleast_2d(W)
    delta = ctx.spec.contrast_design(W) @ ctx.beta
    var_w = float(np.var(delta, ddof=1)) if delta.shape[0] > 1 else 0.0
    return var_w + float(ctx.psi_grad @ ctx.info_inv @ ctx.psi_grad)
