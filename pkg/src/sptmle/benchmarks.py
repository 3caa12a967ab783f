"""Comparison estimators: Gaussian working-model OLS and cross-fitted AIPW."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import linprog
from scipy.special import expit, log_expit

from .design import Dataset, MeanModelSpec, ols_solve
from .exceptions import InsufficientDataError, NonConvergenceError, SpecificationError
from .seeding import derive_seed
from .tmle import DEFAULT_B, DEFAULT_K, Z95, combine_splits, make_folds

AIPW_BOUNDS = (0.02, 0.98)


@dataclass(frozen=True)
class OlsAteResult:
    psi: float
    se: float
    ci: tuple
    var_model: float
    var_marginal: float
    beta: np.ndarray

    def to_dict(self, diagnostics: bool = False) -> dict:
        out = {"psi_hat": self.psi, "se": self.se, "ci": list(self.ci)}
        if diagnostics:
            out.update(var_model=self.var_model, var_marginal=self.var_marginal,
                       beta=self.beta.tolist())
        return out


def ols_ate(data: Dataset, spec: MeanModelSpec) -> OlsAteResult:
    """Plug-in ATE from a full-sample least-squares fit.

    The variance adds the model-based coefficient term ``c' s^2 (X'X)^{-1} c``
    (``c`` the mean contrast gradient) and the sampling variance of the
    averaged contrast over ``W``.
    """
    X = spec.design(data.A, data.W)
    beta, R = ols_solve(X, data.Y, spec.labels)
    n, k = X.shape
    resid = data.Y - X @ beta
    dof = n - k
    sigma2 = float(resid @ resid / dof) if dof > 0 else 0.0
    D = spec.contrast_design(data.W)
    delta = D @ beta
    c = D.mean(axis=0)
    # c' (R'R)^{-1} c = |R^{-T} c|^2
    z = scipy.linalg.solve_triangular(R, c, trans="T")
    var_model = sigma2 * float(z @ z)
    var_marginal = float(np.var(delta, ddof=1)) / n if n > 1 else 0.0
    psi = float(np.mean(delta))
    se = math.sqrt(var_model + var_marginal)
    return OlsAteResult(psi, se, (psi - Z95 * se, psi + Z95 * se), var_model, var_marginal, beta)


def truncate(g, lower: float, upper: float):
    return np.clip(g, lower, upper)


@dataclass(frozen=True)
class PropensityModel:
    """Logistic propensity ``expit(gamma_0 + gamma' w)`` truncated to ``[lower, upper]``."""

    gamma: np.ndarray
    lower: float = AIPW_BOUNDS[0]
    upper: float = AIPW_BOUNDS[1]
    iterations: int = 0

    def __post_init__(self):
        if not (0.0 < self.lower < self.upper < 1.0):
            raise SpecificationError(f"invalid truncation bounds ({self.lower}, {self.upper})")

    def linear_predictor(self, W) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=float))
        return self.gamma[0] + W @ self.gamma[1:]

    def predict_raw(self, W) -> np.ndarray:
        return expit(self.linear_predictor(W))

    def predict(self, W) -> np.ndarray:
        return truncate(self.predict_raw(W), self.lower, self.upper)


def _separated(X1: np.ndarray, y: np.ndarray) -> bool:
    """True when some direction (quasi-)separates the two classes.

    Solves ``max sum s_i x_i'b`` subject to ``s_i x_i'b >= 0`` and a box on
    ``b``; a positive optimum certifies separation.
    """
    s = np.where(y > 0.5, 1.0, -1.0)
    M = X1 * s[:, None]
    res = linprog(-M.sum(axis=0), A_ub=-M, b_ub=np.zeros(M.shape[0]),
                  bounds=[(-1.0, 1.0)] * X1.shape[1], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-7)


def fit_logistic(covariates, labels, tol: float = 1e-8, max_iter: int = 100,
                 bounds: tuple = AIPW_BOUNDS) -> PropensityModel:
    """Maximum-likelihood logistic regression by Newton/IRLS with step halving.

    Converged when the max-norm of the per-observation average log-likelihood
    gradient is at most ``tol``. Separation raises :class:`NonConvergenceError`.
    """
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    if X.shape[0] == 1 and np.ndim(covariates) == 1:
        X = X.T
    y = np.asarray(labels, dtype=float)
    n = y.shape[0]
    if X.shape[0] != n:
        raise SpecificationError("covariates and labels differ in length")
    if np.all(y == y[0]):
        raise InsufficientDataError("logistic regression needs both classes present")
    X1 = np.column_stack([np.ones(n), X])
    if n < X1.shape[1]:
        raise InsufficientDataError(f"{n} observations for {X1.shape[1]} logistic coefficients")

    def loglik(b):
        eta = X1 @ b
        return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))

    gamma = np.zeros(X1.shape[1])
    ll = loglik(gamma)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(X1 @ gamma)
        grad = X1.T @ (y - p) / n
        if np.max(np.abs(grad)) <= tol:
            converged = True
            break
        w = p * (1 - p)
        H = (X1 * w[:, None]).T @ X1 / n
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = gamma + t * step
            ll_c = loglik(cand)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        gamma, ll = cand, ll_c
        if np.linalg.norm(gamma) > 1e3:
            break
    eta_max = float(np.max(np.abs(X1 @ gamma)))
    if (np.linalg.norm(gamma) > 1e3 or eta_max > 20.0 or not converged) and _separated(X1, y):
        raise NonConvergenceError(
            f"logistic fit diverges: classes are separated (|gamma|={np.linalg.norm(gamma):.3g})"
        )
    if not converged:
        raise NonConvergenceError(f"logistic regression did not converge in {max_iter} iterations")
    return PropensityModel(gamma, bounds[0], bounds[1], it)


def np_eif(a, y, g, mu1, mu0, psi):
    """Nonparametric ATE influence function at propensity ``g`` and arm means ``mu1``, ``mu0``."""
    g = np.asarray(g, dtype=float)
    if np.any((g <= 0) | (g >= 1)):
        raise ValueError("propensity values must lie strictly inside (0, 1); truncate upstream")
    a = np.asarray(a, dtype=float)
    out = a / g * (y - mu1) - (1 - a) / (1 - g) * (y - mu0) + mu1 - mu0 - psi
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AipwResult:
    psi_hat: float
    se: float
    ci: tuple
    per_split: list
    V_rcf: float
    seeds: tuple = ()

    @property
    def B(self) -> int:
        return len(self.per_split)

    def to_dict(self, diagnostics: bool = False) -> dict:
        out = {"B": self.B, "psi_rcf": self.psi_hat, "V_rcf": self.V_rcf, "se_rcf": self.se,
               "ci_rcf": list(self.ci)}
        out["per_split"] = [{"seed": s, "psi": p, "V": v} for s, (p, v) in zip(self.seeds, self.per_split)]
        return out


def _arm_fit(Z, y, arm_label):
    if y.shape[0] == 0:
        raise InsufficientDataError(f"training split has no {arm_label} observations")
    Z1 = np.column_stack([np.ones(Z.shape[0]), Z])
    labels = ["(Intercept)"] + [f"z{j}" for j in range(Z.shape[1])]
    beta, _ = ols_solve(Z1, y, labels)
    return beta


def aipw_split(data: Dataset, plan, cov_idx, bounds, propensity, outcome) -> np.ndarray:
    """Held-out AIPW pseudo-outcomes for one partition."""
    Z = data.W[:, cov_idx]
    pseudo = np.empty(data.n)
    for k in range(1, plan.K + 1):
        test_idx = plan.members(k)
        train_mask = plan.assignment != k
        Ztr, Atr, Ytr = Z[train_mask], data.A[train_mask], data.Y[train_mask]
        Zte = Z[test_idx]
        if propensity is None:
            g = fit_logistic(Ztr, Atr, bounds=bounds).predict(Zte)
        else:
            g = truncate(np.asarray(propensity(data.W[test_idx]), float), *bounds)
        if outcome == "linear":
            b1 = _arm_fit(Ztr[Atr == 1], Ytr[Atr == 1], "treated")
            b0 = _arm_fit(Ztr[Atr == 0], Ytr[Atr == 0], "control")
            mu1 = b1[0] + Zte @ b1[1:]
            mu0 = b0[0] + Zte @ b0[1:]
        elif outcome == "zero":
            mu1 = mu0 = np.zeros(test_idx.shape[0])
        else:
            raise ValueError(f"unknown outcome model {outcome!r}")
        pseudo[test_idx] = np_eif(data.A[test_idx], data.Y[test_idx], g, mu1, mu0, 0.0)
    return pseudo


def aipw_estimate(
    data: Dataset,
    K: int = DEFAULT_K,
    B: int = DEFAULT_B,
    master_seed: int = 0,
    covariates: Optional[Sequence] = None,
    bounds: tuple = AIPW_BOUNDS,
    propensity: Optional[Callable] = None,
    outcome: str = "linear",
    seeds=None,
) -> AipwResult:
    """Repeated cross-fitted AIPW.

    Per partition: logistic propensity on ``covariates`` (all columns by
    default) truncated to ``bounds``, arm-specific linear outcome fits, and
    held-out pseudo-outcomes. ``propensity`` supplies a known score instead;
    ``outcome="zero"`` replaces the outcome fits with the zero function.
    """
    if covariates is None:
        cov_idx = list(range(data.p))
    else:
        cov_idx = [data.columns.index(c) if isinstance(c, str) else int(c) for c in covariates]
    seeds = tuple(seeds) if seeds is not None else tuple(
        derive_seed(master_seed, "aipw-split", b) for b in range(B))
    if len(seeds) < 1:
        raise ValueError("need at least one partition")
    per_split = []
    for s in seeds:
        plan = make_folds(data.n, K, s)
        pseudo = aipw_split(data, plan, cov_idx, bounds, propensity, outcome)
        per_split.append((float(np.mean(pseudo)), float(np.var(pseudo, ddof=1)) / data.n))
    if len(per_split) > 1:
        psi, V = combine_splits(*zip(*per_split))
    else:
        psi, V = per_split[0]
    se = math.sqrt(V)
    return AipwResult(psi, se, (psi - Z95 * se, psi + Z95 * se), per_split, V, seeds)
