"""Cross-fitted targeted estimation of the ATE under a structured mean model.

Per training split: least-squares start, kernel residual density, then a
scalar fluctuation ``beta + eps * I^{-1} grad`` solved so that the averaged
regression part of the estimated influence function vanishes. Held-out
contrasts under the targeted coefficients are averaged into the estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .design import Dataset, MeanModelSpec, fit_ols
from .effscore import (
    EffScoreContext,
    _info_from_scores,
    build_context,
    eif_beta,
    invert_information,
    score_matrix,
)
from .errordist import GaussianScore, fit_density
from .exceptions import FoldError, InsufficientDataError, SptmleError, TargetingError
from .seeding import derive_seed

Z95 = 1.96
TARGET_TOL = 1e-8
TARGET_MAX_ITER = 25
BRACKET_MAX_DOUBLINGS = 40

DEFAULT_K = 5
DEFAULT_B = 20


@dataclass(frozen=True)
class FoldPlan:
    K: int
    assignment: np.ndarray
    seed: int

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Balanced random partition of ``range(n)`` into folds labelled ``1..K``."""
    if K < 2:
        raise ValueError(f"need at least 2 folds, got K={K}")
    if K > n:
        raise ValueError(f"cannot split {n} observations into {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % K + 1
    return FoldPlan(K, assignment, int(seed))


@dataclass(frozen=True)
class TargetingResult:
    epsilon_hat: float
    direction: np.ndarray
    iterations: int
    residual_score: float
    initial_score: float
    trajectory: tuple = ()

    @property
    def relative_residual(self) -> float:
        """``|G(eps_hat)| / (1 + |G(0)|)``."""
        return abs(self.residual_score) / (1.0 + abs(self.initial_score))


class TargetingEquation:
    """The scalar map ``G(eps)`` along the least favourable fluctuation.

    The residual density stays fixed; scores, information and the gradient
    of the target are re-evaluated at ``beta0 + eps * direction``.
    """

    def __init__(self, spec: MeanModelSpec, train: Dataset, beta0, density, direction):
        self.X = spec.design(train.A, train.W)
        self.y = train.Y
        self.gbar = self.X.mean(axis=0)
        self.beta0 = np.asarray(beta0, dtype=float)
        self.density = density
        self.direction = np.asarray(direction, dtype=float)
        self.labels = spec.labels
        self._contrast = spec.contrast_design(train.W)

    def beta(self, eps: float) -> np.ndarray:
        return self.beta0 + eps * self.direction

    def __call__(self, eps: float) -> float:
        beta = self.beta(eps)
        S = score_matrix(self.X, self.y, beta, self.gbar, self.density)
        info_inv = invert_information(_info_from_scores(S), self.labels)
        # Linear bases make the contrast gradient constant in beta; kept general here.
        psi_grad = self._contrast.mean(axis=0)
        return float(psi_grad @ info_inv @ S.mean(axis=0))


def _bracket_from(points):
    pts = sorted(points)
    for (a, ga), (b, gb) in zip(pts, pts[1:]):
        if ga == 0.0:
            return a, ga, a, ga
        if np.sign(ga) != np.sign(gb):
            return a, ga, b, gb
    return None


def solve_targeting(G, tol: float = TARGET_TOL, max_iter: int = TARGET_MAX_ITER):
    """Root of ``G`` by Newton steps with a central-difference slope.

    A step that fails to reduce ``|G|`` switches to bisection on a sign-change
    bracket grown geometrically from ``[-1, 1]``. Converged when
    ``|G(eps)| <= tol * (1 + |G(0)|)``.

    Returns ``(eps_hat, G(eps_hat), G(0), iterations, trajectory)``.
    """
    g0 = G(0.0)
    traj = [(0.0, g0)]
    target = tol * (1.0 + abs(g0))
    if not math.isfinite(g0):
        raise TargetingError("targeting equation is not finite at eps=0", traj)
    if abs(g0) <= target:
        return 0.0, g0, g0, 0, tuple(traj)

    def evaluate(x):
        gx = G(x)
        traj.append((x, gx))
        return gx

    bracket = None
    eps, g = 0.0, g0
    for it in range(1, max_iter + 1):
        h = 1e-4 * (1.0 + abs(eps))
        slope = (G(eps + h) - G(eps - h)) / (2.0 * h)
        cand = eps - g / slope if slope != 0 and math.isfinite(slope) else math.nan
        if bracket is not None and not (bracket[0] < cand < bracket[2]):
            cand = 0.5 * (bracket[0] + bracket[2])
        gc = evaluate(cand) if math.isfinite(cand) else math.nan
        if bracket is None and not (math.isfinite(gc) and abs(gc) < abs(g)):
            bracket = _grow_bracket(evaluate, traj)
            cand = 0.5 * (bracket[0] + bracket[2])
            gc = evaluate(cand)
        if bracket is not None and math.isfinite(gc):
            lo, glo, hi, ghi = bracket
            if np.sign(gc) == np.sign(glo):
                bracket = (cand, gc, hi, ghi)
            else:
                bracket = (lo, glo, cand, gc)
        eps, g = cand, gc
        if math.isfinite(g) and abs(g) <= target:
            return eps, g, g0, it, tuple(traj)
    raise TargetingError(
        f"targeting did not converge in {max_iter} iterations (|G|={abs(g):.3e}, target {target:.3e})",
        traj,
    )


def _grow_bracket(evaluate, traj):
    known = [(x, gx) for x, gx in traj if math.isfinite(gx)]
    found = _bracket_from(known)
    width = 1.0
    for _ in range(BRACKET_MAX_DOUBLINGS):
        if found is not None:
            return found
        known += [(-width, evaluate(-width)), (width, evaluate(width))]
        known = [(x, gx) for x, gx in known if math.isfinite(gx)]
        found = _bracket_from(known)
        width *= 2.0
    raise TargetingError("no sign change found for the targeting equation", traj)


@dataclass(frozen=True)
class FoldFit:
    fold: int
    n_train: int
    n_test: int
    beta_init: np.ndarray
    beta_targeted: np.ndarray
    targeting: TargetingResult
    density: dict
    context: EffScoreContext = field(repr=False, compare=False)


def target_fold(
    train: Dataset,
    spec: MeanModelSpec,
    fold: int = 0,
    score: str = "kernel",
    density_method: str = "binned",
) -> FoldFit:
    """Initial fit, residual density and targeting on one training split.

    ``score="gaussian"`` swaps the kernel score for the analytic Gaussian score
    ``-u / v_hat``; with a least-squares start the targeting step is then null.
    """
    min_train = max(spec.k + 5, 20)
    if train.n < min_train:
        raise InsufficientDataError(f"training split of {train.n} rows; need at least {min_train}")
    init = fit_ols(spec, train, fold_id=fold)
    resid = train.Y - spec.design(train.A, train.W) @ init.beta
    if score == "kernel":
        density = fit_density(resid, method=density_method)
    elif score == "gaussian":
        density = GaussianScore(float(np.var(resid, ddof=1)))
    else:
        raise ValueError(f"unknown score {score!r}")
    ctx0 = build_context(spec, init.beta, density, train)
    G = TargetingEquation(spec, train, init.beta, density, ctx0.direction)
    eps, g, g0, iters, traj = solve_targeting(G)
    beta_t = G.beta(eps)
    ctx = build_context(spec, beta_t, density, train)
    result = TargetingResult(eps, ctx0.direction, iters, g, g0, traj)
    return FoldFit(fold, train.n, 0, init.beta, beta_t, result, density.diagnostics(), ctx)


def _wald(psi, se):
    return (psi - Z95 * se, psi + Z95 * se)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


@dataclass(frozen=True)
class TmleResult:
    psi_hat: float
    se: float
    ci: tuple
    eif_values: np.ndarray
    per_fold: list
    fold_plan: Optional[FoldPlan] = None

    @property
    def variance(self) -> float:
        return self.se ** 2

    @property
    def eif_mean(self) -> float:
        return float(np.mean(self.eif_values))

    @property
    def max_relative_residual(self) -> float:
        return max(f.targeting.relative_residual for f in self.per_fold)

    def to_dict(self, diagnostics: bool = False) -> dict:
        out = {
            "psi_hat": self.psi_hat,
            "se": self.se,
            "ci": list(self.ci),
            "eif_mean": self.eif_mean,
            "max_targeting_residual": self.max_relative_residual,
        }
        if diagnostics:
            out["per_fold"] = [
                {
                    "fold": f.fold,
                    "n_train": f.n_train,
                    "n_test": f.n_test,
                    "beta_init": _jsonable(f.beta_init),
                    "beta_targeted": _jsonable(f.beta_targeted),
                    "epsilon_hat": f.targeting.epsilon_hat,
                    "iterations": f.targeting.iterations,
                    "residual_score": f.targeting.residual_score,
                    "initial_score": f.targeting.initial_score,
                    "density": {k: _jsonable(v) for k, v in f.density.items()},
                }
                for f in self.per_fold
            ]
        return out


def cross_fit_estimate(
    data: Dataset,
    spec: MeanModelSpec,
    K: int = DEFAULT_K,
    seed: int = 0,
    folds: Optional[FoldPlan] = None,
    score: str = "kernel",
    density_method: str = "binned",
) -> TmleResult:
    """One K-fold cross-fitted targeted estimate with EIF-based standard error."""
    plan = folds if folds is not None else make_folds(data.n, K, seed)
    if plan.assignment.shape[0] != data.n:
        raise ValueError("fold plan does not match the dataset size")
    delta = np.empty(data.n)
    reg = np.empty(data.n)
    fits = []
    for k in range(1, plan.K + 1):
        test_idx = plan.members(k)
        train = data.subset(plan.assignment != k)
        test = data.subset(test_idx)
        try:
            fit = target_fold(train, spec, fold=k, score=score, density_method=density_method)
        except SptmleError as exc:
            raise FoldError(k, exc) from exc
        ctx = fit.context
        delta[test_idx] = spec.contrast_design(test.W) @ fit.beta_targeted
        reg[test_idx] = eif_beta(ctx, test.W, test.A, test.Y) @ ctx.psi_grad
        fits.append(FoldFit(k, fit.n_train, test.n, fit.beta_init, fit.beta_targeted,
                            fit.targeting, fit.density, ctx))
    psi = float(np.sum(delta) / data.n)
    eif = (delta - psi) + reg
    se = float(np.sqrt(np.sum(eif * eif)) / data.n)
    return TmleResult(psi, se, _wald(psi, se), eif, fits, plan)


@dataclass(frozen=True)
class RepeatedResult:
    B: int
    per_split: list
    psi_rcf: float
    V_rcf: float
    seeds: tuple = ()
    fits: list = field(default_factory=list, repr=False, compare=False)

    @property
    def se_rcf(self) -> float:
        return math.sqrt(self.V_rcf)

    @property
    def ci_rcf(self) -> tuple:
        return _wald(self.psi_rcf, self.se_rcf)

    @property
    def mean_within_variance(self) -> float:
        return float(np.mean([v for _, v in self.per_split]))

    @property
    def max_relative_residual(self) -> float:
        return max((f.max_relative_residual for f in self.fits), default=0.0)

    def to_dict(self, diagnostics: bool = False) -> dict:
        out = {
            "B": self.B,
            "psi_rcf": self.psi_rcf,
            "V_rcf": self.V_rcf,
            "se_rcf": self.se_rcf,
            "ci_rcf": list(self.ci_rcf),
            "per_split": [{"seed": s, "psi": p, "V": v} for s, (p, v) in zip(self.seeds, self.per_split)],
        }
        if diagnostics and self.fits:
            out["splits"] = [f.to_dict(diagnostics=True) for f in self.fits]
        return out


def combine_splits(psis, variances) -> tuple[float, float]:
    """Mean estimate and within-plus-between split variance."""
    psis = np.asarray(psis, dtype=float)
    variances = np.asarray(variances, dtype=float)
    psi = float(np.mean(psis))
    between = float(np.sum((psis - psi) ** 2) / (psis.shape[0] - 1))
    return psi, float(np.mean(variances)) + between


def split_seeds(master_seed: int, B: int, purpose: str = "tmle-split") -> tuple:
    return tuple(derive_seed(master_seed, purpose, b) for b in range(B))


def repeated_cross_fit(
    data: Dataset,
    spec: MeanModelSpec,
    K: int = DEFAULT_K,
    B: int = DEFAULT_B,
    master_seed: int = 0,
    seeds=None,
    score: str = "kernel",
    density_method: str = "binned",
) -> RepeatedResult:
    """Average ``B`` cross-fitted estimates over independent partitions.

    ``seeds`` overrides the partition seeds derived from ``master_seed``.
    """
    if B < 2:
        raise ValueError("repeated cross-fitting needs B >= 2; use cross_fit_estimate for one split")
    seeds = tuple(seeds) if seeds is not None else split_seeds(master_seed, B)
    if len(seeds) != B:
        raise ValueError(f"{len(seeds)} seeds supplied for B={B}")
    fits = [cross_fit_estimate(data, spec, K, s, score=score, density_method=density_method)
            for s in seeds]
    per_split = [(f.psi_hat, f.variance) for f in fits]
    psi, V = combine_splits(*zip(*per_split))
    return RepeatedResult(B, per_split, psi, V, seeds, fits)
