"""Fast built-in property checks behind ``sptmle selftest``.

Each check returns ``(name, ok, detail)``; the whole set runs in seconds.
"""
from __future__ import annotations

import math

import numpy as np

from .design import Dataset, simulation_spec
from .effscore import score_matrix
from .errordist import GaussianScore, fit_density
from .ingest import TRANSFORMS
from .seeding import derive_seed, stream
from .simlab import BETA_TRUE, ScenarioSpec, gen_covariates, gen_treatment, simulate_dataset
from .tmle import cross_fit_estimate, make_folds, solve_targeting, target_fold


def _gaussian_reduction():
    spec = simulation_spec()
    data = simulate_dataset(ScenarioSpec("selftest", n=500, master_seed=1), 0)
    X = spec.design(data.A, data.W)
    beta = np.linalg.lstsq(X, data.Y, rcond=None)[0]
    v = float(np.var(data.Y - X @ beta, ddof=1))
    S = score_matrix(X, data.Y, beta, X.mean(axis=0), GaussianScore(v))
    ls = X * ((data.Y - X @ beta) / v)[:, None]
    err = float(np.max(np.abs(S - ls)))
    return err <= 1e-10, f"max |S - X e / v| = {err:.1e}"


def _gaussian_epsilon():
    data = simulate_dataset(ScenarioSpec("selftest", n=400, master_seed=2), 0)
    fit = target_fold(data, simulation_spec(), score="gaussian")
    eps = fit.targeting.epsilon_hat
    return eps == 0.0, f"epsilon = {eps!r}"


def _score_clip():
    r = stream(3, "clip").standard_t(3, size=2000)
    model = fit_density(r)
    u = np.linspace(r.min() - 50, r.max() + 50, 20001)
    sup = float(np.max(np.abs(model.score(u))))
    return sup <= model.clip * (1 + 1e-12) and model.h > 0, f"sup |score| = {sup:.3f}, c = {model.clip:.3f}"


def _targeting_residual():
    data = simulate_dataset(ScenarioSpec("selftest", n=500, error_regime="skew_mixture", master_seed=4), 0)
    fit = cross_fit_estimate(data, simulation_spec(), K=5, seed=5)
    res = fit.max_relative_residual
    return res <= 1e-8, f"max relative residual = {res:.1e}"


def _noiseless():
    spec = simulation_spec()
    rng = stream(6, "noiseless")
    W = gen_covariates(200, rng)
    A = gen_treatment(W, "balanced", rng)
    data = Dataset(W, A, spec.design(A, W) @ BETA_TRUE)
    truth = float(np.mean(spec.contrast_design(W) @ BETA_TRUE))
    est = cross_fit_estimate(data, spec, K=5, seed=7).psi_hat
    return abs(est - truth) <= 1e-8, f"|psi - sample ATE| = {abs(est - truth):.1e}"


def _folds_and_seeds():
    ok = True
    for n, K in ((10, 5), (101, 5), (37, 4)):
        counts = np.bincount(make_folds(n, K, derive_seed(8, n)).assignment)[1:]
        ok &= counts.max() - counts.min() <= 1 and counts.sum() == n
    ok &= derive_seed(1, "a") == derive_seed(1, "a") != derive_seed(1, "b")
    return bool(ok), "balanced folds, stable seed derivation"


def _solver():
    eps, *_ = solve_targeting(lambda e: math.tanh(3 * (e - 7.5)))
    return abs(eps - 7.5) <= 1e-8, f"root = {eps:.10f}"


def _asinh():
    val = float(TRANSFORMS["asinh"](np.array([29000.0, 0.0]))[0])
    ok = abs(val - 10.968198289825821) < 1e-12 and TRANSFORMS["asinh"](np.array([0.0]))[0] == 0.0
    return ok, f"asinh(29000) = {val:.6f}"


CHECKS = (
    ("gaussian score reduces to least squares", _gaussian_reduction),
    ("gaussian plug-in gives zero epsilon", _gaussian_epsilon),
    ("kernel score respects clip bound", _score_clip),
    ("targeting equation solved on every fold", _targeting_residual),
    ("noiseless data recovers the sample ATE", _noiseless),
    ("fold balance and seed derivation", _folds_and_seeds),
    ("bracketed Newton finds a far root", _solver),
    ("asinh transform", _asinh),
)


def run_checks():
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the remaining checks
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
