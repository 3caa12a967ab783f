"""Simulation designs, Monte Carlo driver and performance metrics.

Covariates are ``W1, W2 ~ N(0,1)``, ``W3 ~ Bernoulli(0.5)``, ``W4 ~ U(-1,1)``;
outcomes follow the working mean model with coefficients :data:`BETA_TRUE`
plus a regime-specific error. The true ATE is 0.75 in every regime.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .benchmarks import aipw_estimate, ols_ate
from .design import Dataset, simulation_spec
from .exceptions import FailureBudgetExceeded, SptmleError
from .seeding import derive_seed, stream
from .tmle import DEFAULT_B, DEFAULT_K, repeated_cross_fit

BETA_TRUE = np.array([0.0, 1.0, 0.8, -0.6, 0.5, 0.4, 0.7, -0.5])
PSI_TRUE = 0.75
COVARIATE_NAMES = ("W1", "W2", "W3", "W4")

REGIMES = ("gaussian", "heavy_t3", "skew_mixture", "misspecified_mean")
# zero-error regime for degenerate checks; not part of the table grids
NOISELESS = "noiseless"
ASSIGNMENTS = ("balanced", "imbalanced")
ESTIMATORS = ("tmle", "ols", "aipw")

BALANCED_LOGIT = (-0.2, 0.5, -0.4, 0.6, -0.3)
IMBALANCED_LOGIT = (-1.0, 0.9, -0.8, 0.8, -0.6)
IMBALANCED_BOUNDS = (0.08, 0.92)

MIX_WEIGHTS = (0.8, 0.2)
MIX_MEANS = (-0.5, 2.0)
MIX_SDS = (0.5, 1.0)
MIX_MEAN = sum(w * m for w, m in zip(MIX_WEIGHTS, MIX_MEANS))
MISSPEC_AMPLITUDE = 0.4

FAILURE_BUDGET = 0.01


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    W = np.empty((n, 4))
    W[:, 0] = rng.standard_normal(n)
    W[:, 1] = rng.standard_normal(n)
    W[:, 2] = rng.random(n) < 0.5
    W[:, 3] = rng.uniform(-1.0, 1.0, n)
    return W


def propensity(W: np.ndarray, mechanism: str) -> np.ndarray:
    """True ``P(A=1 | W)`` under the named assignment mechanism."""
    if mechanism == "balanced":
        c = BALANCED_LOGIT
        return expit(c[0] + W @ np.asarray(c[1:]))
    if mechanism == "imbalanced":
        c = IMBALANCED_LOGIT
        return np.clip(expit(c[0] + W @ np.asarray(c[1:])), *IMBALANCED_BOUNDS)
    raise ValueError(f"unknown assignment mechanism {mechanism!r}")


def gen_treatment(W: np.ndarray, mechanism: str, rng: np.random.Generator) -> np.ndarray:
    p = propensity(W, mechanism)
    return (rng.random(W.shape[0]) < p).astype(np.int8)


def gen_error(regime: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if regime == NOISELESS:
        return np.zeros(n)
    if regime == "gaussian":
        return rng.standard_normal(n)
    if regime == "heavy_t3":
        return rng.standard_t(3, n) / math.sqrt(3.0)
    if regime in ("skew_mixture", "misspecified_mean"):
        comp = rng.random(n) < MIX_WEIGHTS[0]
        z = rng.standard_normal(n)
        out = np.where(comp, MIX_MEANS[0] + MIX_SDS[0] * z, MIX_MEANS[1] + MIX_SDS[1] * z)
        return out - MIX_MEAN
    raise ValueError(f"unknown error regime {regime!r}")


def true_mean(W: np.ndarray, A: np.ndarray, regime: str = "gaussian") -> np.ndarray:
    m = simulation_spec().design(A, W) @ BETA_TRUE
    if regime == "misspecified_mean":
        m = m + MISSPEC_AMPLITUDE * np.sin(W[:, 1])
    return m


def gen_outcome(W, A, regime: str, rng: Optional[np.random.Generator] = None, eps=None) -> np.ndarray:
    """Outcomes from the true mean plus an error drawn from ``rng`` (or given as ``eps``)."""
    if eps is None:
        eps = gen_error(regime, W.shape[0], rng)
    return true_mean(W, A, regime) + eps


@dataclass(frozen=True)
class TrueErrorLaw:
    """Analytic error density of a regime; plugs into the efficient score in place of a fit."""

    regime: str

    def pdf(self, u):
        u = np.asarray(u, dtype=float)
        if self.regime == "gaussian":
            return stats.norm.pdf(u)
        if self.regime == "heavy_t3":
            s = math.sqrt(3.0)
            return s * stats.t.pdf(s * u, 3)
        return sum(w * stats.norm.pdf(u + MIX_MEAN, m, sd)
                   for w, m, sd in zip(MIX_WEIGHTS, MIX_MEANS, MIX_SDS))

    def score(self, u):
        u = np.asarray(u, dtype=float)
        if self.regime == "gaussian":
            return -u
        if self.regime == "heavy_t3":
            x = math.sqrt(3.0) * u
            return math.sqrt(3.0) * (-4.0 * x / (3.0 + x * x))
        x = u + MIX_MEAN
        dens = [w * stats.norm.pdf(x, m, sd) for w, m, sd in zip(MIX_WEIGHTS, MIX_MEANS, MIX_SDS)]
        num = sum(-d * (x - m) / sd ** 2 for d, m, sd in zip(dens, MIX_MEANS, MIX_SDS))
        return num / sum(dens)

    @property
    def v_hat(self) -> float:
        if self.regime in ("gaussian", "heavy_t3"):
            return 1.0
        second = sum(w * (sd ** 2 + m ** 2) for w, m, sd in zip(MIX_WEIGHTS, MIX_MEANS, MIX_SDS))
        return second - MIX_MEAN ** 2

    @property
    def i1_hat(self) -> float:
        return self.fisher_information()

    def fisher_information(self) -> float:
        """Location information ``int (f')^2 / f`` by quadrature."""
        val, _ = integrate.quad(lambda u: float(self.score(u)) ** 2 * float(self.pdf(u)),
                                -np.inf, np.inf, limit=200)
        return val

    def diagnostics(self) -> dict:
        return {"h": None, "delta": None, "c": None, "v_hat": self.v_hat,
                "i1_hat": self.i1_hat, "mean_score": None, "mean_eps_score": None}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int = 500
    error_regime: str = "gaussian"
    assignment: str = "balanced"
    reps: int = 1000
    K: int = DEFAULT_K
    B: int = DEFAULT_B
    master_seed: int = 20240101
    estimators: tuple = ESTIMATORS
    psi_true: float = PSI_TRUE

    def __post_init__(self):
        if self.error_regime not in REGIMES + (NOISELESS,):
            raise ValueError(f"unknown error regime {self.error_regime!r}")
        if self.assignment not in ASSIGNMENTS:
            raise ValueError(f"unknown assignment {self.assignment!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad or not self.estimators:
            raise ValueError(f"unknown or empty estimator set {list(self.estimators)!r}")
        object.__setattr__(self, "estimators", tuple(self.estimators))


def simulate_dataset(scenario: ScenarioSpec, rep: int) -> Dataset:
    seed = scenario.master_seed
    W = gen_covariates(scenario.n, stream(seed, rep, "covariates"))
    A = gen_treatment(W, scenario.assignment, stream(seed, rep, "treatment"))
    Y = gen_outcome(W, A, scenario.error_regime, stream(seed, rep, "error"))
    return Dataset(W, A, Y, COVARIATE_NAMES)


@dataclass(frozen=True)
class EstimateRecord:
    estimate: float
    lo: float
    hi: float
    max_targeting_residual: float = float("nan")


def run_estimator(name: str, data: Dataset, scenario: ScenarioSpec, rep: int) -> EstimateRecord:
    spec = simulation_spec()
    if name == "tmle":
        res = repeated_cross_fit(data, spec, scenario.K, scenario.B,
                                 master_seed=derive_seed(scenario.master_seed, rep, "tmle"))
        lo, hi = res.ci_rcf
        return EstimateRecord(res.psi_rcf, lo, hi, res.max_relative_residual)
    if name == "ols":
        res = ols_ate(data, spec)
        return EstimateRecord(res.psi, *res.ci)
    if name == "aipw":
        res = aipw_estimate(data, scenario.K, scenario.B,
                            master_seed=derive_seed(scenario.master_seed, rep, "aipw"))
        return EstimateRecord(res.psi_hat, *res.ci)
    raise ValueError(f"unknown estimator {name!r}")


def run_replication(scenario: ScenarioSpec, rep: int) -> dict:
    """All configured estimators on replication ``rep``; failures become strings."""
    data = simulate_dataset(scenario, rep)
    out = {"rep": rep, "treated": float(np.mean(data.A))}
    for name in scenario.estimators:
        try:
            out[name] = run_estimator(name, data, scenario, rep)
        except (SptmleError, np.linalg.LinAlgError, ValueError) as exc:
            out[name] = f"{type(exc).__name__}: {exc}"
    return out


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:  # pragma: no cover
        pass


def _run_chunk(args):
    scenario, reps = args
    return [run_replication(scenario, r) for r in reps]


@dataclass
class MetricRow:
    scenario: str
    error_regime: str
    assignment: str
    n: int
    estimator: str
    reps: int
    failures: int
    bias: float
    esd: float
    rmse: float
    coverage: float
    width: float
    mc_se_bias: float
    mc_se_esd: float
    mc_se_rmse: float
    mc_se_coverage: float
    mc_se_width: float
    mean_treated: float
    max_targeting_residual: float


CSV_COLUMNS = tuple(MetricRow.__dataclass_fields__)


def summarize(estimates, los, his, truth: float) -> dict:
    """Bias, ESD, RMSE, coverage and width with Monte Carlo standard errors."""
    est = np.asarray(estimates, dtype=float)
    lo = np.asarray(los, dtype=float)
    hi = np.asarray(his, dtype=float)
    R = est.shape[0]
    err = est - truth
    bias = float(np.mean(err))
    esd = float(np.std(est, ddof=1)) if R > 1 else float("nan")
    mse = float(np.mean(err ** 2))
    rmse = math.sqrt(mse)
    covered = (lo <= truth) & (truth <= hi)
    coverage = float(np.mean(covered))
    widths = hi - lo
    width = float(np.mean(widths))
    sqR = math.sqrt(R)
    se_mse = float(np.std(err ** 2, ddof=1)) / sqR if R > 1 else float("nan")
    return {
        "bias": bias, "esd": esd, "rmse": rmse, "coverage": coverage, "width": width,
        "mc_se_bias": esd / sqR,
        "mc_se_esd": esd / math.sqrt(2 * (R - 1)) if R > 1 else float("nan"),
        "mc_se_rmse": se_mse / (2 * rmse) if rmse > 0 else 0.0,
        "mc_se_coverage": math.sqrt(coverage * (1 - coverage) / R),
        "mc_se_width": float(np.std(widths, ddof=1)) / sqR if R > 1 else float("nan"),
    }


@dataclass
class MetricsTable:
    rows: list = field(default_factory=list)
    records: dict = field(default_factory=dict, repr=False)
    failures: dict = field(default_factory=dict, repr=False)

    def row(self, scenario: str, estimator: str) -> MetricRow:
        for r in self.rows:
            if r.scenario == scenario and r.estimator == estimator:
                return r
        raise KeyError((scenario, estimator))

    def extend(self, other: "MetricsTable") -> None:
        self.rows.extend(other.rows)
        self.records.update(other.records)
        self.failures.update(other.failures)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_json(self) -> dict:
        return {"report_type": "simulation",
                "rows": [{k: _json_num(v) for k, v in asdict(r).items()} for r in self.rows]}


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def monte_carlo(scenario: ScenarioSpec, estimators=None, workers: int = 1,
                failure_budget: float = FAILURE_BUDGET) -> MetricsTable:
    """Run ``scenario.reps`` replications and aggregate metrics per estimator.

    Replications are independent given their derived seeds, so any worker
    count yields identical numbers; aggregation is in replication order.
    """
    if estimators is not None:
        scenario = ScenarioSpec(**{**asdict(scenario), "estimators": tuple(estimators)})
    reps = list(range(scenario.reps))
    if workers <= 1:
        _limit_threads()
        results = [run_replication(scenario, r) for r in reps]
    else:
        chunks = [reps[i::workers * 4] for i in range(min(len(reps), workers * 4))]
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_threads) as pool:
            parts = list(pool.map(_run_chunk, [(scenario, c) for c in chunks]))
        results = sorted((r for part in parts for r in part), key=lambda d: d["rep"])
    treated = float(np.mean([r["treated"] for r in results]))
    table = MetricsTable()
    for name in scenario.estimators:
        ok = [(r["rep"], r[name]) for r in results if isinstance(r[name], EstimateRecord)]
        failed = {r["rep"]: r[name] for r in results if not isinstance(r[name], EstimateRecord)}
        table.failures[(scenario.name, name)] = failed
        if len(failed) > failure_budget * len(results):
            first = next(iter(failed.items()))
            raise FailureBudgetExceeded(
                f"{scenario.name}/{name}: {len(failed)} of {len(results)} replications failed "
                f"(first: rep {first[0]}: {first[1]})"
            )
        recs = [rec for _, rec in ok]
        table.records[(scenario.name, name)] = ok
        if not recs:
            continue
        m = summarize([x.estimate for x in recs], [x.lo for x in recs], [x.hi for x in recs],
                      scenario.psi_true)
        resid = [x.max_targeting_residual for x in recs if not math.isnan(x.max_targeting_residual)]
        table.rows.append(MetricRow(
            scenario.name, scenario.error_regime, scenario.assignment, scenario.n, name,
            len(recs), len(failed), **m, mean_treated=treated,
            max_targeting_residual=max(resid) if resid else float("nan"),
        ))
    return table


def run_scenarios(scenarios, workers: int = 1) -> MetricsTable:
    table = MetricsTable()
    for sc in scenarios:
        table.extend(monte_carlo(sc, workers=workers))
    return table


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def table_scenarios(table: int, reps: int = 1000, n: int = 500, B: int = DEFAULT_B,
                    K: int = DEFAULT_K, master_seed: int = 20240101, estimators=None) -> list:
    """Scenario grid of the balanced (``table=1``) or imbalanced (``table=2``) design."""
    assignment = {1: "balanced", 2: "imbalanced"}[table]
    est = tuple(estimators) if estimators else ESTIMATORS
    return [
        ScenarioSpec(f"{regime}/{assignment}", n, regime, assignment, reps, K, B,
                     derive_seed(master_seed, table, regime) % (2 ** 63), est)
        for regime in REGIMES
    ]


def scenario_to_dict(sc: ScenarioSpec) -> dict:
    d = asdict(sc)
    d["estimators"] = list(sc.estimators)
    return d


def dumps_table(table: MetricsTable) -> str:
    return json.dumps(table.to_json(), indent=2, sort_keys=True)
