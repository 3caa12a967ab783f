"""Dataset analysis: compare the targeted estimator with AIPW and Gaussian OLS."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .benchmarks import aipw_estimate, ols_ate
from .config import AnalysisConfig
from .ingest import IngestReport, load_csv
from .seeding import derive_seed
from .tmle import repeated_cross_fit

COMPARISON_COLUMNS = ("estimator", "estimate", "se", "ci_lo", "ci_hi", "width", "split_sd", "runs")
INTERVAL_COLUMNS = ("estimator", "estimate", "lo", "hi")


@dataclass
class ComparisonRow:
    estimator: str
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    width: float
    split_sd: Optional[float]
    runs: int


@dataclass
class AnalysisReport:
    rows: list
    ingest: IngestReport
    n: int
    model_labels: tuple
    diagnostics: dict = field(default_factory=dict)

    def row(self, estimator: str) -> ComparisonRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def comparison_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, c)) for c in COMPARISON_COLUMNS])
        return buf.getvalue()

    def intervals_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(INTERVAL_COLUMNS)
        for r in self.rows:
            w.writerow([r.estimator, _fmt(r.estimate), _fmt(r.ci_lo), _fmt(r.ci_hi)])
        return buf.getvalue()

    def to_json(self) -> dict:
        out = {
            "report_type": "analysis",
            "n": self.n,
            "ingest": self.ingest.to_dict(),
            "model_terms": list(self.model_labels),
            "rows": [asdict(r) for r in self.rows],
        }
        if self.diagnostics:
            out["diagnostics"] = self.diagnostics
        return out


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(name, estimate, lo, hi, se, runs_psi):
    sd = float(np.std(runs_psi, ddof=1)) if len(runs_psi) > 1 else None
    return ComparisonRow(name, float(estimate), float(se), float(lo), float(hi), float(hi - lo),
                         sd, len(runs_psi))


def run_analysis(cfg: AnalysisConfig, base_dir: str = ".", diagnostics: bool = False) -> AnalysisReport:
    """Run every configured estimator on the configured CSV.

    The headline numbers come from the run seeded by ``cfg.seed``; the
    stochastic estimators are rerun ``cfg.reruns`` times in total under
    derived seeds and the spread of those estimates is the split s.d.
    """
    path = cfg.input if os.path.isabs(cfg.input) else os.path.join(base_dir, cfg.input)
    data, ingest = load_csv(path, cfg.outcome, cfg.treatment, cfg.covariates, cfg.transforms)
    spec = cfg.model_spec()
    rows, diag = [], {}
    seeds = [cfg.seed] + [derive_seed(cfg.seed, "rerun", r) % (2 ** 63) for r in range(1, cfg.reruns)]
    for name in cfg.estimators:
        if name == "tmle":
            fits = [repeated_cross_fit(data, spec, cfg.K, cfg.B, master_seed=s) for s in seeds]
            head = fits[0]
            rows.append(_row("tmle", head.psi_rcf, *head.ci_rcf, head.se_rcf, [f.psi_rcf for f in fits]))
            if diagnostics:
                diag["tmle"] = head.to_dict(diagnostics=True)
        elif name == "aipw":
            fits = [aipw_estimate(data, cfg.K, cfg.B, master_seed=s) for s in seeds]
            head = fits[0]
            rows.append(_row("aipw", head.psi_hat, *head.ci, head.se, [f.psi_hat for f in fits]))
            if diagnostics:
                diag["aipw"] = head.to_dict(diagnostics=True)
        elif name == "ols":
            res = ols_ate(data, spec)
            rows.append(ComparisonRow("ols", res.psi, res.se, res.ci[0], res.ci[1],
                                      res.ci[1] - res.ci[0], None, 1))
            if diagnostics:
                diag["ols"] = res.to_dict(diagnostics=True)
    for r in rows:
        if not all(math.isfinite(v) for v in (r.estimate, r.se)):
            raise ValueError(f"{r.estimator} produced a non-finite estimate")
    return AnalysisReport(rows, ingest, data.n, spec.labels, diag)
