"""JSON run configuration for the ``simulate`` and ``analyze`` commands.

Errors carry the line of the offending key so that a message such as
``scenarios[1].error_regime: unknown value 'cauchy' (line 9)`` can be traced
back to the file.
"""
from __future__ import annotations

import json
import json.decoder
import json.scanner
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from .design import MeanModelSpec, Term
from .exceptions import ConfigError, SpecificationError
from .simlab import ASSIGNMENTS, ESTIMATORS, NOISELESS, REGIMES, ScenarioSpec
from .tmle import DEFAULT_B, DEFAULT_K

COLUMN_TRANSFORMS = ("identity", "asinh", "log1p", "center")
DEFAULT_RERUNS = 20


class _Node(dict):
    """Dict that remembers the source line of each of its keys."""

    key_lines: dict
    line: int


def _line_of(text: str, pos: int) -> int:
    return text.count("\n", 0, pos) + 1


def _located_loads(text: str):
    """``json.loads`` that records key lines on every object."""
    decoder = json.JSONDecoder()
    spans = []

    def parse_object(s_and_end, strict, scan_once, object_hook, object_pairs_hook, memo=None):
        s, start = s_and_end
        obj, end = json.decoder.JSONObject(s_and_end, strict, scan_once, object_hook,
                                           object_pairs_hook, memo)
        inner = [(a, b) for a, b in spans if start <= a and b <= end]
        node = _Node(obj)
        node.line = _line_of(s, start - 1)
        node.key_lines = {}
        for key in obj:
            token = json.dumps(key)
            pos = s.find(token, start, end)
            while pos >= 0 and any(a <= pos < b for a, b in inner):
                pos = s.find(token, pos + 1, end)
            node.key_lines[key] = _line_of(s, pos) if pos >= 0 else node.line
        spans.append((start - 1, end))
        return node, end

    decoder.parse_object = parse_object
    decoder.scan_once = json.scanner.py_make_scanner(decoder)
    return decoder.decode(text)


class _Reader:
    """Typed access to a located node with path-aware errors."""

    def __init__(self, node, path: str):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'}: expected an object", path, getattr(node, "line", None))
        self.node = node
        self.path = path
        self.used = set()

    def line(self, key=None):
        lines = getattr(self.node, "key_lines", {})
        if key is not None and key in lines:
            return lines[key]
        return getattr(self.node, "line", None)

    def fail(self, key, message):
        where = f"{self.path}.{key}" if self.path else key
        raise ConfigError(f"{where}: {message}", where, self.line(key))

    def get(self, key, kind, default=None, required=False):
        self.used.add(key)
        if key not in self.node:
            if required:
                where = f"{self.path}.{key}" if self.path else key
                raise ConfigError(f"{where}: required field missing", where, self.line())
            return default
        value = self.node[key]
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            self.fail(key, f"expected an integer, got {value!r}")
        if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            self.fail(key, f"expected a number, got {value!r}")
        if kind is str and not isinstance(value, str):
            self.fail(key, f"expected a string, got {value!r}")
        if kind is bool and not isinstance(value, bool):
            self.fail(key, f"expected true or false, got {value!r}")
        if kind is list and not isinstance(value, list):
            self.fail(key, f"expected a list, got {value!r}")
        if kind is dict and not isinstance(value, dict):
            self.fail(key, f"expected an object, got {value!r}")
        return float(value) if kind is float else value

    def choice(self, key, options, default=None, required=False):
        value = self.get(key, str, default, required)
        if value is not None and value not in options:
            self.fail(key, f"unknown value {value!r}; expected one of {', '.join(options)}")
        return value

    def reject_unknown(self):
        extra = [k for k in self.node if k not in self.used]
        if extra:
            self.fail(extra[0], "unknown field")


def _estimator_list(r: _Reader, key, default):
    names = r.get(key, list, list(default))
    if not names:
        r.fail(key, "at least one estimator is required")
    for name in names:
        if name not in ESTIMATORS:
            r.fail(key, f"unknown estimator {name!r}; expected one of {', '.join(ESTIMATORS)}")
    if len(set(names)) != len(names):
        r.fail(key, "estimators listed more than once")
    return tuple(names)


@dataclass
class SimulateConfig:
    scenarios: list
    dump_data: bool = False

    def to_dict(self) -> dict:
        out = []
        for sc in self.scenarios:
            d = asdict(sc)
            d["estimators"] = list(sc.estimators)
            out.append(d)
        return {"scenarios": out, "dump_data": self.dump_data}


@dataclass
class AnalysisConfig:
    input: str
    outcome: str
    treatment: str
    covariates: list
    transforms: dict = field(default_factory=dict)
    mean_model: list = field(default_factory=list)
    estimators: tuple = ESTIMATORS
    K: int = DEFAULT_K
    B: int = DEFAULT_B
    seed: int = 0
    reruns: int = DEFAULT_RERUNS

    def model_spec(self) -> MeanModelSpec:
        return MeanModelSpec.from_terms([Term.from_dict(t) for t in self.mean_model], self.covariates)

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "outcome": self.outcome,
            "treatment": self.treatment,
            "covariates": list(self.covariates),
            "transforms": dict(self.transforms),
            "mean_model": [dict(t) for t in self.mean_model],
            "estimators": list(self.estimators),
            "K": self.K,
            "B": self.B,
            "seed": self.seed,
            "reruns": self.reruns,
        }


@dataclass
class RunConfig:
    simulate: Optional[SimulateConfig] = None
    analyze: Optional[AnalysisConfig] = None

    def to_dict(self) -> dict:
        out = {}
        if self.simulate is not None:
            out["simulate"] = self.simulate.to_dict()
        if self.analyze is not None:
            out["analyze"] = self.analyze.to_dict()
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _parse_scenario(node, path: str) -> ScenarioSpec:
    r = _Reader(node, path)
    name = r.get("name", str, required=True)
    n = r.get("n", int, 500)
    regime = r.choice("error_regime", REGIMES + (NOISELESS,), required=True)
    assignment = r.choice("assignment", ASSIGNMENTS, "balanced")
    reps = r.get("reps", int, 1000)
    K = r.get("K", int, DEFAULT_K)
    B = r.get("B", int, DEFAULT_B)
    seed = r.get("master_seed", int, 0)
    estimators = _estimator_list(r, "estimators", ESTIMATORS)
    psi_true = r.get("psi_true", float, 0.75)
    r.reject_unknown()
    if reps < 2:
        r.fail("reps", "need at least 2 replications for the empirical s.d.")
    if K < 2:
        r.fail("K", "need at least 2 folds")
    if B < 2:
        r.fail("B", "need at least 2 partitions")
    if n < 2 * K:
        r.fail("n", f"sample size {n} too small for K={K}")
    if seed < 0:
        r.fail("master_seed", "seeds must be non-negative")
    return ScenarioSpec(name, n, regime, assignment, reps, K, B, seed, estimators, psi_true)


def _parse_simulate(node) -> SimulateConfig:
    r = _Reader(node, "simulate")
    items = r.get("scenarios", list, required=True)
    if not items:
        r.fail("scenarios", "at least one scenario is required")
    scenarios = [_parse_scenario(item, f"simulate.scenarios[{i}]") for i, item in enumerate(items)]
    names = [s.name for s in scenarios]
    if len(set(names)) != len(names):
        r.fail("scenarios", "scenario names must be unique")
    dump = r.get("dump_data", bool, False)
    r.reject_unknown()
    return SimulateConfig(scenarios, dump)


def _parse_analyze(node) -> AnalysisConfig:
    r = _Reader(node, "analyze")
    path = r.get("input", str, required=True)
    outcome = r.get("outcome", str, required=True)
    treatment = r.get("treatment", str, required=True)
    covariates = r.get("covariates", list, required=True)
    if not covariates or not all(isinstance(c, str) for c in covariates):
        r.fail("covariates", "expected a non-empty list of column names")
    if len(set(covariates)) != len(covariates):
        r.fail("covariates", "duplicate column names")
    if outcome == treatment:
        r.fail("treatment", "treatment and outcome must be different columns")
    for role in (outcome, treatment):
        if role in covariates:
            r.fail("covariates", f"column {role!r} already has another role")
    transforms = r.get("transforms", dict, {})
    declared = set(covariates) | {outcome}
    for col, tr in transforms.items():
        if col not in declared:
            r.fail("transforms", f"transform for undeclared column {col!r}")
        if tr not in COLUMN_TRANSFORMS:
            r.fail("transforms", f"unknown transform {tr!r} for {col!r}; expected one of "
                                 f"{', '.join(COLUMN_TRANSFORMS)}")
    terms = r.get("mean_model", list, None)
    if terms is None:
        terms = [{"kind": "intercept"}, {"kind": "treatment"}] + [
            {"kind": "main", "column": c} for c in covariates]
    normalized = []
    for t in terms:
        try:
            term = Term.from_dict(t)
        except (SpecificationError, TypeError, AttributeError) as exc:
            r.fail("mean_model", str(exc))
        normalized.append(term.to_dict())
    try:
        MeanModelSpec.from_terms([Term.from_dict(t) for t in normalized], covariates)
    except SpecificationError as exc:
        r.fail("mean_model", str(exc))
    estimators = _estimator_list(r, "estimators", ESTIMATORS)
    K = r.get("K", int, DEFAULT_K)
    B = r.get("B", int, DEFAULT_B)
    seed = r.get("seed", int, 0)
    reruns = r.get("reruns", int, DEFAULT_RERUNS)
    r.reject_unknown()
    if K < 2:
        r.fail("K", "need at least 2 folds")
    if B < 2:
        r.fail("B", "need at least 2 partitions")
    if reruns < 1:
        r.fail("reruns", "need at least one run")
    if seed < 0:
        r.fail("seed", "seeds must be non-negative")
    return AnalysisConfig(path, outcome, treatment, list(covariates), dict(transforms), normalized,
                          estimators, K, B, seed, reruns)


def loads(text: str) -> RunConfig:
    try:
        root = _located_loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", None, exc.lineno) from exc
    r = _Reader(root, "")
    sim = r.get("simulate", dict, None)
    ana = r.get("analyze", dict, None)
    r.reject_unknown()
    if sim is None and ana is None:
        raise ConfigError("config needs a 'simulate' or 'analyze' section", None, 1)
    return RunConfig(_parse_simulate(sim) if sim is not None else None,
                     _parse_analyze(ana) if ana is not None else None)


def load(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return loads(text)


def parse_dict(data: Any) -> RunConfig:
    return loads(json.dumps(data))
