import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sptmle import config
from sptmle.exceptions import ConfigError
from sptmle.simlab import ASSIGNMENTS, ESTIMATORS, REGIMES

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"

BAD_REGIME = """{
  "simulate": {
    "scenarios": [
      {"name": "ok", "error_regime": "gaussian", "reps": 10},
      {"name": "bad",
       "error_regime": "cauchy",
       "reps": 10}
    ]
  }
}
"""


def test_bad_regime_is_line_anchored():
    with pytest.raises(ConfigError) as info:
        config.loads(BAD_REGIME)
    err = info.value
    assert err.field == "simulate.scenarios[1].error_regime"
    assert err.line == 6
    assert "cauchy" in str(err) and "(line 6)" in str(err)


@pytest.mark.parametrize("text, field", [
    ('{"simulate": {"scenarios": [{"name": "a", "error_regime": "gaussian", "reps": 1}]}}',
     "simulate.scenarios[0].reps"),
    ('{"simulate": {"scenarios": [{"name": "a", "error_regime": "gaussian", "n": "500"}]}}',
     "simulate.scenarios[0].n"),
    ('{"simulate": {"scenarios": [{"name": "a", "error_regime": "gaussian", "colour": 1}]}}',
     "simulate.scenarios[0].colour"),
    ('{"simulate": {"scenarios": [{"error_regime": "gaussian"}]}}', "simulate.scenarios[0].name"),
    ('{"analyze": {"input": "x.csv", "outcome": "y", "treatment": "y", "covariates": ["w"]}}',
     "analyze.treatment"),
    ('{"analyze": {"input": "x.csv", "outcome": "y", "treatment": "a", "covariates": ["w"], '
     '"mean_model": [{"kind": "main", "column": "z"}]}}', "analyze.mean_model"),
    ('{"analyze": {"input": "x.csv", "outcome": "y", "treatment": "a", "covariates": ["w"], '
     '"transforms": {"w": "cube"}}}', "analyze.transforms"),
    ('{"analyze": {"input": "x.csv", "outcome": "y", "treatment": "a", "covariates": ["w"], '
     '"estimators": ["bart"]}}', "analyze.estimators"),
])
def test_invalid_fields_named(text, field):
    with pytest.raises(ConfigError) as info:
        config.loads(text)
    assert info.value.field == field


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        config.loads('{\n  "simulate": {\n    "scenarios": [,]\n  }\n}')
    assert info.value.line == 3


def test_empty_config_rejected():
    with pytest.raises(ConfigError):
        config.loads("{}")


def test_default_mean_model():
    cfg = config.loads('{"analyze": {"input": "x.csv", "outcome": "y", "treatment": "a", '
                       '"covariates": ["w1", "w2"]}}').analyze
    assert cfg.model_spec().labels == ("(Intercept)", "A", "w1", "w2")
    assert cfg.estimators == ESTIMATORS
    assert (cfg.K, cfg.B, cfg.reruns) == (5, 20, 20)


scenario_st = st.fixed_dictionaries({
    "name": st.text("abcdef", min_size=1, max_size=6),
    "error_regime": st.sampled_from(REGIMES),
    "assignment": st.sampled_from(ASSIGNMENTS),
    "n": st.integers(10, 2000),
    "reps": st.integers(2, 5000),
    "B": st.integers(2, 40),
    "master_seed": st.integers(0, 2 ** 63 - 1),
    "estimators": st.lists(st.sampled_from(ESTIMATORS), min_size=1, max_size=3, unique=True),
})


@settings(max_examples=60, deadline=None)
@given(sc=scenario_st)
def test_round_trip_identity(sc):
    first = config.parse_dict({"simulate": {"scenarios": [sc]}})
    text = first.dumps()
    second = config.loads(text)
    assert second.to_dict() == first.to_dict()
    assert second.dumps() == text


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.json")))
def test_shipped_configs_round_trip(name):
    cfg = config.load(CONFIG_DIR / name)
    assert config.loads(cfg.dumps()).to_dict() == cfg.to_dict()


def test_grid_configs_shape():
    t1 = config.load(CONFIG_DIR / "balanced.json").simulate
    assert len(t1.scenarios) == 4
    assert sum(len(s.estimators) for s in t1.scenarios) == 12
    assert {s.error_regime for s in t1.scenarios} == set(REGIMES)
    assert all(s.n == 500 and s.reps == 1000 and s.K == 5 and s.B == 20 for s in t1.scenarios)
    t2 = config.load(CONFIG_DIR / "imbalanced.json").simulate
    assert {s.assignment for s in t2.scenarios} == {"imbalanced"}


def test_nsw_config_model():
    cfg = config.load(CONFIG_DIR / "nsw.json").analyze
    labels = cfg.model_spec().labels
    assert labels[-2:] == ("A:re74", "A:re75")
    assert cfg.transforms == {"re78": "asinh", "re74": "asinh", "re75": "asinh"}
    assert json.loads(config.RunConfig(analyze=cfg).dumps())["analyze"]["B"] == 20
