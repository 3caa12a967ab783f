import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sptmle.design import (
    Dataset,
    MeanModelSpec,
    Term,
    contrast_gradient,
    eval_contrast,
    eval_gradient,
    eval_mean,
    fit_ols,
    linear_example_spec,
    simulation_spec,
)
from sptmle.exceptions import SingularDesignError, SpecificationError

SIM_BETA = np.array([0, 1, 0.8, -0.6, 0.5, 0.4, 0.7, -0.5])

finite = st.floats(-50, 50, allow_nan=False)


def test_eval_mean_examples():
    lin = linear_example_spec()
    assert eval_mean(lin, [0, 1, 0, 0], 1, [0.3]) == 1.0
    # hand substitution: beta_2 * W1 = 0.8
    assert eval_mean(simulation_spec(), SIM_BETA, 0, [1, 0, 0, 0]) == pytest.approx(0.8, abs=1e-15)
    assert eval_mean(simulation_spec(), np.zeros(8), 1, [0.3, -2, 1, 0.5]) == 0.0


def test_eval_mean_dimension_mismatch():
    with pytest.raises(SpecificationError):
        eval_mean(linear_example_spec(), [0, 1, 0], 1, [0.3])
    with pytest.raises(SpecificationError):
        eval_mean(linear_example_spec(), [0, 1, 0, 0], 1, [0.3, 1.0])


def test_eval_gradient_examples():
    lin = linear_example_spec()
    np.testing.assert_array_equal(eval_gradient(lin, 1, [2.0]), [1, 1, 2, 2])
    np.testing.assert_array_equal(eval_gradient(lin, 0, [0.0]), [1, 0, 0, 0])


def test_gradient_matches_finite_difference():
    spec = simulation_spec()
    w = np.array([0.3, -1.2, 1.0, 0.4])
    beta = SIM_BETA.copy()
    h = 0.5
    g = eval_gradient(spec, 1, w)
    for j in range(spec.k):
        e = np.zeros(spec.k)
        e[j] = h
        fd = (eval_mean(spec, beta + e, 1, w) - eval_mean(spec, beta, 1, w)) / h
        assert fd == pytest.approx(g[j], abs=1e-12)


def test_eval_contrast_examples():
    lin = linear_example_spec()
    assert eval_contrast(lin, [0, 1, 0, 0.5], [2.0]) == pytest.approx(2.0)
    no_treat = MeanModelSpec.from_terms([Term("intercept"), Term("main", "w")], ["w"])
    assert eval_contrast(no_treat, [1.0, 2.0], [3.7]) == 0.0
    w = [0.0, 0.0, 0.0, 0.0]
    spec = simulation_spec()
    assert eval_contrast(spec, SIM_BETA, w) == pytest.approx(1.0)
    assert eval_contrast(spec, SIM_BETA, w) == pytest.approx(
        eval_mean(spec, SIM_BETA, 1, w) - eval_mean(spec, SIM_BETA, 0, w))


def test_contrast_gradient_examples():
    lin = linear_example_spec()
    np.testing.assert_array_equal(contrast_gradient(lin, [1.7]), [0, 1, 0, 1.7])
    # at w = E(W) this is the published gradient (0, 1, 0, E W)
    W = np.random.default_rng(0).normal(0.4, 1.0, size=(50, 1))
    np.testing.assert_allclose(contrast_gradient(lin, W).mean(axis=0), [0, 1, 0, W.mean()])
    no_treat = MeanModelSpec.from_terms([Term("intercept"), Term("main", "w")], ["w"])
    np.testing.assert_array_equal(contrast_gradient(no_treat, [2.0]), [0, 0])
    w = np.array([0.3, -0.2, 1.0, 0.9])
    spec = simulation_spec()
    expected = eval_gradient(spec, 1, w) - eval_gradient(spec, 0, w)
    np.testing.assert_array_equal(contrast_gradient(spec, w), expected)
    np.testing.assert_array_equal(expected, [0, 1, 0, 0, 0, 0, 0.3, 1.0])


def test_batch_and_single_agree():
    spec = simulation_spec()
    W = np.random.default_rng(1).normal(size=(5, 4))
    batch = eval_mean(spec, SIM_BETA, 1, W)
    single = [eval_mean(spec, SIM_BETA, 1, w) for w in W]
    np.testing.assert_allclose(batch, single)


@settings(max_examples=50, deadline=None)
@given(alpha=finite, b1=st.lists(finite, min_size=4, max_size=4),
       b2=st.lists(finite, min_size=4, max_size=4), a=st.sampled_from([0, 1]), w=finite)
def test_mean_is_linear_in_beta(alpha, b1, b2, a, w):
    lin = linear_example_spec()
    b1, b2 = np.array(b1), np.array(b2)
    lhs = eval_mean(lin, alpha * b1 + b2, a, [w])
    rhs = alpha * eval_mean(lin, b1, a, [w]) + eval_mean(lin, b2, a, [w])
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(h=st.floats(-5, 5), d=st.lists(finite, min_size=8, max_size=8),
       w=st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_contrast_gradient_consistency(h, d, w):
    spec = simulation_spec()
    d = np.array(d)
    lhs = eval_contrast(spec, SIM_BETA + h * d, w) - eval_contrast(spec, SIM_BETA, w)
    rhs = h * contrast_gradient(spec, w) @ d
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_fit_ols_noiseless_recovery():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(60, 4))
    A = rng.integers(0, 2, 60)
    spec = simulation_spec()
    Y = spec.design(A, W) @ SIM_BETA
    est = fit_ols(spec, Dataset(W, A, Y))
    np.testing.assert_allclose(est.beta, SIM_BETA, atol=1e-8)
    assert est.source == "initial-ols"


def test_fit_ols_two_point():
    spec = MeanModelSpec.from_terms([Term("intercept"), Term("treatment")], ["w"])
    data = Dataset(np.zeros((2, 1)), [0, 1], [0.0, 1.0])
    np.testing.assert_allclose(fit_ols(spec, data).beta, [0.0, 1.0], atol=1e-12)


def test_fit_ols_duplicated_column_names_offender():
    spec = MeanModelSpec.from_terms(
        [Term("intercept"), Term("treatment"), Term("main", "w"), Term("transform", "w", "identity")],
        ["w"])
    rng = np.random.default_rng(3)
    data = Dataset(rng.normal(size=(30, 1)), rng.integers(0, 2, 30), rng.normal(size=30))
    with pytest.raises(SingularDesignError) as info:
        fit_ols(spec, data)
    assert set(info.value.columns) <= {"w"}
    assert info.value.columns


def test_fit_ols_orthogonality():
    rng = np.random.default_rng(4)
    W = rng.normal(size=(400, 4))
    A = rng.integers(0, 2, 400)
    spec = simulation_spec()
    Y = 100 * (spec.design(A, W) @ SIM_BETA + rng.standard_t(3, 400))
    est = fit_ols(spec, Dataset(W, A, Y))
    X = spec.design(A, W)
    e = Y - X @ est.beta
    assert np.max(np.abs(X.T @ e / len(Y))) <= 1e-8 * np.std(Y)


def test_dataset_validation():
    with pytest.raises(SpecificationError):
        Dataset(np.zeros((3, 1)), [0, 2, 1], [0.0, 1.0, 2.0])
    with pytest.raises(SpecificationError):
        Dataset(np.zeros((3, 1)), [0, 1, 1], [0.0, np.nan, 2.0])
    with pytest.raises(SpecificationError):
        Dataset(np.zeros((3, 2)), [0, 1, 1], [0.0, 1.0, 2.0], columns=("a",))
    d = Dataset(np.zeros((3, 1)), [0, 1, 1], [0.0, 1.0, 2.0])
    assert (d.n, d.p, d.columns) == (3, 1, ("W1",))


def test_terms_round_trip_and_labels():
    spec = MeanModelSpec.from_terms(
        [{"kind": "intercept"}, {"kind": "treatment"}, {"kind": "main", "column": "age"},
         {"kind": "transform", "column": "re74", "transform": "asinh"},
         {"kind": "interaction", "column": "re74", "transform": "asinh"}],
        ["age", "re74"])
    assert spec.labels == ("(Intercept)", "A", "age", "asinh(re74)", "A:asinh(re74)")
    again = MeanModelSpec.from_terms(spec.to_dict()["terms"], spec.to_dict()["columns"])
    assert again.to_dict() == spec.to_dict()
    X = spec.design([1], [[30.0, 0.0]])
    np.testing.assert_array_equal(X, [[1, 1, 30, 0, 0]])


def test_bad_terms():
    with pytest.raises(SpecificationError):
        Term("bogus")
    with pytest.raises(SpecificationError):
        Term("main")
    with pytest.raises(SpecificationError):
        Term("transform", "x", "tan")
    with pytest.raises(SpecificationError):
        MeanModelSpec.from_terms([Term("main", "nope")], ["x"])
