"""Datasets and linear-in-parameters mean models ``m(a, w; beta) = sum_j beta_j phi_j(a, w)``.

Feature maps are vectorised callables ``phi(a, W) -> array`` taking a length-n
treatment vector and an ``n x p`` covariate matrix. The scalar helpers
(:func:`eval_mean`, :func:`eval_gradient`, ...) accept either one observation
(``w`` 1-D) or a batch (``w`` 2-D) and return matching shapes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .exceptions import InsufficientDataError, SingularDesignError, SpecificationError

FeatureMap = Callable[[np.ndarray, np.ndarray], np.ndarray]

RANK_TOL = 1e-10

BASIS_TRANSFORMS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x,
    "asinh": np.arcsinh,
    "log1p": np.log1p,
    "square": np.square,
    "sin": np.sin,
    "cos": np.cos,
}

TERM_KINDS = ("intercept", "treatment", "main", "interaction", "transform")


@dataclass(frozen=True)
class Dataset:
    """Observations ``(W, A, Y)``.

    ``W`` is ``n x p``, ``A`` is binary and ``Y`` finite. ``columns`` names the
    covariates in ``W`` order.
    """

    W: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        A = np.asarray(self.A)
        Y = np.asarray(self.Y, dtype=float)
        n = W.shape[0]
        if n < 1:
            raise InsufficientDataError("dataset must contain at least one row")
        if A.shape != (n,) or Y.shape != (n,):
            raise SpecificationError(
                f"W has {n} rows but A has shape {A.shape} and Y has shape {Y.shape}"
            )
        if not np.all((A == 0) | (A == 1)):
            raise SpecificationError("treatment must be coded 0/1")
        if not np.all(np.isfinite(Y)):
            raise SpecificationError("outcome contains non-finite values")
        if not np.all(np.isfinite(W)):
            raise SpecificationError("covariates contain non-finite values")
        columns = tuple(self.columns) or tuple(f"W{j + 1}" for j in range(W.shape[1]))
        if len(columns) != W.shape[1]:
            raise SpecificationError(
                f"{len(columns)} column names for {W.shape[1]} covariates"
            )
        A = A.astype(np.int8)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "columns", columns)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.W[index], self.A[index], self.Y[index], self.columns)


@dataclass(frozen=True)
class Term:
    """One declarative basis term over named covariate columns.

    ``kind`` is one of ``intercept``, ``treatment``, ``main`` (column),
    ``interaction`` (treatment times column) or ``transform`` (a fixed
    transform of a column). ``main`` and ``interaction`` accept an optional
    ``transform`` too.
    """

    kind: str
    column: Optional[str] = None
    transform: Optional[str] = None

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise SpecificationError(f"unknown term kind {self.kind!r}")
        needs_column = self.kind in ("main", "interaction", "transform")
        if needs_column and not self.column:
            raise SpecificationError(f"term kind {self.kind!r} requires a column")
        if not needs_column and self.column is not None:
            raise SpecificationError(f"term kind {self.kind!r} takes no column")
        if self.kind == "transform" and self.transform is None:
            raise SpecificationError("transform term requires a transform name")
        if self.transform is not None and self.transform not in BASIS_TRANSFORMS:
            raise SpecificationError(f"unknown basis transform {self.transform!r}")

    @property
    def label(self) -> str:
        if self.kind == "intercept":
            return "(Intercept)"
        if self.kind == "treatment":
            return "A"
        col = self.column
        if self.transform not in (None, "identity"):
            col = f"{self.transform}({col})"
        return f"A:{col}" if self.kind == "interaction" else col

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.column is not None:
            out["column"] = self.column
        if self.transform is not None:
            out["transform"] = self.transform
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Term":
        unknown = set(d) - {"kind", "column", "transform"}
        if unknown:
            raise SpecificationError(f"unknown term fields {sorted(unknown)}")
        return cls(d.get("kind"), d.get("column"), d.get("transform"))


def _term_feature(term: Term, columns: Sequence[str]) -> FeatureMap:
    if term.kind == "intercept":
        return lambda a, W: np.ones(W.shape[0])
    if term.kind == "treatment":
        return lambda a, W: np.asarray(a, dtype=float) * np.ones(W.shape[0])
    if term.column not in columns:
        raise SpecificationError(f"term {term.label!r} references unknown column {term.column!r}")
    j = list(columns).index(term.column)
    fn = BASIS_TRANSFORMS[term.transform or "identity"]
    if term.kind == "interaction":
        return lambda a, W: np.asarray(a, dtype=float) * fn(W[:, j])
    return lambda a, W: fn(W[:, j])


@dataclass(frozen=True)
class MeanModelSpec:
    """Ordered basis ``phi_1..phi_k`` over ``({0,1}, R^p)``.

    Build from declarative :class:`Term` lists with :meth:`from_terms`, or pass
    arbitrary feature callables directly (``terms`` is then ``None`` and the
    spec does not round-trip through configuration files).
    """

    features: tuple[FeatureMap, ...]
    labels: tuple[str, ...]
    p: int
    terms: Optional[tuple[Term, ...]] = field(default=None, compare=False)
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.features) < 1:
            raise SpecificationError("mean model needs at least one basis term")
        if len(self.features) != len(self.labels):
            raise SpecificationError("features and labels differ in length")

    @classmethod
    def from_terms(cls, terms: Sequence[Term | dict], columns: Sequence[str]) -> "MeanModelSpec":
        terms = tuple(t if isinstance(t, Term) else Term.from_dict(t) for t in terms)
        feats = tuple(_term_feature(t, columns) for t in terms)
        return cls(feats, tuple(t.label for t in terms), len(columns), terms, tuple(columns))

    @property
    def k(self) -> int:
        return len(self.features)

    def design(self, a, W) -> np.ndarray:
        """Return the ``n x k`` basis matrix for treatments ``a`` and covariates ``W``."""
        W = np.asarray(W, dtype=float)
        if W.ndim != 2 or W.shape[1] != self.p:
            raise SpecificationError(f"expected covariates with {self.p} columns, got shape {W.shape}")
        a = np.broadcast_to(np.asarray(a, dtype=float), (W.shape[0],))
        return np.column_stack([f(a, W) for f in self.features])

    def contrast_design(self, W) -> np.ndarray:
        """Rows ``phi(1, w) - phi(0, w)``."""
        W = np.asarray(W, dtype=float)
        return self.design(np.ones(W.shape[0]), W) - self.design(np.zeros(W.shape[0]), W)

    def to_dict(self) -> dict:
        if self.terms is None:
            raise SpecificationError("spec built from raw feature maps has no declarative form")
        return {"columns": list(self.columns), "terms": [t.to_dict() for t in self.terms]}


def linear_example_spec() -> MeanModelSpec:
    """Scalar-covariate model ``b0 + b1 a + b2 w + b3 a w``."""
    return MeanModelSpec.from_terms(
        [Term("intercept"), Term("treatment"), Term("main", "w"), Term("interaction", "w")], ["w"]
    )


def simulation_spec() -> MeanModelSpec:
    """Working model of the simulation study: main effects of W1..W4 plus A*W1 and A*W3."""
    cols = ["W1", "W2", "W3", "W4"]
    terms = [Term("intercept"), Term("treatment")] + [Term("main", c) for c in cols]
    terms += [Term("interaction", "W1"), Term("interaction", "W3")]
    return MeanModelSpec.from_terms(terms, cols)


@dataclass(frozen=True)
class BetaEstimate:
    beta: np.ndarray
    source: str = "initial-ols"
    fold_id: Optional[int] = None

    def __post_init__(self):
        if self.source not in ("initial-ols", "targeted"):
            raise SpecificationError(f"unknown beta source {self.source!r}")
        if not np.all(np.isfinite(self.beta)):
            raise SpecificationError("beta contains non-finite entries")


def _batch(w, p):
    w = np.asarray(w, dtype=float)
    if w.ndim == 1:
        if w.shape[0] != p:
            raise SpecificationError(f"covariate vector has length {w.shape[0]}, expected {p}")
        return w[None, :], True
    return w, False


def _check_beta(spec, beta):
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.k,):
        raise SpecificationError(f"beta has shape {beta.shape}, model has {spec.k} terms")
    return beta


def eval_mean(spec: MeanModelSpec, beta, a, w):
    beta = _check_beta(spec, beta)
    W, single = _batch(w, spec.p)
    out = spec.design(a, W) @ beta
    return float(out[0]) if single else out


def eval_gradient(spec: MeanModelSpec, a, w):
    W, single = _batch(w, spec.p)
    X = spec.design(a, W)
    return X[0] if single else X


def eval_contrast(spec: MeanModelSpec, beta, w):
    beta = _check_beta(spec, beta)
    W, single = _batch(w, spec.p)
    out = spec.contrast_design(W) @ beta
    return float(out[0]) if single else out


def contrast_gradient(spec: MeanModelSpec, w):
    W, single = _batch(w, spec.p)
    D = spec.contrast_design(W)
    return D[0] if single else D


def _rank_check(X: np.ndarray, labels: Sequence[str]) -> None:
    s = np.linalg.svd(X, compute_uv=False)
    rank = int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0
    if rank < X.shape[1]:
        _, _, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
        bad = [labels[j] for j in sorted(piv[rank:])]
        raise SingularDesignError(
            f"design matrix has rank {rank} < {X.shape[1]}; dependent columns: {', '.join(bad)}",
            bad,
        )


def ols_solve(X: np.ndarray, y: np.ndarray, labels: Sequence[str]):
    """Least squares by QR after an SVD rank check; returns ``(beta, R)``."""
    n, k = X.shape
    if n < k:
        raise InsufficientDataError(f"{n} observations for {k} coefficients")
    _rank_check(X, labels)
    Q, R = np.linalg.qr(X)
    beta = scipy.linalg.solve_triangular(R, Q.T @ y)
    return beta, R


def fit_ols(spec: MeanModelSpec, data: Dataset, fold_id: Optional[int] = None) -> BetaEstimate:
    X = spec.design(data.A, data.W)
    beta, _ = ols_solve(X, data.Y, spec.labels)
    return BetaEstimate(beta, "initial-ols", fold_id)
