"""Regression predictors: OLS (segment models) and k-NN (a nonlinear full model).

Every predictor exposes ``m`` and a batched ``predict(X)`` on an ``(n, m)``
array. Anything with that shape can be used as the deployed model, so
black-box regressors plug in without being wrapped here.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy import linalg

from drifter.data import Dataset


class FitError(RuntimeError):
    pass


class Predictor(Protocol):
    m: int

    def predict(self, X: np.ndarray) -> np.ndarray: ...


class ModelKind(str, enum.Enum):
    OLS = "ols"
    KNN = "knn"


@dataclass(frozen=True)
class TrainerSpec:
    kind: ModelKind = ModelKind.OLS
    knn_neighbors: int = 5
    ridge_fallback: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.knn_neighbors < 1:
            raise ValueError("knn_neighbors must be >= 1")
        if self.ridge_fallback < 0:
            raise ValueError("ridge_fallback must be nonnegative")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "knn_neighbors": self.knn_neighbors,
                "ridge_fallback": self.ridge_fallback}

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainerSpec":
        return cls(ModelKind(payload["kind"]), int(payload.get("knn_neighbors", 5)),
                   float(payload.get("ridge_fallback", 1e-8)))


def _as_matrix(X, m: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != m:
        raise ValueError(f"dimension mismatch: model expects m={m}, got {X.shape[1]}")
    return X


@dataclass(frozen=True, eq=False)
class OLSModel:
    """Linear model ``coef[0] + coef[1:] @ x``."""

    coef: np.ndarray
    ridge_used: bool = False

    def __post_init__(self):
        coef = np.array(self.coef, dtype=np.float64).reshape(-1)
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    @property
    def kind(self) -> ModelKind:
        return ModelKind.OLS

    @property
    def m(self) -> int:
        return self.coef.shape[0] - 1

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.m)
        return X @ self.coef[1:] + self.coef[0]

    def to_dict(self) -> dict:
        return {"kind": "ols", "coef": [float(c) for c in self.coef]}


@dataclass(frozen=True, eq=False)
class KNNModel:
    """Mean response of the ``k`` nearest stored samples (Euclidean).

    Samples are stored in time order and ranked with a stable sort, so
    distance ties go to the lower time index.
    """

    X: np.ndarray
    y: np.ndarray
    k: int
    index: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        index = np.arange(1, X.shape[0] + 1) if self.index is None else np.array(self.index, dtype=np.int64)
        order = np.argsort(index, kind="stable")
        X, y, index = X[order], y[order], index[order]
        for arr in (X, y, index):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "index", index)

    @property
    def kind(self) -> ModelKind:
        return ModelKind.KNN

    @property
    def m(self) -> int:
        return self.X.shape[1]

    def predict(self, X) -> np.ndarray:
        Q = _as_matrix(X, self.m)
        k = min(self.k, self.X.shape[0])
        out = np.empty(Q.shape[0])
        # bound the (chunk, n_ref, m) difference tensor to ~4M floats
        chunk = max(1, 4_000_000 // max(1, self.X.shape[0] * self.m))
        for lo in range(0, Q.shape[0], chunk):
            q = Q[lo:lo + chunk]
            d2 = ((q[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
            out[lo:lo + chunk] = self.y[nearest].mean(axis=1)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "knn",
            "k": int(self.k),
            "index": [int(i) for i in self.index],
            "X": [[float(v) for v in row] for row in self.X],
            "y": [float(v) for v in self.y],
        }


class ExternalPredictions:
    """Deployed-model outputs supplied as a table of precomputed predictions.

    Lookup is by exact covariate row; asking for a row that was never
    supplied is an error.
    """

    kind = "external"

    def __init__(self, X, predictions):
        X = np.asarray(X, dtype=np.float64)
        predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
        if X.shape[0] != predictions.shape[0]:
            raise ValueError("one prediction per covariate row is required")
        self.m = X.shape[1]
        self._table: dict[bytes, float] = {}
        for row, p in zip(X, predictions):
            self._table[np.ascontiguousarray(row).tobytes()] = float(p)

    def extend(self, X, predictions) -> "ExternalPredictions":
        other = ExternalPredictions(X, predictions)
        if other.m != self.m:
            raise ValueError("dimension mismatch")
        self._table.update(other._table)
        return self

    def predict(self, X) -> np.ndarray:
        X = _as_matrix(X, self.m)
        try:
            return np.array([self._table[np.ascontiguousarray(r).tobytes()] for r in X])
        except KeyError:
            raise KeyError("no external prediction supplied for a requested covariate row") from None

    def to_dict(self) -> dict:
        return {"kind": "external", "m": self.m}


def _spd_solve(G: np.ndarray, b: np.ndarray) -> np.ndarray:
    c, lower = linalg.cho_factor(G, lower=True, check_finite=False)
    diag = np.abs(np.diag(c))
    if diag.min() <= np.sqrt(np.finfo(float).eps * G.shape[0]) * diag.max():
        raise np.linalg.LinAlgError("Gram matrix numerically singular")
    return linalg.cho_solve((c, lower), b, check_finite=False)


def fit_ols(X, y, ridge_fallback: float = 1e-8) -> OLSModel:
    """Least squares with intercept via normal equations and Cholesky.

    When the Gram matrix is singular the ridge term ``ridge_fallback * I`` is
    added; with ``ridge_fallback == 0`` a singular problem raises
    ``np.linalg.LinAlgError``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = X.shape[0]
    if n == 0:
        raise FitError("cannot fit on an empty dataset")
    X1 = np.empty((n, X.shape[1] + 1))
    X1[:, 0] = 1.0
    X1[:, 1:] = X
    G = X1.T @ X1
    b = X1.T @ y
    if n >= X1.shape[1]:
        try:
            return OLSModel(_spd_solve(G, b))
        except np.linalg.LinAlgError:
            if ridge_fallback == 0:
                raise
    elif ridge_fallback == 0:
        raise np.linalg.LinAlgError(f"{n} samples cannot determine {X1.shape[1]} coefficients")
    G = G + ridge_fallback * np.eye(G.shape[0])
    c = linalg.cho_factor(G, lower=True, check_finite=False)
    return OLSModel(linalg.cho_solve(c, b, check_finite=False), ridge_used=True)


def fit(spec: TrainerSpec, d: Dataset):
    """Fit the model family named by ``spec`` on a dataset with responses."""
    if d.n == 0:
        raise FitError("cannot fit on an empty dataset")
    if not d.has_response:
        raise FitError("dataset has no responses to fit")
    if spec.kind is ModelKind.OLS:
        return fit_ols(d.X, d.y, spec.ridge_fallback)
    return KNNModel(d.X.copy(), d.y.copy(), spec.knn_neighbors, d.index.copy())


def predict(model: Predictor, x) -> float:
    """Point prediction for a single covariate vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.m:
        raise ValueError(f"dimension mismatch: model expects m={model.m}, got {x.shape[0]}")
    return float(model.predict(x.reshape(1, -1))[0])


def model_to_dict(model) -> dict:
    if hasattr(model, "to_dict"):
        return model.to_dict()
    # arbitrary black-box predictor: only its presence is recorded
    return {"kind": "external", "m": int(model.m)}


def model_from_dict(payload: dict):
    kind = payload["kind"]
    if kind == "ols":
        return OLSModel(np.array(payload["coef"], dtype=np.float64))
    if kind == "knn":
        return KNNModel(np.array(payload["X"], dtype=np.float64).reshape(len(payload["y"]), -1),
                        np.array(payload["y"]), int(payload["k"]), np.array(payload["index"]))
    if kind == "external":
        return None
    raise ValueError(f"unknown model kind {kind!r}")
