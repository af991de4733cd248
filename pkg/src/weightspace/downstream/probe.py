"""Ridge linear probes on center-of-gravity embeddings."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import ConfigError, ContractError

PROBE_TARGETS = ("test_accuracy", "generalization_gap")


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination; 0 by convention when the target is constant."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        warnings.warn("constant regression target; R^2 reported as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


class LinearProbe(RegressorMixin, BaseEstimator):
    """Ridge regression with an unpenalized intercept.

    Minimizes ``||y - X w - b||^2 + alpha ||w||^2``. The solve is a least-squares
    problem on the centered data stacked over ``sqrt(alpha) I``.
    """

    def __init__(self, alpha: float = 1e-3):
        self.alpha = alpha

    def fit(self, X, y):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.x_mean_ = X.mean(axis=0)
        self.y_mean_ = float(y.mean())
        Xc, yc = X - self.x_mean_, y - self.y_mean_
        self.zero_variance_features_ = np.flatnonzero(np.all(Xc == 0.0, axis=0))
        if self.zero_variance_features_.size:
            warnings.warn(f"{self.zero_variance_features_.size} probe feature(s) have zero variance",
                          RuntimeWarning, stacklevel=2)
        d = X.shape[1]
        A = np.vstack([Xc, np.sqrt(self.alpha) * np.eye(d)])
        b = np.concatenate([yc, np.zeros(d)])
        self.coef_ = np.linalg.lstsq(A, b, rcond=None)[0]
        self.intercept_ = self.y_mean_ - float(self.x_mean_ @ self.coef_)
        self.n_features_in_ = d
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"probe was fitted on {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def score(self, X, y, sample_weight=None) -> float:
        return r2_score(y, self.predict(X))


@dataclass
class ProbeResult:
    target: str
    r2_train: float
    r2_test: float
    coef: np.ndarray
    intercept: float
    n_train: int
    n_test: int

    def to_dict(self) -> dict:
        return {"target": self.target, "r2_train": self.r2_train, "r2_test": self.r2_test,
                "n_train": self.n_train, "n_test": self.n_test}


def probe_targets(checkpoints, target: str) -> np.ndarray:
    if target not in PROBE_TARGETS:
        raise ConfigError(f"unknown probe target {target!r}; expected one of {PROBE_TARGETS}")
    if target == "test_accuracy":
        return np.array([ck.test_accuracy for ck in checkpoints], dtype=np.float64)
    return np.array([ck.generalization_gap for ck in checkpoints], dtype=np.float64)


def probe(zoo, ae, target: str = "test_accuracy", alpha: float = 1e-3) -> ProbeResult:
    """Fit on the train split's checkpoints, report R^2 on the test split's."""
    train, test = zoo.select("train"), zoo.select("test")
    if not train or not test:
        raise ContractError("probing needs non-empty train and test splits")
    y_tr, y_te = probe_targets(train, target), probe_targets(test, target)
    f_tr = ae.embed(np.stack([ck.theta for ck in train])).astype(np.float64)
    f_te = ae.embed(np.stack([ck.theta for ck in test])).astype(np.float64)
    lp = LinearProbe(alpha=alpha).fit(f_tr, y_tr)
    return ProbeResult(target, lp.score(f_tr, y_tr), lp.score(f_te, y_te), lp.coef_.copy(), lp.intercept_,
                       len(train), len(test))
