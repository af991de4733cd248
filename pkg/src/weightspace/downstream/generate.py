"""Sampling new models: anchors -> PCA -> per-coordinate KDE -> decode."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigError, ContractError, ShapeError


def scott_bandwidth(values: np.ndarray) -> np.ndarray:
    """Per-column Scott bandwidth sigma * m^(-1/5) with the unbiased std."""
    m = values.shape[0]
    return values.std(axis=0, ddof=1) * m ** (-0.2)


class LatentKDEGenerator(BaseEstimator):
    """Generative model over flattened per-token latent codes of anchor models.

    Anchors are the models whose accuracy is at least ``accuracy_threshold``
    (or, when that is None, the ``anchor_quantile`` quantile of the given
    accuracies). Their flattened codes are projected onto the top ``q``
    principal directions, with ``q = min(n_components, n_anchors - 1, dim)``,
    and every coordinate gets an independent 1-D Gaussian KDE.
    """

    def __init__(self, n_components: int = 32, accuracy_threshold=None, anchor_quantile: float = 0.7,
                 min_anchors: int = 3):
        self.n_components = n_components
        self.accuracy_threshold = accuracy_threshold
        self.anchor_quantile = anchor_quantile
        self.min_anchors = min_anchors

    def fit(self, Z, accuracies, ids=None):
        Z = np.asarray(Z, dtype=np.float64)
        acc = np.asarray(accuracies, dtype=np.float64)
        if Z.ndim < 2 or len(Z) != len(acc):
            raise ShapeError(f"need one accuracy per latent code, got {Z.shape} and {acc.shape}")
        self.code_shape_ = Z.shape[1:]
        flat = Z.reshape(len(Z), -1)
        thr = (float(np.quantile(acc, self.anchor_quantile)) if self.accuracy_threshold is None
               else float(self.accuracy_threshold))
        mask = acc >= thr
        m = int(mask.sum())
        if m < max(self.min_anchors, 3):
            raise ConfigError(f"only {m} anchor model(s) reach accuracy threshold {thr:.4f}; "
                              f"need at least {max(self.min_anchors, 3)} (lower the threshold)")
        self.threshold_ = thr
        self.anchor_index_ = np.flatnonzero(mask)
        self.anchor_ids_ = [ids[i] for i in self.anchor_index_] if ids is not None else list(self.anchor_index_)
        X = flat[mask]
        self.mean_ = X.mean(axis=0)
        q = min(self.n_components, m - 1, X.shape[1])
        _, s, vt = np.linalg.svd(X - self.mean_, full_matrices=False)
        self.components_ = vt[:q]
        self.explained_variance_ = (s[:q] ** 2) / (m - 1)
        self.n_components_ = q
        self.coords_ = (X - self.mean_) @ self.components_.T
        h = scott_bandwidth(self.coords_)
        self.bandwidths_ = np.where(h > 0, h, 1e-12)
        return self

    def project(self, Z) -> np.ndarray:
        check_is_fitted(self, "components_")
        flat = np.asarray(Z, dtype=np.float64).reshape(len(Z), -1)
        return (flat - self.mean_) @ self.components_.T

    def inverse_project(self, U) -> np.ndarray:
        check_is_fitted(self, "components_")
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        return (U @ self.components_ + self.mean_).reshape((len(U),) + tuple(self.code_shape_))

    def sample_coords(self, count: int, seed=None) -> np.ndarray:
        """Each coordinate: a uniformly chosen anchor's value plus N(0, h_d^2) noise."""
        check_is_fitted(self, "coords_")
        if count < 0:
            raise ContractError("count must be non-negative")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        m, q = self.coords_.shape
        pick = rng.integers(0, m, size=(count, q))
        base = self.coords_[pick, np.arange(q)[None, :]]
        return base + rng.normal(size=(count, q)) * self.bandwidths_

    def sample(self, count: int, seed=None) -> np.ndarray:
        """Latent codes shaped like the fitted inputs, (count, num_tokens, embed_dim)."""
        coords = self.sample_coords(count, seed)
        if count == 0:
            return np.zeros((0,) + tuple(self.code_shape_))
        return self.inverse_project(coords)

    def coordinate_density(self, d: int, values) -> np.ndarray:
        """1-D KDE density of PCA coordinate ``d`` at ``values``."""
        check_is_fitted(self, "coords_")
        v = np.asarray(values, dtype=np.float64)
        h = self.bandwidths_[d]
        u = (v[..., None] - self.coords_[:, d]) / h
        return np.exp(-0.5 * u * u).sum(axis=-1) / (len(self.coords_) * h * math.sqrt(2 * math.pi))

    def density(self, U) -> np.ndarray:
        """Product of the per-coordinate densities at PCA coordinates ``U`` (n, q)."""
        U = np.atleast_2d(np.asarray(U, dtype=np.float64))
        out = np.ones(len(U))
        for d in range(self.n_components_):
            out *= self.coordinate_density(d, U[:, d])
        return out


def generate_models(gen: LatentKDEGenerator, ae, count: int, seed=None) -> np.ndarray:
    """Sample ``count`` latent codes and decode them into (count, p) parameter vectors."""
    if count == 0:
        return np.zeros((0, ae.arch.n_params), dtype=np.float32)
    return ae.inverse_transform(gen.sample(count, seed))


def fit_generator(zoo, ae, accuracy_threshold=None, q: int = 32, anchor_quantile: float = 0.7,
                  split: str = "train") -> LatentKDEGenerator:
    """Fit a generator on the latent codes of ``split`` checkpoints (by test accuracy)."""
    cks = zoo.select(split)
    if not cks:
        raise ContractError(f"zoo split {split!r} is empty")
    Z = ae.transform(np.stack([ck.theta for ck in cks]))
    acc = [ck.test_accuracy for ck in cks]
    ids = [f"{ck.model_id}@{ck.epoch}" for ck in cks]
    return LatentKDEGenerator(q, accuracy_threshold, anchor_quantile).fit(Z, acc, ids)
