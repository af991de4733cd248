"""Training populations of small CNNs ("model zoos") and persisting their checkpoints."""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .._io import atomic_write_text
from ..exceptions import ConfigError, ContractError, MissingArtifactError, ShapeError
from ..tensor import Adam, Tensor, backward, log_softmax, mean, mul, sum_
from .arch import INIT_SCHEMES, ArchitectureSpec, accuracy, build_model, desk_arch, forward_classifier, predict_logits
from .container import read_container, write_container
from .data import Dataset

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ZooHyperparams:
    init_scheme: str
    learning_rate: float
    weight_decay: float
    seed: int

    def __post_init__(self):
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init_scheme!r}")


@dataclass
class ModelCheckpoint:
    model_id: str
    theta: np.ndarray
    arch: ArchitectureSpec
    hyper: Optional[ZooHyperparams]  # None for generated models
    epoch: int
    train_accuracy: float
    test_accuracy: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float32)
        if self.theta.shape != (self.arch.n_params,):
            raise ShapeError(f"checkpoint {self.model_id}: theta length {self.theta.size} "
                             f"!= architecture parameter count {self.arch.n_params}")
        for name in ("train_accuracy", "test_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"checkpoint {self.model_id}: {name}={v} outside [0, 1]")

    @property
    def generalization_gap(self) -> float:
        return self.train_accuracy - self.test_accuracy

    def metadata(self, dataset_fingerprint: str = "") -> dict:
        return {"kind": "checkpoint", "model_id": self.model_id, "arch": self.arch.to_dict(),
                "hyper": asdict(self.hyper) if self.hyper is not None else None, "epoch": self.epoch,
                "train_accuracy": self.train_accuracy, "test_accuracy": self.test_accuracy,
                "dataset_fingerprint": dataset_fingerprint}

    def save(self, path, dataset_fingerprint: str = "") -> None:
        write_container(path, self.metadata(dataset_fingerprint), self.theta)

    @classmethod
    def load(cls, path) -> "ModelCheckpoint":
        meta, theta = read_container(path)
        if meta.get("kind") != "checkpoint":
            raise ShapeError(f"{path}: container kind {meta.get('kind')!r} is not a checkpoint")
        return cls(meta["model_id"], theta, ArchitectureSpec.from_dict(meta["arch"]),
                   ZooHyperparams(**meta["hyper"]) if meta.get("hyper") else None, int(meta["epoch"]),
                   float(meta["train_accuracy"]), float(meta["test_accuracy"]))


def default_checkpoint_epochs(epochs: int) -> List[int]:
    """The last four evenly spaced epochs, e.g. 50 -> [20, 30, 40, 50]."""
    picks = sorted({max(1, int(math.floor(epochs * f + 0.5))) for f in (0.4, 0.6, 0.8, 1.0)})
    return picks


def _cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(y)), y] = 1.0
    return -mean(sum_(mul(log_softmax(logits), onehot), axis=1))


class CNNClassifier(ClassifierMixin, BaseEstimator):
    """One zoo member: a CNN trained with Adam on cross-entropy, batch size 32.

    After ``fit``, ``theta_`` holds the final flat parameters and
    ``checkpoints_`` one :class:`ModelCheckpoint` per requested epoch.
    """

    def __init__(self, arch: Optional[ArchitectureSpec] = None, init_scheme: str = "kaiming_uniform",
                 learning_rate: float = 1e-3, weight_decay: float = 0.0, epochs: int = 12,
                 batch_size: int = 32, checkpoint_epochs: Optional[Sequence[int]] = None,
                 seed: int = 0, model_id: str = "m0"):
        self.arch = arch
        self.init_scheme = init_scheme
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.checkpoint_epochs = checkpoint_epochs
        self.seed = seed
        self.model_id = model_id

    def _resolve_arch(self, X: np.ndarray, y: np.ndarray) -> ArchitectureSpec:
        if self.arch is not None:
            return self.arch
        c, h, w = X.shape[1:]
        return desk_arch(channels=c, side=h, classes=int(y.max()) + 1)

    def fit(self, X, y, X_test=None, y_test=None):
        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 4 or len(X) != len(y):
            raise ShapeError(f"expected X of shape (n, C, H, W) matching y, got {X.shape} and {y.shape}")
        arch = self._resolve_arch(X, y)
        if tuple(X.shape[1:]) != arch.input_shape:
            raise ConfigError(f"dataset images {X.shape[1:]} do not match architecture input {arch.input_shape}")
        if y.max() >= arch.output_dim:
            raise ConfigError(f"labels reach {y.max()} but the architecture has {arch.output_dim} outputs")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        ckpt_epochs = set(self.checkpoint_epochs or [self.epochs])
        hyper = ZooHyperparams(self.init_scheme, float(self.learning_rate), float(self.weight_decay), int(self.seed))

        init_seq, shuffle_seq = np.random.SeedSequence(int(self.seed)).spawn(2)
        theta = Tensor(build_model(arch, self.init_scheme, seed=init_seq), requires_grad=True)
        opt = Adam([theta], lr=self.learning_rate, weight_decay=self.weight_decay)
        rng = np.random.default_rng(shuffle_seq)
        self.checkpoints_: List[ModelCheckpoint] = []
        self.loss_curve_: List[float] = []
        for epoch in range(1, self.epochs + 1):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), self.batch_size):
                idx = order[start:start + self.batch_size]
                loss = _cross_entropy(forward_classifier(theta, arch, X[idx]), y[idx])
                backward(loss)
                opt.step()
                opt.zero_grad()
                total += float(loss.data) * len(idx)
            self.loss_curve_.append(total / len(X))
            if epoch in ckpt_epochs:
                self.checkpoints_.append(ModelCheckpoint(
                    self.model_id, theta.data.copy(), arch, hyper, epoch,
                    accuracy(theta.data, arch, X, y),
                    accuracy(theta.data, arch, X_test, y_test) if X_test is not None else 0.0,
                ))
        self.arch_ = arch
        self.theta_ = theta.data.copy()
        self.classes_ = np.arange(arch.output_dim)
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        return predict_logits(self.theta_, self.arch_, np.asarray(X, dtype=np.float32))

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)


@dataclass
class ZooGrid:
    init_schemes: Sequence[str] = ("uniform", "kaiming_uniform")
    learning_rates: Sequence[float] = (3e-4, 1e-3, 3e-3)
    weight_decays: Sequence[float] = (0.0,)
    seeds: Sequence[int] = (0, 1)

    def cells(self) -> List[ZooHyperparams]:
        return [ZooHyperparams(i, float(lr), float(wd), int(s))
                for i, lr, wd, s in itertools.product(self.init_schemes, self.learning_rates,
                                                      self.weight_decays, self.seeds)]


def assign_splits(model_ids: Sequence[str], proportions=(0.8, 0.05, 0.15), seed: int = 0) -> Dict[str, str]:
    """Seeded shuffle into train/val/test; val and test sizes are rounded half-up."""
    if abs(sum(proportions) - 1.0) > 1e-9 or any(p < 0 for p in proportions):
        raise ConfigError(f"split proportions must be non-negative and sum to 1, got {proportions}")
    n = len(model_ids)
    n_test = int(math.floor(n * proportions[2] + 0.5))
    n_val = int(math.floor(n * proportions[1] + 0.5))
    n_val = min(n_val, n - n_test)
    order = np.random.default_rng(seed).permutation(n)
    out = {}
    for rank, i in enumerate(order):
        if rank < n_test:
            out[model_ids[i]] = "test"
        elif rank < n_test + n_val:
            out[model_ids[i]] = "val"
        else:
            out[model_ids[i]] = "train"
    return out


@dataclass
class Zoo:
    arch: ArchitectureSpec
    checkpoints: Dict[str, List[ModelCheckpoint]]
    splits: Dict[str, str]
    dataset_fingerprint: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if set(self.splits) != set(self.checkpoints):
            raise ContractError("split assignment must cover exactly the zoo's model ids")
        bad = {s for s in self.splits.values() if s not in SPLITS}
        if bad:
            raise ContractError(f"unknown split names {bad}")
        for mid, cks in self.checkpoints.items():
            for ck in cks:
                if ck.arch.n_params != self.arch.n_params:
                    raise ShapeError(f"model {mid} has {ck.arch.n_params} parameters, zoo uses {self.arch.n_params}")

    def model_ids(self, split: Optional[str] = None) -> List[str]:
        ids = sorted(self.checkpoints)
        return ids if split is None else [m for m in ids if self.splits[m] == split]

    def select(self, split: Optional[str] = None, epochs: Optional[Iterable[int]] = None) -> List[ModelCheckpoint]:
        keep = None if epochs is None else set(epochs)
        out = []
        for mid in self.model_ids(split):
            out.extend(ck for ck in self.checkpoints[mid] if keep is None or ck.epoch in keep)
        return out

    def final(self, split: Optional[str] = None) -> List[ModelCheckpoint]:
        return [self.checkpoints[m][-1] for m in self.model_ids(split)]

    def thetas(self, split: Optional[str] = None, epochs=None) -> np.ndarray:
        cks = self.select(split, epochs)
        if not cks:
            return np.zeros((0, self.arch.n_params), dtype=np.float32)
        return np.stack([ck.theta for ck in cks])

    def save(self, directory) -> None:
        d = Path(directory)
        (d / "checkpoints").mkdir(parents=True, exist_ok=True)
        files = {}
        for mid, cks in self.checkpoints.items():
            files[mid] = []
            for ck in cks:
                name = f"{mid}_e{ck.epoch:03d}.wzoo"
                ck.save(d / "checkpoints" / name, self.dataset_fingerprint)
                files[mid].append(name)
        manifest = {"arch": self.arch.to_dict(), "splits": self.splits, "files": files,
                    "dataset_fingerprint": self.dataset_fingerprint, "meta": self.meta}
        atomic_write_text(d / "zoo.json", json.dumps(manifest, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Zoo":
        d = Path(directory)
        if not (d / "zoo.json").exists():
            raise MissingArtifactError(f"no zoo at {d}; run the train-zoo command first")
        manifest = json.loads((d / "zoo.json").read_text())
        cks = {mid: [ModelCheckpoint.load(d / "checkpoints" / f) for f in files]
               for mid, files in manifest["files"].items()}
        return cls(ArchitectureSpec.from_dict(manifest["arch"]), cks, manifest["splits"],
                   manifest.get("dataset_fingerprint", ""), manifest.get("meta", {}))


def _train_cell(i: int, hyper: ZooHyperparams, arch, dataset: Dataset, epochs, ckpt_epochs, batch_size):
    clf = CNNClassifier(arch=arch, init_scheme=hyper.init_scheme, learning_rate=hyper.learning_rate,
                        weight_decay=hyper.weight_decay, epochs=epochs, batch_size=batch_size,
                        checkpoint_epochs=ckpt_epochs, seed=hyper.seed, model_id=f"m{i:04d}")
    clf.fit(dataset.x_train, dataset.y_train, dataset.x_test, dataset.y_test)
    return clf.checkpoints_


def train_zoo(grid: ZooGrid, dataset: Dataset, arch: Optional[ArchitectureSpec] = None, epochs: int = 12,
              checkpoint_epochs: Optional[Sequence[int]] = None, batch_size: int = 32,
              proportions=(0.8, 0.05, 0.15), split_seed: int = 0, n_jobs: int = 1) -> Zoo:
    """Train one model per grid cell and assign seeded train/val/test splits."""
    cells = grid.cells()
    if not cells:
        raise ConfigError("zoo grid is empty")
    if dataset.y_train is None:
        raise ConfigError(f"dataset kind {dataset.kind!r} is unlabeled and cannot train a zoo")
    if arch is None:
        arch = desk_arch(channels=dataset.input_shape[0], side=dataset.input_shape[1],
                         classes=max(dataset.n_classes, int(dataset.y_train.max()) + 1))
    if tuple(dataset.input_shape) != arch.input_shape:
        raise ConfigError(f"dataset images {dataset.input_shape} do not match architecture input {arch.input_shape}")
    ckpt_epochs = sorted(checkpoint_epochs) if checkpoint_epochs else default_checkpoint_epochs(epochs)
    if ckpt_epochs[-1] > epochs or ckpt_epochs[0] < 1:
        raise ConfigError(f"checkpoint epochs {ckpt_epochs} outside 1..{epochs}")
    if n_jobs == 1:
        results = []
        for i, h in enumerate(cells):
            results.append(_train_cell(i, h, arch, dataset, epochs, ckpt_epochs, batch_size))
            logger.info("trained model %d/%d (%s): test acc %.3f", i + 1, len(cells), h,
                        results[-1][-1].test_accuracy)
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(
            delayed(_train_cell)(i, h, arch, dataset, epochs, ckpt_epochs, batch_size)
            for i, h in enumerate(cells))
    checkpoints = {f"m{i:04d}": cks for i, cks in enumerate(results)}
    splits = assign_splits(sorted(checkpoints), proportions, split_seed)
    return Zoo(arch, checkpoints, splits, dataset.fingerprint,
               {"epochs": epochs, "checkpoint_epochs": ckpt_epochs, "batch_size": batch_size})


def agreement(theta_a, theta_b, arch: ArchitectureSpec, x) -> float:
    """Fraction of inputs on which both models predict the same class (argmax, lowest index on ties)."""
    x = np.asarray(x)
    if len(x) == 0:
        raise ContractError("agreement needs a non-empty input set")
    pa = predict_logits(theta_a, arch, x).argmax(axis=1)
    pb = predict_logits(theta_b, arch, x).argmax(axis=1)
    return float(np.mean(pa == pb))
