"""Fidelity of reconstructed and generated models, diversity, and the evaluation report."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .._io import atomic_write_text
from ..exceptions import ContractError
from ..zoo.arch import ArchitectureSpec, predict_logits

HIST_BINS = np.linspace(0.0, 1.0, 21)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"n": 0, "mean": None, "std": None, "min": None, "max": None}
    return {"n": int(v.size), "mean": float(v.mean()), "std": float(v.std()),
            "min": float(v.min()), "max": float(v.max())}


def histogram(values, bins=HIST_BINS) -> dict:
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins)
    return {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def _accuracies(thetas, arch, x, y) -> np.ndarray:
    y = np.asarray(y)
    return np.array([float(np.mean(predict_logits(t, arch, x).argmax(axis=1) == y)) for t in thetas])


@dataclass
class ReconstructionScores:
    model_ids: List[str]
    l2: np.ndarray
    agreement: np.ndarray
    accuracy_original: np.ndarray
    accuracy_reconstructed: np.ndarray

    def summary(self) -> dict:
        return {
            "l2": summarize(self.l2),
            "agreement": summarize(self.agreement),
            "accuracy_original": summarize(self.accuracy_original),
            "accuracy_reconstructed": summarize(self.accuracy_reconstructed),
            "accuracy_drop": summarize(self.accuracy_reconstructed - self.accuracy_original),
            "hist_accuracy_reconstructed": histogram(self.accuracy_reconstructed),
            "hist_agreement": histogram(self.agreement),
        }

    def rows(self) -> List[dict]:
        return [{"model_id": m, "l2": float(d), "agreement": float(a), "accuracy_original": float(o),
                 "accuracy_reconstructed": float(r)}
                for m, d, a, o, r in zip(self.model_ids, self.l2, self.agreement, self.accuracy_original,
                                         self.accuracy_reconstructed)]


def score_reconstructions(thetas, reconstructions, arch: ArchitectureSpec, x, y,
                          model_ids: Optional[Sequence[str]] = None) -> ReconstructionScores:
    thetas = np.asarray(thetas)
    rec = np.asarray(reconstructions)
    if thetas.shape != rec.shape:
        raise ContractError(f"originals {thetas.shape} and reconstructions {rec.shape} differ in shape")
    ids = list(model_ids) if model_ids is not None else [str(i) for i in range(len(thetas))]
    l2 = np.linalg.norm(rec.astype(np.float64) - thetas.astype(np.float64), axis=1)
    agr, acc_o, acc_r = [], [], []
    y = np.asarray(y)
    for t, r in zip(thetas, rec):
        po = predict_logits(t, arch, x).argmax(axis=1)
        pr = predict_logits(r, arch, x).argmax(axis=1)
        agr.append(float(np.mean(po == pr)))
        acc_o.append(float(np.mean(po == y)))
        acc_r.append(float(np.mean(pr == y)))
    return ReconstructionScores(ids, l2, np.array(agr), np.array(acc_o), np.array(acc_r))


def reconstruct_and_score(zoo, ae, x, y, split: str = "test", final_only: bool = False) -> ReconstructionScores:
    """Encode/decode every ``split`` checkpoint and compare it with its original on (x, y)."""
    cks = zoo.final(split) if final_only else zoo.select(split)
    if not cks:
        raise ContractError(f"zoo split {split!r} is empty")
    thetas = np.stack([ck.theta for ck in cks])
    return score_reconstructions(thetas, ae.reconstruct(thetas), zoo.arch, x, y,
                                 [f"{ck.model_id}@{ck.epoch}" for ck in cks])


def max_performance_delta(candidate_accuracies, reference_accuracies) -> float:
    """Best candidate accuracy minus best reference accuracy (negative means a drop)."""
    c, r = np.asarray(candidate_accuracies), np.asarray(reference_accuracies)
    if c.size == 0 or r.size == 0:
        raise ContractError("max-performance delta needs non-empty accuracy sets")
    return float(c.max() - r.max())


def _pairwise(A: np.ndarray) -> np.ndarray:
    n = len(A)
    out = []
    for i in range(n - 1):
        out.append(np.sqrt(np.sum((A[i + 1:] - A[i]) ** 2, axis=1)))
    return np.concatenate(out)


def pairwise_distances(thetas, arch: ArchitectureSpec, x):
    """Condensed (i < j) structural and behavioral distances."""
    T = np.asarray(thetas, dtype=np.float64)
    if T.ndim != 2 or len(T) < 2:
        raise ContractError(f"diversity needs at least 2 models, got {len(T) if T.ndim else 0}")
    logits = np.stack([predict_logits(t, arch, x).astype(np.float64).reshape(-1) for t in T])
    return _pairwise(T), _pairwise(logits)


def diversity(thetas, arch: ArchitectureSpec, x) -> dict:
    """Mean pairwise L2 distance in parameter space and in logit space over ``x``, with std over pairs."""
    s, b = pairwise_distances(thetas, arch, x)
    return {"n_models": int(len(thetas)), "n_pairs": int(len(s)),
            "structural_mean": float(s.mean()), "structural_std": float(s.std()),
            "behavioral_mean": float(b.mean()), "behavioral_std": float(b.std())}


def perturbation_agreement(theta, theta_hat, arch: ArchitectureSpec, x, seed=0) -> float:
    """Agreement of ``theta`` with a random perturbation at the same L2 distance as ``theta_hat``."""
    theta = np.asarray(theta, dtype=np.float64)
    dist = float(np.linalg.norm(np.asarray(theta_hat, dtype=np.float64) - theta))
    d = np.random.default_rng(seed).normal(size=theta.shape)
    pert = theta + dist * d / np.linalg.norm(d)
    a = predict_logits(theta.astype(np.float32), arch, x).argmax(axis=1)
    b = predict_logits(pert.astype(np.float32), arch, x).argmax(axis=1)
    return float(np.mean(a == b))


@dataclass
class EvalReport:
    sections: Dict[str, dict] = field(default_factory=dict)
    tables: Dict[str, List[dict]] = field(default_factory=dict)

    def add(self, name: str, summary: dict, rows: Optional[List[dict]] = None) -> None:
        self.sections[name] = summary
        if rows is not None:
            self.tables[name] = rows

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.sections), indent=2, sort_keys=True) + "\n"

    def table_csv(self, name: str) -> str:
        rows = self.tables[name]
        buf = io.StringIO()
        if rows:
            w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
        return buf.getvalue()

    def write(self, directory, json_name: str = "metrics.json") -> None:
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        atomic_write_text(d / json_name, self.to_json())
        for name in sorted(self.tables):
            atomic_write_text(d / f"{name}.csv", self.table_csv(name))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
