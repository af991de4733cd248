"""First-order analysis of the behavioral loss around a model's parameters.

Everything here runs in float64: dense Jacobians of classifier outputs with
respect to the flat parameter vector, the alignment matrix
``F = (1/n) sum_i J_theta(x_i)^T J_theta_hat(x_i)``, Taylor residuals, and the
comparison of the exact behavioral-loss gradient against its first-order
approximation ``F^T (theta_hat - theta)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ._io import atomic_write_text
from .exceptions import CapabilityError, ContractError, ShapeError
from .losses import behavioral_loss, structural_loss
from .tensor import Tensor, backward, default_dtype, slice_
from .zoo.arch import ArchitectureSpec, forward_classifier, predict_logits

MAX_DENSE_PARAMS = 5000


def _as64(theta, arch: ArchitectureSpec) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (arch.n_params,):
        raise ShapeError(f"theta has shape {theta.shape}, architecture needs ({arch.n_params},)")
    return theta


def _check_size(arch: ArchitectureSpec) -> None:
    if arch.n_params > MAX_DENSE_PARAMS:
        raise CapabilityError(f"dense Jacobians are limited to {MAX_DENSE_PARAMS} parameters, this architecture "
                              f"has {arch.n_params}; analyse a subsampled parameter set or a smaller model")


def _power_iteration(mat: np.ndarray, iters: int = 200, seed: int = 0) -> float:
    """Dominant eigenvalue (by magnitude) of a symmetric matrix, Rayleigh quotient of the last iterate."""
    if mat.size == 0:
        return 0.0
    v = np.random.default_rng(seed).normal(size=mat.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = mat @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
    return float(v @ mat @ v)


def eigen_bounds(sym: np.ndarray, iters: int = 200, seed: int = 0):
    """(largest, smallest) eigenvalue estimates of a symmetric matrix via shifted power iteration."""
    top = _power_iteration(sym, iters, seed)
    shift = abs(top)
    bottom = shift - _power_iteration(shift * np.eye(len(sym)) - sym, iters, seed + 1)
    return top, bottom


@dataclass
class JacobianReport:
    J: np.ndarray  # (n_queries, outputs, p)
    sigma_max: float
    sigma_min: float

    @property
    def n_outputs(self) -> int:
        return self.J.shape[1]

    def to_dict(self) -> dict:
        return {"n_queries": int(self.J.shape[0]), "n_outputs": self.n_outputs,
                "sigma_max": self.sigma_max, "sigma_min": self.sigma_min}


def _jacobian_rows(theta: np.ndarray, arch: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    n, k = len(x), arch.output_dim
    out = np.zeros((n, k, arch.n_params))
    with default_dtype(np.float64):
        for i in range(n):
            t = Tensor(theta.copy(), requires_grad=True)
            logits = forward_classifier(t, arch, x[i:i + 1])
            for r in range(k):
                t.grad = None
                backward(slice_(logits, (0, r)))
                out[i, r] = t.grad
    return out


def jacobian(theta, arch: ArchitectureSpec, x, iters: int = 200) -> JacobianReport:
    """Per-query Jacobian of the logits w.r.t. ``theta``, one reverse pass per output."""
    _check_size(arch)
    theta = _as64(theta, arch)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == len(arch.input_shape):
        x = x[None]
    J = _jacobian_rows(theta, arch, x)
    A = J.reshape(-1, arch.n_params)
    gram = A @ A.T
    top, bottom = eigen_bounds(gram, iters)
    return JacobianReport(J, float(np.sqrt(max(top, 0.0))), float(np.sqrt(max(bottom, 0.0))))


@dataclass
class AlignmentMatrix:
    F: np.ndarray  # (p, p)
    n_queries: int
    sym_norm: float
    antisym_norm: float
    J: np.ndarray = field(repr=False)  # (n, outputs, p) at theta
    J_hat: np.ndarray = field(repr=False)  # (n, outputs, p) at theta_hat

    @property
    def asymmetry(self) -> float:
        total = np.linalg.norm(self.F)
        return float(np.linalg.norm(self.F - self.F.T) / total) if total > 0 else 0.0

    def eigen_bounds(self, iters: int = 200):
        return eigen_bounds(0.5 * (self.F + self.F.T), iters)

    def to_dict(self) -> dict:
        return {"n_queries": self.n_queries, "sym_norm": self.sym_norm, "antisym_norm": self.antisym_norm,
                "asymmetry": self.asymmetry}


def compose_alignment(J: np.ndarray, J_hat: np.ndarray) -> np.ndarray:
    """(1/n) sum_i J_i^T J_hat_i for stacked (n, outputs, p) Jacobians."""
    if J.shape != J_hat.shape:
        raise ContractError(f"Jacobian stacks differ in shape: {J.shape} vs {J_hat.shape}")
    n = J.shape[0]
    return np.einsum("nkp,nkq->pq", J, J_hat) / n


def alignment_matrix(theta, theta_hat, arch: ArchitectureSpec, queries) -> AlignmentMatrix:
    _check_size(arch)
    theta, theta_hat = _as64(theta, arch), _as64(theta_hat, arch)
    x = np.asarray(queries, dtype=np.float64)
    J = _jacobian_rows(theta, arch, x)
    J_hat = J if np.array_equal(theta, theta_hat) else _jacobian_rows(theta_hat, arch, x)
    F = compose_alignment(J, J_hat)
    sym, anti = 0.5 * (F + F.T), 0.5 * (F - F.T)
    return AlignmentMatrix(F, len(x), float(np.linalg.norm(sym)), float(np.linalg.norm(anti)), J, J_hat)


def _unit(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if norm == 0.0:
        raise ContractError("direction must be non-zero")
    return d if norm == 1.0 else d / norm


def taylor_residual(theta, dtheta, arch: ArchitectureSpec, x, eps: float, J: Optional[np.ndarray] = None) -> float:
    """|| f(theta + eps d) - f(theta) - eps J d || with d the unit-normalized ``dtheta``."""
    theta = _as64(theta, arch)
    d = _unit(dtheta)
    x = np.asarray(x, dtype=np.float64)
    if J is None:
        J = jacobian(theta, arch, x).J
    lin = np.einsum("nkp,p->nk", J, d)
    moved = predict_logits(theta + eps * d, arch, x)
    base = predict_logits(theta, arch, x)
    return float(np.linalg.norm(moved - base - eps * lin))


def taylor_order(theta, arch: ArchitectureSpec, x, eps: float = 1e-2, n_directions: int = 20, seed=0) -> dict:
    """Residual ratio r(eps) / r(eps / 2) averaged over random unit directions (about 4 for a C^2 map)."""
    theta = _as64(theta, arch)
    x = np.asarray(x, dtype=np.float64)
    J = jacobian(theta, arch, x).J
    rng = np.random.default_rng(seed)
    ratios, residuals = [], []
    for _ in range(n_directions):
        d = _unit(rng.normal(size=arch.n_params))
        r1 = taylor_residual(theta, d, arch, x, eps, J)
        r2 = taylor_residual(theta, d, arch, x, eps / 2, J)
        residuals.append((r1, r2))
        ratios.append(r1 / r2 if r2 > 0 else float("nan"))
    return {"eps": eps, "mean_ratio": float(np.nanmean(ratios)) if np.any(np.isfinite(ratios)) else float("nan"),
            "ratios": [float(r) for r in ratios], "residuals": [[float(a), float(b)] for a, b in residuals]}


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 1.0 if na == nb else 0.0
    return float(a @ b / (na * nb))


def exact_behavioral_grad(theta, theta_hat, arch: ArchitectureSpec, queries) -> np.ndarray:
    """Autodiff d L_B / d theta_hat for the MSE-on-logits variant (single model)."""
    theta, theta_hat = _as64(theta, arch), _as64(theta_hat, arch)
    with default_dtype(np.float64):
        t = Tensor(theta_hat.copy(), requires_grad=True)
        backward(behavioral_loss(t, theta, arch, np.asarray(queries, dtype=np.float64)))
    return t.grad


def double_sum_grad(J: np.ndarray, J_hat: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """(1/n) sum_i (J_i delta)^T J_hat_i, evaluated without forming F."""
    n = J.shape[0]
    jd = np.einsum("nkp,p->nk", J, delta)
    return np.einsum("nk,nkq->q", jd, J_hat) / n


@dataclass
class GradCheckReport:
    exact_grad: np.ndarray = field(repr=False)
    approx_grad: np.ndarray = field(repr=False)
    double_sum_grad: np.ndarray = field(repr=False)
    cosine: float
    rel_err: float
    delta_norm: float
    degenerate: bool
    alignment: Optional[AlignmentMatrix] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {"cosine": self.cosine, "rel_err": self.rel_err, "delta_norm": self.delta_norm,
               "degenerate": self.degenerate,
               "recomposition_gap": float(np.max(np.abs(self.approx_grad - self.double_sum_grad)))}
        if self.alignment is not None:
            out["alignment"] = self.alignment.to_dict()
        return out


def behavioral_grad_check(theta, theta_hat, arch: ArchitectureSpec, queries) -> GradCheckReport:
    """Exact d L_B / d theta_hat versus the first-order form F^T (theta_hat - theta)."""
    theta, theta_hat = _as64(theta, arch), _as64(theta_hat, arch)
    x = np.asarray(queries, dtype=np.float64)
    delta = theta_hat - theta
    exact = exact_behavioral_grad(theta, theta_hat, arch, x)
    align = alignment_matrix(theta, theta_hat, arch, x)
    approx = align.F.T @ delta
    dsum = double_sum_grad(align.J, align.J_hat, delta)
    degenerate = not np.any(delta)
    scale = max(np.linalg.norm(exact), np.linalg.norm(approx))
    rel = float(np.linalg.norm(exact - approx) / scale) if scale > 0 else 0.0
    return GradCheckReport(exact, approx, dsum, _cosine(exact, approx), rel, float(np.linalg.norm(delta)),
                           degenerate, align)


def structural_grad(theta, theta_hat) -> np.ndarray:
    """Autodiff d L_S / d theta_hat for stacked (k, p) parameters; equals (theta_hat - theta) / k."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    with default_dtype(np.float64):
        t = Tensor(theta_hat.copy(), requires_grad=True)
        backward(structural_loss(t, np.asarray(theta, dtype=np.float64)))
    return t.grad


def epsilon_sweep(theta, arch: ArchitectureSpec, queries, eps_grid: Sequence[float] = (1e-1, 1e-2, 1e-3),
                  seed=0, direction: Optional[np.ndarray] = None) -> List[dict]:
    """Gradient check at theta_hat = theta + eps * ||theta|| * d for a fixed unit direction d."""
    theta = _as64(theta, arch)
    d = _unit(np.random.default_rng(seed).normal(size=arch.n_params) if direction is None else direction)
    out = []
    for eps in eps_grid:
        rep = behavioral_grad_check(theta, theta + eps * np.linalg.norm(theta) * d, arch, queries)
        out.append({"eps": float(eps), **rep.to_dict()})
    return out


def analysis_report(models: Dict[str, np.ndarray], arch: ArchitectureSpec, queries, eps_grid=(1e-1, 1e-2, 1e-3),
                    taylor_eps: float = 1e-2, n_directions: int = 20, seed: int = 0) -> dict:
    """Per-model gradient-check sweep, Taylor ratio and alignment diagnostics."""
    per_model = {}
    for mid in sorted(models):
        theta = _as64(models[mid], arch)
        sweep = epsilon_sweep(theta, arch, queries, eps_grid, seed)
        taylor = taylor_order(theta, arch, queries, taylor_eps, n_directions, seed)
        self_align = alignment_matrix(theta, theta, arch, queries)
        top, bottom = self_align.eigen_bounds()
        per_model[mid] = {
            "sweep": sweep,
            "taylor_mean_ratio": taylor["mean_ratio"],
            "taylor_ratios": taylor["ratios"],
            "self_alignment": {**self_align.to_dict(), "eig_max": top, "eig_min": bottom},
        }
    return {"n_params": arch.n_params, "n_queries": int(len(queries)), "eps_grid": [float(e) for e in eps_grid],
            "models": per_model}


def write_report(path, report: dict) -> None:
    atomic_write_text(path, json.dumps(report, indent=2, sort_keys=True) + "\n")
