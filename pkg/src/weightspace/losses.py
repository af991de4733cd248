"""Training objectives for hyper-representation autoencoders.

All reconstruction losses take the reconstructed parameters as a Tensor of
shape (k, p) and the originals as a plain array; the originals are data, so
no gradient ever flows into them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .exceptions import ConfigError, ContractError, NumericalError, ShapeError
from .tensor import Tensor, add, as_tensor, concat, log_softmax, matmul, mul, no_grad, sub, sum_, transpose
from .zoo.arch import ArchitectureSpec, forward_classifier, predict_logits

BEHAVIORAL_VARIANTS = ("mse-logits", "cross-entropy", "distillation")
QUERY_SOURCES = ("zoo-trainset", "shifted-set", "random-uniform")


@dataclass
class LossConfig:
    gamma: float = 0.05
    beta: float = 0.1
    behavioral_variant: str = "mse-logits"
    distill_temperature: float = 2.0
    n_queries: int = 256
    query_source: str = "zoo-trainset"
    ntxent_temperature: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.behavioral_variant not in BEHAVIORAL_VARIANTS:
            raise ConfigError(f"unknown behavioral variant {self.behavioral_variant!r}; "
                              f"expected one of {BEHAVIORAL_VARIANTS}")
        if self.query_source not in QUERY_SOURCES:
            raise ConfigError(f"unknown query source {self.query_source!r}; expected one of {QUERY_SOURCES}")
        if self.n_queries < 1:
            raise ConfigError(f"n_queries must be >= 1, got {self.n_queries}")
        if self.distill_temperature <= 0 or self.ntxent_temperature <= 0:
            raise ConfigError("temperatures must be positive")

    @property
    def uses_contrastive(self) -> bool:
        return self.gamma > 0

    @property
    def uses_structural(self) -> bool:
        return self.gamma < 1 and self.beta > 0

    @property
    def uses_behavioral(self) -> bool:
        return self.gamma < 1 and self.beta < 1


def structural_loss(theta_hat, theta) -> Tensor:
    """(1 / 2k) * sum_j ||theta_hat_j - theta_j||^2 over k models."""
    theta_hat = as_tensor(theta_hat)
    theta = np.asarray(theta.data if isinstance(theta, Tensor) else theta, dtype=theta_hat.dtype)
    if theta_hat.shape != theta.shape:
        raise ContractError(f"structural loss shapes differ: {theta_hat.shape} vs {theta.shape}")
    if theta_hat.ndim == 1:
        k = 1
    elif theta_hat.ndim == 2:
        k = theta_hat.shape[0]
    else:
        raise ShapeError(f"expected (p,) or (k, p) parameters, got {theta_hat.shape}")
    diff = sub(theta_hat, Tensor(theta))
    return sum_(mul(diff, diff)) * (0.5 / k)


def _per_model_behavioral(logits_hat: Tensor, logits: np.ndarray, variant: str, temperature: float) -> Tensor:
    """Sum over queries of the per-query discrepancy (the 1/(kn) scaling happens outside)."""
    target = Tensor(logits.astype(logits_hat.dtype, copy=False))
    if variant == "mse-logits":
        d = sub(logits_hat, target)
        return sum_(mul(d, d)) * 0.5
    t = temperature if variant == "distillation" else 1.0
    log_q = log_softmax(logits_hat * (1.0 / t)) if t != 1.0 else log_softmax(logits_hat)
    with no_grad():
        log_p = log_softmax(target * (1.0 / t)) if t != 1.0 else log_softmax(target)
    p = np.exp(log_p.data)
    # KL(p || q): soft-target cross-entropy minus the (constant) target entropy, zero at self
    kl = sum_(mul(sub(log_p, log_q), p))
    return kl * (t * t) if variant == "distillation" else kl


def behavioral_loss(theta_hat, theta, arch: ArchitectureSpec, queries, variant: str = "mse-logits",
                    temperature: float = 2.0, target_logits: Optional[np.ndarray] = None,
                    model_ids=None) -> Tensor:
    """Output discrepancy between reconstructed and original models over shared queries.

    ``mse-logits`` is (1 / 2kn) sum_j sum_i ||f_hat(x_i) - f(x_i)||^2 on raw
    logits. ``cross-entropy`` and ``distillation`` compare softmax outputs
    (distillation at ``temperature``, rescaled by T^2); both are written as a
    KL divergence so they vanish when the reconstruction is exact.
    ``target_logits`` (k, n, classes) may be passed to skip recomputing the
    originals' outputs.
    """
    if variant not in BEHAVIORAL_VARIANTS:
        raise ConfigError(f"unknown behavioral variant {variant!r}")
    theta_hat = as_tensor(theta_hat)
    x = queries.inputs if isinstance(queries, QueryBatch) else np.asarray(queries)
    if len(x) == 0:
        raise ContractError("behavioral loss needs at least one query")
    single = theta_hat.ndim == 1
    theta = np.asarray(theta)
    if single:
        theta = theta[None]
    if theta.shape != (theta_hat.shape[0] if not single else 1, arch.n_params):
        raise ContractError(f"original parameters {theta.shape} do not match reconstruction {theta_hat.shape}")
    k, n = theta.shape[0], len(x)
    total = None
    for j in range(k):
        row = theta_hat if single else theta_hat[j]
        logits_hat = forward_classifier(row, arch, x)
        if not np.all(np.isfinite(logits_hat.data)):
            mid = model_ids[j] if model_ids is not None else j
            raise NumericalError(f"non-finite logits from reconstructed model {mid}")
        tgt = target_logits[j] if target_logits is not None else predict_logits(theta[j], arch, x)
        term = _per_model_behavioral(logits_hat, np.asarray(tgt), variant, temperature)
        total = term if total is None else add(total, term)
    return total * (1.0 / (k * n))


def ntxent_loss(z1, z2, temperature: float = 0.1) -> Tensor:
    """NT-Xent over two views: row i of ``z1`` and of ``z2`` come from the same model.

    Each of the 2k views is an anchor whose positive is its twin; every other
    view in the batch is a negative. The loss is the mean over all 2k anchors.
    Inputs are expected to be L2-normalized already.
    """
    z1, z2 = as_tensor(z1), as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise ContractError(f"views must be matching (k, d) matrices, got {z1.shape} and {z2.shape}")
    k = z1.shape[0]
    if k < 2:
        raise ContractError("contrastive loss needs at least 2 models in the batch (no negatives otherwise)")
    z = concat([z1, z2], axis=0)
    sim = matmul(z, transpose(z)) * (1.0 / temperature)
    mask = np.zeros((2 * k, 2 * k), dtype=z.dtype)
    np.fill_diagonal(mask, -1e9)
    logp = log_softmax(add(sim, Tensor(mask)), axis=1)
    pos = np.zeros((2 * k, 2 * k), dtype=z.dtype)
    idx = np.arange(2 * k)
    pos[idx, (idx + k) % (2 * k)] = 1.0
    return -sum_(mul(logp, pos)) * (1.0 / (2 * k))


def composite_loss(l_c, l_s, l_b, gamma: float, beta: float):
    """gamma * L_C + (1 - gamma) * (beta * L_S + (1 - beta) * L_B).

    Terms whose weight is exactly zero are skipped, so they may be passed as
    ``None`` (and are never evaluated by callers that check the weights).
    """
    total = None

    def acc(tot, term, w):
        if w == 0.0:
            return tot
        if term is None:
            raise ContractError("a loss component with non-zero weight is missing")
        scaled = term * w
        return scaled if tot is None else tot + scaled

    total = acc(total, l_c, gamma)
    total = acc(total, l_s, (1.0 - gamma) * beta)
    total = acc(total, l_b, (1.0 - gamma) * (1.0 - beta))
    if total is None:
        raise ContractError("all loss weights are zero")
    return total


# -- queries --------------------------------------------------------------------

@dataclass
class QueryBatch:
    inputs: np.ndarray
    source: str
    seed: Optional[int] = None


def sample_queries(source: str, n: int, seed, registry: Mapping[str, np.ndarray],
                   input_shape: Optional[tuple] = None, domain=(0.0, 1.0)) -> QueryBatch:
    """Draw ``n`` unlabeled query inputs.

    ``registry`` maps source names to image pools; ``random-uniform`` needs no
    pool and draws i.i.d. pixels over ``domain`` in the shape of any
    registered pool (or ``input_shape``).
    """
    if source not in QUERY_SOURCES:
        raise ConfigError(f"unknown query source {source!r}; expected one of {QUERY_SOURCES}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tag = None if isinstance(seed, np.random.Generator) else seed
    if source == "random-uniform":
        if input_shape is None:
            if not registry:
                raise ConfigError("random-uniform queries need an input shape or a registered pool")
            input_shape = next(iter(registry.values())).shape[1:]
        x = rng.uniform(domain[0], domain[1], size=(n,) + tuple(input_shape)).astype(np.float32)
        return QueryBatch(x, source, tag)
    if source not in registry:
        raise ConfigError(f"query source {source!r} is not registered; available: {sorted(registry)}")
    pool = registry[source]
    idx = rng.choice(len(pool), size=n, replace=len(pool) < n)
    return QueryBatch(np.asarray(pool[idx], dtype=np.float32), source, tag)


class QuerySampler:
    """Fresh query batch per call, from a fixed source and pool registry."""

    def __init__(self, source: str = "zoo-trainset", registry: Optional[Dict[str, np.ndarray]] = None,
                 n_queries: int = 256, input_shape: Optional[tuple] = None):
        if source not in QUERY_SOURCES:
            raise ConfigError(f"unknown query source {source!r}; expected one of {QUERY_SOURCES}")
        self.source = source
        self.registry = dict(registry or {})
        self.n_queries = n_queries
        self.input_shape = input_shape
        if source != "random-uniform" and source not in self.registry:
            raise ConfigError(f"query source {source!r} is not registered; available: {sorted(self.registry)}")

    def __call__(self, rng: np.random.Generator) -> QueryBatch:
        return sample_queries(self.source, self.n_queries, rng, self.registry, self.input_shape)


def query_registry_from(dataset, shifted=None) -> Dict[str, np.ndarray]:
    reg = {"zoo-trainset": dataset.x_train}
    if shifted is not None:
        reg["shifted-set"] = shifted.x_train
    return reg

