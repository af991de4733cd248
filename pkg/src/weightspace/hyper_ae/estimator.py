"""Hyper-representation autoencoder as a scikit-learn style estimator."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import ConfigError, ContractError, NumericalError, ShapeError
from ..losses import (
    LossConfig,
    QueryBatch,
    behavioral_loss,
    composite_loss,
    ntxent_loss,
    structural_loss,
)
from ..tensor import Adam, Tensor, add, backward, default_dtype, mul, no_grad
from ..tokenizer import apply_permutation, detokenize, sample_permutation, token_layout, tokenize
from ..zoo.arch import ArchitectureSpec, predict_logits
from ..zoo.container import read_container, write_container
from . import transformer as tf

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AEConfig:
    token_len: int = 32
    embed_dim: int = 8
    d_model: int = 64
    num_heads: int = 4
    num_encoder_layers: int = 3
    num_decoder_layers: Optional[int] = None
    proj_dim: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 3e-9
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by num_heads {self.num_heads}")
        if self.embed_dim >= self.token_len:
            raise ConfigError(f"embed_dim {self.embed_dim} must be smaller than token_len {self.token_len}")
        for name in ("token_len", "embed_dim", "d_model", "num_heads", "num_encoder_layers",
                     "proj_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.num_decoder_layers is not None and self.num_decoder_layers < 1:
            raise ConfigError("num_decoder_layers must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")

    @classmethod
    def paper_scale(cls, **overrides) -> "AEConfig":
        """Full-size settings: 289-wide tokens, 64-dim latents, d_model 256, 8 heads, 8 layers."""
        base = dict(token_len=289, embed_dim=64, d_model=256, num_heads=8, num_encoder_layers=8,
                    learning_rate=1e-4, batch_size=64, epochs=100)
        base.update(overrides)
        return cls(**base)

    @property
    def decoder_layers(self) -> int:
        return self.num_encoder_layers if self.num_decoder_layers is None else self.num_decoder_layers


@dataclass
class LatentCode:
    z: np.ndarray  # (num_tokens, embed_dim)
    model_id: Optional[str] = None
    epoch: Optional[int] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)):
            raise NumericalError(f"latent code for {self.model_id} has non-finite entries")


_AE_FIELDS = tuple(AEConfig.__dataclass_fields__)
_LOSS_FIELDS = tuple(LossConfig.__dataclass_fields__)


class HyperRepresentationAE(TransformerMixin, BaseEstimator):
    """Transformer autoencoder over tokenized parameter vectors.

    ``fit`` takes an (n, p) matrix of flattened models sharing ``arch`` and
    minimizes ``gamma * L_C + (1 - gamma) * (beta * L_S + (1 - beta) * L_B)``.
    ``transform`` returns per-token latent codes (n, num_tokens, embed_dim) and
    ``inverse_transform`` maps codes back to (n, p) parameters.
    """

    def __init__(self, arch: Optional[ArchitectureSpec] = None, token_len=32, embed_dim=8, d_model=64,
                 num_heads=4, num_encoder_layers=3, num_decoder_layers=None, proj_dim=32, ff_mult=2,
                 learning_rate=1e-3, weight_decay=3e-9, batch_size=16, epochs=30, gamma=0.05, beta=0.1,
                 behavioral_variant="mse-logits", distill_temperature=2.0, n_queries=256,
                 query_source="zoo-trainset", ntxent_temperature=0.1, augment=True, normalize=True,
                 seed=0, dtype="float32"):
        self.arch = arch
        self.token_len = token_len
        self.embed_dim = embed_dim
        self.d_model = d_model
        self.num_heads = num_heads
        self.num_encoder_layers = num_encoder_layers
        self.num_decoder_layers = num_decoder_layers
        self.proj_dim = proj_dim
        self.ff_mult = ff_mult
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.gamma = gamma
        self.beta = beta
        self.behavioral_variant = behavioral_variant
        self.distill_temperature = distill_temperature
        self.n_queries = n_queries
        self.query_source = query_source
        self.ntxent_temperature = ntxent_temperature
        self.augment = augment
        self.normalize = normalize
        self.seed = seed
        self.dtype = dtype

    # -- configuration -----------------------------------------------------------

    def ae_config(self) -> AEConfig:
        return AEConfig(**{k: getattr(self, k) for k in _AE_FIELDS})

    def loss_config(self) -> LossConfig:
        return LossConfig(**{k: getattr(self, k) for k in _LOSS_FIELDS})

    def _np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        return np.dtype(self.dtype)

    def _validate(self):
        if self.arch is None:
            raise ConfigError("HyperRepresentationAE needs an architecture")
        return self.ae_config(), self.loss_config(), self._np_dtype()

    def _init(self, ae: AEConfig, dtype) -> None:
        layout = token_layout(self.arch, ae.token_len)
        self.layout_ = layout
        self.params_ = tf.init_params(ae.token_len, ae.embed_dim, ae.d_model, ae.num_heads,
                                      ae.num_encoder_layers, ae.decoder_layers, ae.proj_dim,
                                      n_layer_ids=int(layout.positions[:, 0].max()) + 1,
                                      n_slot_ids=int(layout.positions[:, 1].max()) + 1,
                                      seed=np.random.SeedSequence([int(self.seed), 1]), dtype=dtype,
                                      ff_mult=self.ff_mult)
        self.n_features_in_ = self.arch.n_params

    def _fit_scaling(self, X: np.ndarray) -> None:
        # one (mean, std) per parametric layer; unlike per-entry statistics these commute with permutations
        means, stds = [], []
        for blk in self.arch.blocks:
            vals = X[:, blk.offset:blk.offset + blk.size]
            means.append(float(vals.mean()) if self.normalize else 0.0)
            sd = float(vals.std()) if self.normalize else 1.0
            stds.append(sd if sd > 1e-8 else 1.0)
        self.layer_mean_, self.layer_std_ = means, stds

    def _scaling(self, dtype):
        sizes = [b.size for b in self.arch.blocks]
        return (np.repeat(self.layer_mean_, sizes).astype(dtype),
                np.repeat(self.layer_std_, sizes).astype(dtype))

    def _to_tokens(self, theta: np.ndarray, dtype) -> np.ndarray:
        shift, scale = self._scaling(dtype)
        return tokenize((theta.astype(dtype) - shift) / scale, self.arch, self.token_len).tokens

    def _from_tokens(self, tokens):
        """Decoder output tokens -> parameters on the original scale (Tensor in, Tensor out)."""
        shift, scale = self._scaling(tokens.dtype)
        flat = detokenize(tokens, self.arch, self.token_len)
        if isinstance(flat, Tensor):
            return add(mul(flat, Tensor(scale)), Tensor(shift))
        return flat * scale + shift

    @property
    def compression_ratio_(self) -> float:
        return self.token_len / self.embed_dim

    # -- functional pieces -------------------------------------------------------

    def _check_theta(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None]
        if X.ndim != 2 or X.shape[1] != self.arch.n_params:
            raise ShapeError(f"expected (n, {self.arch.n_params}) parameters, got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NumericalError("input parameters contain non-finite values")
        return X

    def _encode(self, tokens) -> Tensor:
        if tokens.shape[-2:] != (self.layout_.num_tokens, self.token_len):
            raise ContractError(f"token block {tuple(tokens.shape[-2:])} does not match "
                                f"({self.layout_.num_tokens}, {self.token_len})")
        return tf.encode(tokens, self.params_, self.layout_.positions, self.num_heads, self.num_encoder_layers)

    def _decode(self, z) -> Tensor:
        if z.shape[-2:] != (self.layout_.num_tokens, self.embed_dim):
            raise ContractError(f"latent block {tuple(z.shape[-2:])} does not match "
                                f"({self.layout_.num_tokens}, {self.embed_dim})")
        return tf.decode(z, self.params_, self.layout_.positions, self.num_heads, self.ae_config().decoder_layers)

    def encode(self, tokens) -> Tensor:
        check_is_fitted(self, "params_")
        return self._encode(tokens)

    def decode(self, z) -> Tensor:
        check_is_fitted(self, "params_")
        return self._decode(z)

    def project(self, z) -> np.ndarray:
        check_is_fitted(self, "params_")
        with no_grad():
            return tf.project(z, self.params_).data

    # -- training ----------------------------------------------------------------

    def _batch_losses(self, theta: np.ndarray, lc: LossConfig, rng, query_sampler, dtype) -> Dict[str, Tensor]:
        k = theta.shape[0]
        if lc.uses_contrastive or self.augment:
            views = [apply_permutation(theta, sample_permutation(self.arch, rng), self.arch)]
            if lc.uses_contrastive:
                views.append(apply_permutation(theta, sample_permutation(self.arch, rng), self.arch))
        else:
            views = [theta]
        target = np.concatenate(views).astype(dtype)
        z = self._encode(self._to_tokens(target, dtype))
        out: Dict[str, Tensor] = {}
        if lc.uses_contrastive:
            proj = tf.project(z, self.params_)
            out["contrastive"] = ntxent_loss(proj[:k], proj[k:], lc.ntxent_temperature)
        if lc.uses_structural or lc.uses_behavioral:
            theta_hat = self._from_tokens(self._decode(z))
            if lc.uses_structural:
                out["structural"] = structural_loss(theta_hat, target)
            if lc.uses_behavioral:
                if query_sampler is None:
                    raise ConfigError("the behavioral loss needs a query sampler")
                q = query_sampler(rng)
                x = q.inputs if isinstance(q, QueryBatch) else np.asarray(q)
                x = x.astype(dtype, copy=False)
                if not np.all(np.isfinite(x)):
                    raise NumericalError("query batch contains non-finite values")
                # permutations preserve behavior, so every view targets the original model's outputs
                logits = np.stack([predict_logits(t, self.arch, x) for t in theta])
                logits = np.concatenate([logits] * len(views))
                out["behavioral"] = behavioral_loss(theta_hat, target, self.arch, x, lc.behavioral_variant,
                                                    lc.distill_temperature, target_logits=logits)
        return out

    def fit(self, X, y=None, query_sampler: Optional[Callable] = None, X_val=None):
        ae, lc, dtype = self._validate()
        X = self._check_theta(X).astype(dtype)
        if lc.uses_contrastive and len(X) < 2:
            raise ContractError("the contrastive loss needs at least 2 training models")
        if lc.uses_behavioral and query_sampler is None:
            raise ConfigError("the behavioral loss needs a query sampler")
        X_val = None if X_val is None else self._check_theta(X_val).astype(dtype)
        with default_dtype(dtype):
            self._init(ae, dtype)
            self._fit_scaling(X)
            log.info("hyper-representation compression ratio %.4f (token_len %d / embed_dim %d), %d tokens",
                     self.compression_ratio_, ae.token_len, ae.embed_dim, self.layout_.num_tokens)
            # the projection head only sees L_C and the decoder only sees L_S / L_B
            reconstructs = lc.uses_structural or lc.uses_behavioral
            params = [self.params_[k] for k in sorted(self.params_)
                      if (lc.uses_contrastive or not k.startswith("proj."))
                      and (reconstructs or not k.startswith("dec."))]
            opt = Adam(params, lr=ae.learning_rate, weight_decay=ae.weight_decay)
            rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 2]))
            self.history_: List[dict] = []
            if X_val is not None:
                self.history_.append({"epoch": 0, "val_structural": self._val_loss(X_val)})
            n = len(X)
            bs = min(ae.batch_size, n)
            for epoch in range(1, ae.epochs + 1):
                order = rng.permutation(n)
                sums: Dict[str, float] = {}
                n_batches = 0
                for b, start in enumerate(range(0, n, bs)):
                    idx = order[start:start + bs]
                    if lc.uses_contrastive and len(idx) < 2:
                        continue
                    try:
                        parts = self._batch_losses(X[idx], lc, rng, query_sampler, dtype)
                    except NumericalError as exc:
                        raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from exc
                    loss = composite_loss(parts.get("contrastive"), parts.get("structural"),
                                          parts.get("behavioral"), lc.gamma, lc.beta)
                    values = {k: float(v.data) for k, v in parts.items()}
                    if not np.isfinite(float(loss.data)):
                        raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}: "
                                             f"total={float(loss.data)!r}, components={values}")
                    opt.zero_grad()
                    backward(loss)
                    opt.step()
                    values["loss"] = float(loss.data)
                    for key, val in values.items():
                        sums[key] = sums.get(key, 0.0) + val
                    n_batches += 1
                rec = {"epoch": epoch}
                rec.update({k: v / max(n_batches, 1) for k, v in sorted(sums.items())})
                if X_val is not None:
                    rec["val_structural"] = self._val_loss(X_val)
                self.history_.append(rec)
                log.debug("epoch %d %s", epoch, rec)
            opt.zero_grad()
        return self

    def _val_loss(self, X_val) -> float:
        rec = self._reconstruct(X_val)
        return float(0.5 * np.sum((rec - X_val) ** 2) / len(X_val))

    # -- inference -----------------------------------------------------------------

    def _chunks(self, n: int, size: int = 64):
        for start in range(0, n, size):
            yield slice(start, min(start + size, n))

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = self._check_theta(X)
        dtype = self._np_dtype()
        out = []
        with no_grad(), default_dtype(dtype):
            for sl in self._chunks(len(X)):
                out.append(self._encode(self._to_tokens(X[sl], dtype)).data)
        return np.concatenate(out)

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "params_")
        dtype = self._np_dtype()
        Z = np.asarray(Z, dtype=dtype)
        if Z.ndim == 2:
            Z = Z[None]
        out = []
        with no_grad(), default_dtype(dtype):
            for sl in self._chunks(len(Z)):
                out.append(self._from_tokens(self._decode(Z[sl]).data))
        return np.concatenate(out)

    def _reconstruct(self, X) -> np.ndarray:
        return self.inverse_transform(self.transform(X))

    def reconstruct(self, X) -> np.ndarray:
        """Encode then decode: (n, p) -> (n, p)."""
        check_is_fitted(self, "params_")
        return self._reconstruct(X)

    def embed(self, X) -> np.ndarray:
        """Center-of-gravity embedding: per-token latent codes averaged over tokens."""
        return self.transform(X).mean(axis=1)

    def latent_codes(self, X, model_ids=None, epochs=None) -> List[LatentCode]:
        z = self.transform(X)
        ids = model_ids if model_ids is not None else [None] * len(z)
        eps = epochs if epochs is not None else [None] * len(z)
        return [LatentCode(zi, mid, ep) for zi, mid, ep in zip(z, ids, eps)]

    # -- persistence ---------------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        keys = sorted(self.params_)
        cfg = {k: v for k, v in self.get_params().items() if k != "arch"}
        meta = {
            "kind": "HAE",
            "arch": self.arch.to_dict(),
            "config": cfg,
            "tensors": [[k, list(self.params_[k].shape)] for k in keys],
            "history": self.history_,
            "layer_mean": self.layer_mean_,
            "layer_std": self.layer_std_,
        }
        payload = np.concatenate([self.params_[k].data.reshape(-1) for k in keys])
        write_container(path, meta, payload.astype(self._np_dtype()))

    @classmethod
    def load(cls, path) -> "HyperRepresentationAE":
        meta, payload = read_container(path)
        if meta.get("kind") != "HAE":
            raise ContractError(f"{path}: container kind {meta.get('kind')!r} is not 'HAE'")
        model = cls(arch=ArchitectureSpec.from_dict(meta["arch"]), **meta["config"])
        model.layout_ = token_layout(model.arch, model.token_len)
        model.n_features_in_ = model.arch.n_params
        params, pos = {}, 0
        for key, shape in meta["tensors"]:
            size = int(np.prod(shape))
            params[key] = Tensor(payload[pos:pos + size].reshape(shape).copy(), requires_grad=True)
            pos += size
        if pos != payload.size:
            raise ShapeError(f"{path}: payload has {payload.size} values, tensors need {pos}")
        model.params_ = params
        model.history_ = meta.get("history", [])
        model.layer_mean_, model.layer_std_ = meta["layer_mean"], meta["layer_std"]
        return model

    @property
    def n_parameters_(self) -> int:
        check_is_fitted(self, "params_")
        return int(sum(t.size for t in self.params_.values()))
