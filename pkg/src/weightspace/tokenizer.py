"""Flat parameter vectors <-> fixed-length token sequences, and behavior-preserving permutations.

Each parametric layer's row block (fan-in weights followed by bias, one row per
output unit) is cut into ``token_len`` slices; the last slice of a layer is
zero-padded. Tokens never straddle two layers, so every token carries a
``(layer_index, slot_index)`` position where ``layer_index`` counts
parametric layers only.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, ContractError, ShapeError
from .tensor import Tensor, reshape, take
from .zoo.arch import ArchitectureSpec, Conv, Flatten


@dataclass(frozen=True)
class TokenLayout:
    """Index bookkeeping for one (architecture, token_len) pair."""

    token_len: int
    num_tokens: int
    positions: np.ndarray  # (num_tokens, 2) int: layer_index, slot_index
    pad_mask: np.ndarray  # (num_tokens,) int: valid scalars per token
    valid_index: np.ndarray  # (p,) positions of theta entries in the flattened token buffer

    def compression_ratio(self, embed_dim: int) -> float:
        return self.token_len / embed_dim


@lru_cache(maxsize=64)
def _layout_cached(arch: ArchitectureSpec, token_len: int) -> TokenLayout:
    positions, pads, valid = [], [], []
    t = 0
    for li, blk in enumerate(arch.blocks):
        n_tok = math.ceil(blk.size / token_len)
        for slot in range(n_tok):
            lo = slot * token_len
            count = min(token_len, blk.size - lo)
            positions.append((li, slot))
            pads.append(count)
            valid.append((t + slot) * token_len + np.arange(count))
        t += n_tok
    return TokenLayout(token_len, t, np.asarray(positions, dtype=np.int64),
                       np.asarray(pads, dtype=np.int64), np.concatenate(valid).astype(np.intp))


def token_layout(arch: ArchitectureSpec, token_len: int) -> TokenLayout:
    if token_len < 1:
        raise ConfigError(f"token_len must be >= 1, got {token_len}")
    return _layout_cached(arch, int(token_len))


@dataclass
class TokenSequence:
    tokens: np.ndarray  # (num_tokens, token_len) or batched (n, num_tokens, token_len)
    positions: np.ndarray
    pad_mask: np.ndarray

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[-2]

    @property
    def token_len(self) -> int:
        return self.tokens.shape[-1]


def tokenize(theta, arch: ArchitectureSpec, token_len: int) -> TokenSequence:
    """Cut ``theta`` (shape (p,) or (n, p)) into zero-padded tokens."""
    layout = token_layout(arch, token_len)
    theta = np.asarray(theta)
    if theta.shape[-1] != arch.n_params or theta.ndim not in (1, 2):
        raise ShapeError(f"theta of shape {theta.shape} does not match {arch.n_params} parameters")
    lead = theta.shape[:-1]
    buf = np.zeros(lead + (layout.num_tokens * token_len,), dtype=theta.dtype)
    buf[..., layout.valid_index] = theta
    return TokenSequence(buf.reshape(lead + (layout.num_tokens, token_len)),
                         layout.positions.copy(), layout.pad_mask.copy())


def detokenize(seq, arch: ArchitectureSpec, token_len: Optional[int] = None):
    """Inverse of :func:`tokenize`; reads only the valid (non-pad) region.

    Accepts a :class:`TokenSequence`, a raw array, or a Tensor of shape
    ``(num_tokens, token_len)`` or ``(n, num_tokens, token_len)``. Tensor input
    yields a Tensor so gradients flow back into the token values.
    """
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    token_len = tokens.shape[-1] if token_len is None else token_len
    layout = token_layout(arch, token_len)
    if tokens.shape[-2:] != (layout.num_tokens, token_len):
        raise ContractError(f"token block {tokens.shape[-2:]} does not match layout "
                            f"({layout.num_tokens}, {token_len}) for this architecture")
    lead = tokens.shape[:-2]
    if isinstance(tokens, Tensor):
        flat = reshape(tokens, lead + (layout.num_tokens * token_len,))
        return take(flat, layout.valid_index, axis=-1)
    flat = np.asarray(tokens).reshape(lead + (layout.num_tokens * token_len,))
    return flat[..., layout.valid_index].copy()


# -- permutations ---------------------------------------------------------------

@dataclass(frozen=True)
class _Interface:
    src: int  # ordinal of the producing parametric block
    dst: int  # ordinal of the consuming parametric block
    units: int
    spatial: int  # >1 when a Flatten sits between a conv and a linear layer


def _interfaces(arch: ArchitectureSpec) -> List[_Interface]:
    blocks = arch.blocks
    shapes = arch._shapes()
    out = []
    for ordinal in range(len(blocks) - 1):
        src, dst = blocks[ordinal], blocks[ordinal + 1]
        spatial = 1
        for li in range(src.layer_index + 1, dst.layer_index):
            if isinstance(arch.layers[li], Flatten):
                pre = shapes[li]
                spatial = int(np.prod(pre[1:])) if len(pre) == 3 else 1
        out.append(_Interface(ordinal, ordinal + 1, src.rows, spatial))
    return out


@dataclass(frozen=True)
class PermutationPlan:
    """One permutation of hidden units / conv channels per layer interface."""

    perms: tuple  # tuple of int arrays, one per interface

    def inverse(self) -> "PermutationPlan":
        return PermutationPlan(tuple(np.argsort(p) for p in self.perms))

    def is_identity(self) -> bool:
        return all(np.array_equal(p, np.arange(len(p))) for p in self.perms)

    def index_map(self, arch: ArchitectureSpec) -> np.ndarray:
        """Gather index ``g`` with ``apply(theta) == theta[g]``."""
        ifaces = _interfaces(arch)
        if len(self.perms) != len(ifaces):
            raise ContractError(f"plan has {len(self.perms)} permutations, architecture has {len(ifaces)} interfaces")
        blocks = arch.blocks
        row_perm = [np.arange(b.rows) for b in blocks]
        col_perm = [np.arange(b.row_len) for b in blocks]
        for iface, perm in zip(ifaces, self.perms):
            perm = np.asarray(perm)
            if sorted(perm.tolist()) != list(range(iface.units)):
                raise ContractError(f"interface {iface.src}->{iface.dst} needs a permutation of {iface.units} units")
            row_perm[iface.src] = perm
            dst = blocks[iface.dst]
            layer = arch.layers[dst.layer_index]
            if isinstance(layer, Conv):
                block = layer.k * layer.k
            else:
                block = iface.spatial
            cols = (perm[:, None] * block + np.arange(block)[None, :]).reshape(-1)
            col_perm[iface.dst] = np.concatenate([cols, [dst.row_len - 1]])
        parts = []
        for b, rp, cp in zip(blocks, row_perm, col_perm):
            parts.append((b.offset + rp[:, None] * b.row_len + cp[None, :]).reshape(-1))
        return np.concatenate(parts).astype(np.intp)


def sample_permutation(arch: ArchitectureSpec, seed=None) -> PermutationPlan:
    """Uniformly random permutation for every permutable interface of ``arch``."""
    ifaces = _interfaces(arch)
    if not ifaces:
        warnings.warn("architecture has no hidden interface; returning the identity plan", stacklevel=2)
        return PermutationPlan(())
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return PermutationPlan(tuple(rng.permutation(i.units) for i in ifaces))


def identity_plan(arch: ArchitectureSpec) -> PermutationPlan:
    return PermutationPlan(tuple(np.arange(i.units) for i in _interfaces(arch)))


def apply_permutation(theta, plan: PermutationPlan, arch: ArchitectureSpec) -> np.ndarray:
    theta = np.asarray(theta)
    if theta.shape[-1] != arch.n_params:
        raise ShapeError(f"theta of shape {theta.shape} does not match {arch.n_params} parameters")
    if not plan.perms:
        return theta.copy()
    return theta[..., plan.index_map(arch)]


class WeightTokenizer(TransformerMixin, BaseEstimator):
    """Transformer view of :func:`tokenize` / :func:`detokenize`.

    ``transform`` maps (n, p) parameter rows to (n, num_tokens, token_len)
    token blocks; ``inverse_transform`` maps them back.
    """

    def __init__(self, arch: Optional[ArchitectureSpec] = None, token_len: int = 32):
        self.arch = arch
        self.token_len = token_len

    def fit(self, X=None, y=None):
        if self.arch is None:
            raise ConfigError("WeightTokenizer needs an architecture")
        self.layout_ = token_layout(self.arch, self.token_len)
        if X is not None:
            X = np.asarray(X)
            if X.shape[-1] != self.arch.n_params:
                raise ShapeError(f"X has {X.shape[-1]} columns, architecture has {self.arch.n_params} parameters")
        self.n_features_in_ = self.arch.n_params
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "layout_")
        X = np.atleast_2d(np.asarray(X))
        return tokenize(X, self.arch, self.token_len).tokens

    def inverse_transform(self, X) -> np.ndarray:
        check_is_fitted(self, "layout_")
        return detokenize(np.asarray(X), self.arch, self.token_len)

    @property
    def positions_(self) -> np.ndarray:
        check_is_fitted(self, "layout_")
        return self.layout_.positions

    @property
    def num_tokens_(self) -> int:
        check_is_fitted(self, "layout_")
        return self.layout_.num_tokens


def compression_ratio(token_len: int, embed_dim: int) -> float:
    return token_len / embed_dim
