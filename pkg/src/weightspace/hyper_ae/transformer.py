"""Functional pre-norm transformer encoder/decoder over weight tokens.

Parameters live in a flat ``dict[str, Tensor]`` so they can be optimized,
serialized and counted without any module machinery.
"""
from __future__ import annotations

import math
from typing import Dict

import numpy as np

from ..exceptions import ContractError
from ..tensor import (
    Tensor,
    add,
    embedding,
    layernorm,
    matmul,
    mean,
    relu,
    reshape,
    slice_,
    softmax,
    sqrt,
    sum_,
    transpose,
    mul,
    div,
)

Params = Dict[str, Tensor]


def _dense(rng, d_in: int, d_out: int, dtype) -> Tensor:
    w = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(d_in, d_out))
    return Tensor(w.astype(dtype), requires_grad=True)


def _zeros(*shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(*shape, dtype) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def _init_stack(p: Params, prefix: str, n_layers: int, d: int, ff: int, rng, dtype) -> None:
    for i in range(n_layers):
        q = f"{prefix}.{i}"
        p[f"{q}.ln1.g"], p[f"{q}.ln1.b"] = _ones(d, dtype=dtype), _zeros(d, dtype=dtype)
        p[f"{q}.qkv.w"], p[f"{q}.qkv.b"] = _dense(rng, d, 3 * d, dtype), _zeros(3 * d, dtype=dtype)
        out = _dense(rng, d, d, dtype)
        out.data *= 1.0 / math.sqrt(2 * n_layers)
        p[f"{q}.out.w"], p[f"{q}.out.b"] = out, _zeros(d, dtype=dtype)
        p[f"{q}.ln2.g"], p[f"{q}.ln2.b"] = _ones(d, dtype=dtype), _zeros(d, dtype=dtype)
        p[f"{q}.ff1.w"], p[f"{q}.ff1.b"] = _dense(rng, d, ff, dtype), _zeros(ff, dtype=dtype)
        ff2 = _dense(rng, ff, d, dtype)
        ff2.data *= 1.0 / math.sqrt(2 * n_layers)
        p[f"{q}.ff2.w"], p[f"{q}.ff2.b"] = ff2, _zeros(d, dtype=dtype)
    p[f"{prefix}.lnf.g"], p[f"{prefix}.lnf.b"] = _ones(d, dtype=dtype), _zeros(d, dtype=dtype)


def init_params(token_len: int, embed_dim: int, d_model: int, num_heads: int, num_encoder_layers: int,
                num_decoder_layers: int, proj_dim: int, n_layer_ids: int, n_slot_ids: int,
                seed=0, dtype=np.float32, ff_mult: int = 2) -> Params:
    if d_model % num_heads:
        raise ContractError(f"d_model {d_model} not divisible by num_heads {num_heads}")
    rng = np.random.default_rng(seed)
    ff = ff_mult * d_model
    p: Params = {}
    p["enc.in.w"], p["enc.in.b"] = _dense(rng, token_len, d_model, dtype), _zeros(d_model, dtype=dtype)
    p["enc.pos_layer"] = Tensor((0.02 * rng.normal(size=(n_layer_ids, d_model))).astype(dtype), requires_grad=True)
    p["enc.pos_slot"] = Tensor((0.02 * rng.normal(size=(n_slot_ids, d_model))).astype(dtype), requires_grad=True)
    _init_stack(p, "enc", num_encoder_layers, d_model, ff, rng, dtype)
    p["enc.latent.w"], p["enc.latent.b"] = _dense(rng, d_model, embed_dim, dtype), _zeros(embed_dim, dtype=dtype)

    p["dec.in.w"], p["dec.in.b"] = _dense(rng, embed_dim, d_model, dtype), _zeros(d_model, dtype=dtype)
    p["dec.pos_layer"] = Tensor((0.02 * rng.normal(size=(n_layer_ids, d_model))).astype(dtype), requires_grad=True)
    p["dec.pos_slot"] = Tensor((0.02 * rng.normal(size=(n_slot_ids, d_model))).astype(dtype), requires_grad=True)
    _init_stack(p, "dec", num_decoder_layers, d_model, ff, rng, dtype)
    out = _dense(rng, d_model, token_len, dtype)
    out.data *= 0.1
    p["dec.out.w"], p["dec.out.b"] = out, _zeros(token_len, dtype=dtype)

    hidden = max(proj_dim, embed_dim)
    p["proj.1.w"], p["proj.1.b"] = _dense(rng, embed_dim, hidden, dtype), _zeros(hidden, dtype=dtype)
    p["proj.2.w"], p["proj.2.b"] = _dense(rng, hidden, proj_dim, dtype), _zeros(proj_dim, dtype=dtype)
    return p


def _attention(x: Tensor, p: Params, q: str, heads: int) -> Tensor:
    b, t, d = x.shape
    dh = d // heads
    qkv = add(matmul(x, p[f"{q}.qkv.w"]), p[f"{q}.qkv.b"])
    qkv = transpose(reshape(qkv, (b, t, 3, heads, dh)), (2, 0, 3, 1, 4))
    qh, kh, vh = slice_(qkv, 0), slice_(qkv, 1), slice_(qkv, 2)
    scores = matmul(qh, transpose(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    att = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(att, vh), (0, 2, 1, 3)), (b, t, d))
    return add(matmul(ctx, p[f"{q}.out.w"]), p[f"{q}.out.b"])


def _stack(x: Tensor, p: Params, prefix: str, n_layers: int, heads: int) -> Tensor:
    for i in range(n_layers):
        q = f"{prefix}.{i}"
        x = add(x, _attention(layernorm(x, p[f"{q}.ln1.g"], p[f"{q}.ln1.b"]), p, q, heads))
        h = layernorm(x, p[f"{q}.ln2.g"], p[f"{q}.ln2.b"])
        h = relu(add(matmul(h, p[f"{q}.ff1.w"]), p[f"{q}.ff1.b"]))
        x = add(x, add(matmul(h, p[f"{q}.ff2.w"]), p[f"{q}.ff2.b"]))
    return layernorm(x, p[f"{prefix}.lnf.g"], p[f"{prefix}.lnf.b"])


def _positional(p: Params, prefix: str, positions: np.ndarray) -> Tensor:
    return add(embedding(p[f"{prefix}.pos_layer"], positions[:, 0]),
               embedding(p[f"{prefix}.pos_slot"], positions[:, 1]))


def encode(tokens, p: Params, positions: np.ndarray, heads: int, n_layers: int) -> Tensor:
    """(B, T, token_len) tokens -> (B, T, embed_dim) latent codes, one per token."""
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(np.asarray(tokens, dtype=p["enc.in.w"].dtype))
    h = add(matmul(tokens, p["enc.in.w"]), p["enc.in.b"])
    h = add(h, _positional(p, "enc", positions))
    h = _stack(h, p, "enc", n_layers, heads)
    return add(matmul(h, p["enc.latent.w"]), p["enc.latent.b"])


def decode(z, p: Params, positions: np.ndarray, heads: int, n_layers: int) -> Tensor:
    """(B, T, embed_dim) latent codes -> (B, T, token_len) reconstructed tokens."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=p["dec.in.w"].dtype))
    h = add(matmul(z, p["dec.in.w"]), p["dec.in.b"])
    h = add(h, _positional(p, "dec", positions))
    h = _stack(h, p, "dec", n_layers, heads)
    return add(matmul(h, p["dec.out.w"]), p["dec.out.b"])


def project(z, p: Params) -> Tensor:
    """Mean-pool over tokens, 2-layer MLP, L2-normalize: (B, T, E) -> (B, proj_dim)."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=p["proj.1.w"].dtype))
    pooled = mean(z, axis=1)
    h = relu(add(matmul(pooled, p["proj.1.w"]), p["proj.1.b"]))
    h = add(matmul(h, p["proj.2.w"]), p["proj.2.b"])
    norm = sqrt(add(sum_(mul(h, h), axis=1), 1e-12))
    # broadcasting runs over leading dims only, so divide column-major
    return transpose(div(transpose(h), norm))
