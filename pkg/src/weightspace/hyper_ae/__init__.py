"""Transformer autoencoder over tokenized model weights."""
from .estimator import AEConfig, HyperRepresentationAE, LatentCode
from .transformer import decode, encode, init_params, project

__all__ = ["AEConfig", "HyperRepresentationAE", "LatentCode", "decode", "encode", "init_params", "project"]
