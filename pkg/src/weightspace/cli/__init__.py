"""Command-line orchestration of data, zoo, autoencoder and evaluation stages."""
from .main import main

__all__ = ["main"]
