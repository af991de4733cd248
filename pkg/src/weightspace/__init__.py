"""Weight-space learning: model zoos, hyper-representation autoencoders and their evaluation."""

__version__ = "0.1.0"
