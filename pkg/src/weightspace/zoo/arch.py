"""CNN architecture descriptors, flat-parameter layout and the functional forward pass.

Parameters of every layer are stored as rows, one per output unit: the unit's
fan-in weights (row-major, ``c_in x k x k`` for convolutions) followed by its
bias. A flat parameter vector is the concatenation of these row blocks in
layer order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple, Union

import numpy as np

from ..exceptions import ConfigError, ShapeError
from ..tensor import Tensor, conv2d, matmul, maxpool2d, no_grad, relu, reshape, slice_, transpose


@dataclass(frozen=True)
class Conv:
    c_in: int
    c_out: int
    k: int

    @property
    def fan_in(self) -> int:
        return self.c_in * self.k * self.k


@dataclass(frozen=True)
class MaxPool:
    k: int = 2
    stride: int = 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    d_in: int
    d_out: int

    @property
    def fan_in(self) -> int:
        return self.d_in


Layer = Union[Conv, MaxPool, ReLU, Flatten, Linear]
_KINDS = {"conv": Conv, "maxpool": MaxPool, "relu": ReLU, "flatten": Flatten, "linear": Linear}
_NAMES = {v: k for k, v in _KINDS.items()}


@dataclass(frozen=True)
class ParamBlock:
    """Location of one parametric layer inside the flat vector."""

    layer_index: int
    offset: int
    rows: int
    row_len: int  # fan_in + 1 (bias)

    @property
    def size(self) -> int:
        return self.rows * self.row_len


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: Tuple[Layer, ...]
    input_shape: Tuple[int, int, int]  # (C, H, W)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self._shapes()  # validates composition

    def _shapes(self) -> List[tuple]:
        shape: tuple = self.input_shape
        shapes = [shape]
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3 or shape[0] != layer.c_in:
                    raise ShapeError(f"layer {i} Conv expects {layer.c_in} input channels, got shape {shape}")
                if layer.k <= 0:
                    raise ConfigError(f"layer {i} Conv kernel must be positive")
                h, w = shape[1] - layer.k + 1, shape[2] - layer.k + 1
                if h <= 0 or w <= 0:
                    raise ShapeError(f"layer {i} Conv kernel {layer.k} exceeds spatial size {shape[1:]}")
                shape = (layer.c_out, h, w)
            elif isinstance(layer, MaxPool):
                if len(shape) != 3:
                    raise ShapeError(f"layer {i} MaxPool needs a spatial input, got {shape}")
                if layer.k <= 0 or layer.stride <= 0:
                    raise ConfigError(f"layer {i} MaxPool kernel/stride must be positive")
                h = (shape[1] - layer.k) // layer.stride + 1
                w = (shape[2] - layer.k) // layer.stride + 1
                if h <= 0 or w <= 0:
                    raise ShapeError(f"layer {i} MaxPool kernel {layer.k} exceeds spatial size {shape[1:]}")
                shape = (shape[0], h, w)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Linear):
                if len(shape) != 1 or shape[0] != layer.d_in:
                    raise ShapeError(f"layer {i} Linear expects input dim {layer.d_in}, got shape {shape}")
                shape = (layer.d_out,)
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ConfigError(f"layer {i}: unknown layer type {type(layer).__name__}")
            shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError(f"architecture must end in a vector output, ends in {shape}")
        return shapes

    @property
    def output_dim(self) -> int:
        return self._shapes()[-1][0]

    @property
    def blocks(self) -> List[ParamBlock]:
        out, offset = [], 0
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv, Linear)):
                rows = layer.c_out if isinstance(layer, Conv) else layer.d_out
                blk = ParamBlock(i, offset, rows, layer.fan_in + 1)
                out.append(blk)
                offset += blk.size
        return out

    @property
    def n_params(self) -> int:
        return sum(b.size for b in self.blocks)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"type": _NAMES[type(layer)]}
            d.update(layer.__dict__)
            layers.append(d)
        return {"input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        layers = []
        for i, ld in enumerate(d["layers"]):
            ld = dict(ld)
            kind = ld.pop("type", None)
            if kind not in _KINDS:
                raise ConfigError(f"layer {i}: unknown layer type {kind!r}; expected one of {sorted(_KINDS)}")
            try:
                layers.append(_KINDS[kind](**ld))
            except TypeError as exc:
                raise ConfigError(f"layer {i} ({kind}): {exc}") from None
        return cls(tuple(layers), tuple(d["input_shape"]))


def desk_arch(channels: int = 1, side: int = 16, classes: int = 3,
              conv_channels: Tuple[int, int] = (8, 12), hidden: int = 16) -> ArchitectureSpec:
    """Two conv blocks and two linear layers, in the same order as the paper-scale CNN."""
    c1, c2 = conv_channels
    s = (side - 2) // 2
    s = (s - 2) // 2
    return ArchitectureSpec(
        (Conv(channels, c1, 3), MaxPool(2, 2), ReLU(),
         Conv(c1, c2, 3), MaxPool(2, 2), ReLU(), Flatten(),
         Linear(c2 * s * s, hidden), ReLU(), Linear(hidden, classes)),
        (channels, side, side),
    )


def paper_arch() -> ArchitectureSpec:
    """Three conv blocks on 32x32x3 inputs with a 60-20-10 head (10,853 parameters)."""
    return ArchitectureSpec(
        (Conv(3, 16, 3), MaxPool(2, 2), ReLU(),
         Conv(16, 32, 3), MaxPool(2, 2), ReLU(),
         Conv(32, 15, 3), MaxPool(2, 2), ReLU(), Flatten(),
         Linear(60, 20), ReLU(), Linear(20, 10)),
        (3, 32, 32),
    )


def mlp_arch(d_in: int, hidden: Sequence[int], classes: int) -> ArchitectureSpec:
    """Fully connected network on a (1, 1, d_in) input."""
    layers: list = [Flatten()]
    prev = d_in
    for h in hidden:
        layers += [Linear(prev, h), ReLU()]
        prev = h
    layers.append(Linear(prev, classes))
    return ArchitectureSpec(tuple(layers), (1, 1, d_in))


def linear_arch(d_in: int, classes: int) -> ArchitectureSpec:
    """Purely linear model ``f(x) = Wx + b``."""
    return ArchitectureSpec((Flatten(), Linear(d_in, classes)), (1, 1, d_in))


INIT_SCHEMES = ("uniform", "normal", "kaiming_uniform", "kaiming_normal")
UNIFORM_BOUND = 0.1
NORMAL_STD = 0.1


def build_model(arch: ArchitectureSpec, init_scheme: str = "kaiming_uniform", seed: int = 0,
                dtype=np.float32) -> np.ndarray:
    """Initial flat parameter vector for ``arch``.

    uniform draws from [-0.1, 0.1] and normal from N(0, 0.1^2), weights and
    biases alike. Kaiming variants scale weights by fan-in (ReLU gain) and
    start biases at zero.
    """
    if init_scheme not in INIT_SCHEMES:
        raise ConfigError(f"unknown init scheme {init_scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    theta = np.empty(arch.n_params, dtype=np.float64)
    for blk in arch.blocks:
        fan_in = blk.row_len - 1
        shape = (blk.rows, blk.row_len)
        if init_scheme == "uniform":
            rows = rng.uniform(-UNIFORM_BOUND, UNIFORM_BOUND, size=shape)
        elif init_scheme == "normal":
            rows = rng.normal(0.0, NORMAL_STD, size=shape)
        elif init_scheme == "kaiming_uniform":
            bound = np.sqrt(6.0 / fan_in)
            rows = rng.uniform(-bound, bound, size=shape)
            rows[:, -1] = 0.0
        else:
            rows = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            rows[:, -1] = 0.0
        theta[blk.offset:blk.offset + blk.size] = rows.reshape(-1)
    return theta.astype(dtype)


def unpack_layer(theta: np.ndarray, arch: ArchitectureSpec, layer_index: int) -> Tuple[np.ndarray, np.ndarray]:
    """(weight, bias) arrays of one parametric layer, weight in its natural shape."""
    for blk in arch.blocks:
        if blk.layer_index == layer_index:
            rows = np.asarray(theta)[blk.offset:blk.offset + blk.size].reshape(blk.rows, blk.row_len)
            layer = arch.layers[layer_index]
            w = rows[:, :-1]
            if isinstance(layer, Conv):
                w = w.reshape(layer.c_out, layer.c_in, layer.k, layer.k)
            return w, rows[:, -1]
    raise ConfigError(f"layer {layer_index} has no parameters")


def _check_input(arch: ArchitectureSpec, x: np.ndarray) -> np.ndarray:
    if x.ndim == 3 and tuple(x.shape) == arch.input_shape:
        x = x[None]
    if x.ndim == 2 and arch.input_shape[:2] == (1, 1) and x.shape[1] == arch.input_shape[2]:
        x = x.reshape(x.shape[0], 1, 1, x.shape[1])
    if x.ndim != 4 or tuple(x.shape[1:]) != arch.input_shape:
        raise ShapeError(f"input batch of shape {x.shape} does not match architecture input {arch.input_shape}")
    return x


def forward_classifier(theta, arch: ArchitectureSpec, x) -> Tensor:
    """Logits of shape (batch, classes); differentiable w.r.t. ``theta`` when it is a Tensor."""
    if not isinstance(theta, Tensor):
        theta = Tensor(np.asarray(theta))
    if theta.shape != (arch.n_params,):
        raise ShapeError(f"theta has shape {theta.shape}, architecture needs ({arch.n_params},)")
    xd = x.data if isinstance(x, Tensor) else np.asarray(x)
    xd = _check_input(arch, xd).astype(theta.dtype, copy=False)
    h = Tensor(xd)
    blocks = {b.layer_index: b for b in arch.blocks}
    for i, layer in enumerate(arch.layers):
        if isinstance(layer, (Conv, Linear)):
            blk = blocks[i]
            rows = reshape(slice_(theta, slice(blk.offset, blk.offset + blk.size)), (blk.rows, blk.row_len))
            w = slice_(rows, (slice(None), slice(0, blk.row_len - 1)))
            b = slice_(rows, (slice(None), blk.row_len - 1))
            if isinstance(layer, Conv):
                h = conv2d(h, reshape(w, (layer.c_out, layer.c_in, layer.k, layer.k)), b)
            else:
                h = matmul(h, transpose(w)) + b
        elif isinstance(layer, MaxPool):
            h = maxpool2d(h, layer.k, layer.stride)
        elif isinstance(layer, ReLU):
            h = relu(h)
        elif isinstance(layer, Flatten):
            h = reshape(h, (h.shape[0], -1))
    return h


def predict_logits(theta, arch: ArchitectureSpec, x, chunk: int = 512) -> np.ndarray:
    """Graph-free logits, evaluated in fixed-size chunks for reproducible accumulation order."""
    theta = np.asarray(theta.data if isinstance(theta, Tensor) else theta)
    x = _check_input(arch, np.asarray(x))
    outs = []
    with no_grad():
        for start in range(0, len(x), chunk):
            outs.append(forward_classifier(theta, arch, x[start:start + chunk]).data)
    if not outs:
        return np.zeros((0, arch.output_dim), dtype=theta.dtype)
    return np.concatenate(outs, axis=0)


def accuracy(theta, arch: ArchitectureSpec, x, y) -> float:
    logits = predict_logits(theta, arch, x)
    return float(np.mean(logits.argmax(axis=1) == np.asarray(y)))
