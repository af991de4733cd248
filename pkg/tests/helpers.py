"""Randomized gradient-check cases shared by the unit and acceptance suites."""
from __future__ import annotations

from typing import Callable, List, NamedTuple
from unittest import mock

import numpy as np

from weightspace import tensor as T
from weightspace.losses import behavioral_loss, composite_loss, ntxent_loss, structural_loss
from weightspace.tensor import Tensor, backward, default_dtype, max_relative_error, numerical_gradient
from weightspace.zoo import arch as arch_mod
from weightspace.zoo.arch import build_model, desk_arch, linear_arch, mlp_arch


class Case(NamedTuple):
    name: str
    fn: Callable[[List[Tensor]], Tensor]  # scalar output
    arrays: List[np.ndarray]


def check_case(case: Case, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences (float64)."""
    with default_dtype(np.float64):
        arrays = [np.array(a, dtype=np.float64) for a in case.arrays]
        ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = case.fn(ts)
        backward(out)
        numeric = numerical_gradient(lambda *arrs: float(case.fn([Tensor(a) for a in arrs]).data), arrays, h)
    return max(max_relative_error(t.grad, n) for t, n in zip(ts, numeric))


def _away(rng, shape, margin=0.1):
    """Normal draws pushed away from zero (keeps ReLU kinks out of the difference stencil)."""
    x = rng.normal(size=shape)
    return np.sign(x) * (margin + np.abs(x))


def _distinct(rng, shape, gap=0.05):
    """Values with pairwise gaps of at least ``gap`` (no max-pool ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, size=n)).reshape(shape) - n * gap / 2


def _proj(out: Tensor, rng) -> Tensor:
    """Reduce to a scalar with a fixed random projection."""
    r = rng.normal(size=out.shape)
    return T.sum_(T.mul(out, Tensor(r)))


def op_cases(seed: int) -> List[Case]:
    rng = np.random.default_rng(seed)
    a, b = (int(v) for v in rng.integers(2, 5, size=2))
    c = int(rng.integers(2, 4))
    cases = []

    def add(name, f, *arrays):
        cases.append(Case(f"{name}[{seed}]", f, list(arrays)))

    def proj(f):
        r_seed = int(rng.integers(1 << 30))
        return lambda ts: _proj(f(ts), np.random.default_rng(r_seed))

    x, y = rng.normal(size=(a, b)), rng.normal(size=(a, b))
    add("add", proj(lambda t: T.add(t[0], t[1])), x, y)
    add("add_bcast", proj(lambda t: T.add(t[0], t[1])), rng.normal(size=(c, a, b)), rng.normal(size=(a, b)))
    add("sub", proj(lambda t: T.sub(t[0], t[1])), x, y)
    add("mul", proj(lambda t: T.mul(t[0], t[1])), x, y)
    add("div", proj(lambda t: T.div(t[0], t[1])), x, _away(rng, (a, b), 0.5))
    add("neg", proj(lambda t: T.neg(t[0])), x)
    add("power", proj(lambda t: T.power(t[0], 3.0)), x)
    add("matmul", proj(lambda t: T.matmul(t[0], t[1])), rng.normal(size=(a, b)), rng.normal(size=(b, c)))
    add("matmul_batched", proj(lambda t: T.matmul(t[0], t[1])),
        rng.normal(size=(c, a, b)), rng.normal(size=(c, b, a)))
    add("matmul_shared", proj(lambda t: T.matmul(t[0], t[1])), rng.normal(size=(c, a, b)), rng.normal(size=(b, a)))
    add("relu", proj(lambda t: T.relu(t[0])), _away(rng, (a, b)))
    add("tanh", proj(lambda t: T.tanh(t[0])), x)
    add("exp", proj(lambda t: T.exp(t[0])), x)
    add("log", proj(lambda t: T.log(t[0])), rng.uniform(0.5, 2.0, size=(a, b)))
    add("sqrt", proj(lambda t: T.sqrt(t[0])), rng.uniform(0.5, 2.0, size=(a, b)))
    add("softmax", proj(lambda t: T.softmax(t[0], axis=-1)), x)
    add("log_softmax", proj(lambda t: T.log_softmax(t[0], axis=-1)), x)
    add("sum_axis", proj(lambda t: T.sum_(t[0], axis=1)), rng.normal(size=(a, b, c)))
    add("sum_all", lambda t: T.sum_(T.mul(t[0], t[0])), x)
    add("mean_keep", proj(lambda t: T.mean(t[0], axis=0, keepdims=True)), x)
    add("reshape", proj(lambda t: T.reshape(t[0], (b, a))), x)
    add("transpose", proj(lambda t: T.transpose(t[0], (2, 0, 1))), rng.normal(size=(a, b, c)))
    add("slice_basic", proj(lambda t: T.slice_(t[0], (slice(1, None), slice(0, -1)))), x)
    add("slice_fancy", proj(lambda t: T.slice_(t[0], np.array([0, 0, a - 1]))), x)
    idx = rng.integers(0, b, size=5)
    add("take", proj(lambda t: T.take(t[0], idx, axis=-1)), x)
    add("concat", proj(lambda t: T.concat([t[0], t[1]], axis=1)), x, rng.normal(size=(a, c)))
    add("stack", proj(lambda t: T.stack([t[0], t[1]], axis=0)), x, y)
    add("layernorm", proj(lambda t: T.layernorm(t[0], t[1], t[2])),
        rng.normal(size=(a, b + 2)), rng.normal(size=b + 2), rng.normal(size=b + 2))
    emb_idx = rng.integers(0, a, size=(c, 3))
    add("embedding", proj(lambda t: T.embedding(t[0], emb_idx)), rng.normal(size=(a, b)))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    add("conv2d", proj(lambda t: T.conv2d(t[0], t[1], t[2], stride=stride, padding=pad)),
        rng.normal(size=(2, c, 6, 5)), rng.normal(size=(a, c, 3, 3)), rng.normal(size=a))
    add("maxpool2d", proj(lambda t: T.maxpool2d(t[0], 2)), _distinct(rng, (2, c, 5, 6)))
    add("maxpool2d_overlap", proj(lambda t: T.maxpool2d(t[0], 3, stride=2)), _distinct(rng, (1, c, 7, 7)))
    return cases


def _tiny_cnn():
    return desk_arch(channels=1, side=10, classes=3, conv_channels=(2, 2), hidden=4)


def kink_margin(theta: np.ndarray, arch, x: np.ndarray) -> float:
    """Smallest |ReLU pre-activation| or top-two max-pool gap seen in a forward pass."""
    margins = []
    relu, maxpool = arch_mod.relu, arch_mod.maxpool2d

    def relu_spy(h):
        margins.append(float(np.abs(h.data).min()))
        return relu(h)

    def pool_spy(h, k, stride):
        win = np.lib.stride_tricks.sliding_window_view(h.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        top2 = np.sort(win.reshape(win.shape[:4] + (-1,)), axis=-1)[..., -2:]
        margins.append(float((top2[..., 1] - top2[..., 0]).min()))
        return maxpool(h, k, stride)

    with mock.patch.object(arch_mod, "relu", relu_spy), mock.patch.object(arch_mod, "maxpool2d", pool_spy), \
            default_dtype(np.float64):
        arch_mod.forward_classifier(theta, arch, x)
    return min(margins, default=np.inf)


def loss_cases(seed: int) -> List[Case]:
    rng = np.random.default_rng(10_000 + seed)
    cases = []
    k, p = 2, 7
    theta = rng.normal(size=(k, p))
    cases.append(Case(f"structural[{seed}]", lambda t: structural_loss(t[0], theta), [rng.normal(size=(k, p))]))

    arch = mlp_arch(4, [5], 3) if seed % 2 == 0 else _tiny_cnn()
    th = np.stack([build_model(arch, "normal", seed + i, np.float64) for i in range(2)])
    queries = rng.uniform(0, 1, size=(6,) + arch.input_shape)
    # redraw until no ReLU/max-pool kink lies within reach of the difference stencil
    while True:
        th_hat = th + 0.05 * _away(rng, th.shape, 0.0)
        if min(kink_margin(t, arch, queries) for t in th_hat) > 1e-4:
            break
    for variant in ("mse-logits", "cross-entropy", "distillation"):
        cases.append(Case(f"behavioral-{variant}[{seed}]",
                          lambda t, v=variant: behavioral_loss(t[0], th, arch, queries, v, 2.0), [th_hat.copy()]))

    z1, z2 = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    cases.append(Case(f"ntxent[{seed}]", lambda t: ntxent_loss(t[0], t[1], 0.5), [z1, z2]))

    lin = linear_arch(3, 2)
    th_l = rng.normal(size=(2, lin.n_params))
    q_l = rng.normal(size=(5,) + lin.input_shape)
    gamma, beta = 0.05, float(rng.uniform(0.1, 0.9))

    def composite(t):
        lc = ntxent_loss(t[1], t[2], 0.1)
        return composite_loss(lc, structural_loss(t[0], th_l), behavioral_loss(t[0], th_l, lin, q_l), gamma, beta)

    cases.append(Case(f"composite[{seed}]", composite,
                      [th_l + 0.1 * rng.normal(size=th_l.shape), rng.normal(size=(2, 3)), rng.normal(size=(2, 3))]))
    return cases


def toy_ae_case(seed: int = 0) -> Case:
    """Composite loss w.r.t. the 10 weights of a linear decoder feeding a 5-parameter linear classifier."""
    rng = np.random.default_rng(seed)
    lin = linear_arch(4, 1)
    theta = rng.normal(size=(3, lin.n_params))
    z = rng.normal(size=(3, 2))
    z_views = (z + 0.1 * rng.normal(size=z.shape), z + 0.1 * rng.normal(size=z.shape))
    q = rng.normal(size=(4,) + lin.input_shape)

    def fn(t):
        theta_hat = T.matmul(Tensor(z), t[0])
        l_c = ntxent_loss(Tensor(z_views[0]), Tensor(z_views[1]), 0.5)
        return composite_loss(l_c, structural_loss(theta_hat, theta), behavioral_loss(theta_hat, theta, lin, q),
                              0.05, 0.1)

    return Case("toy-ae", fn, [rng.normal(size=(2, lin.n_params))])
