import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import Case, check_case, loss_cases
from oracles import ntxent_oracle
from weightspace.exceptions import ConfigError, ContractError
from weightspace.losses import (
    BEHAVIORAL_VARIANTS,
    LossConfig,
    QuerySampler,
    behavioral_loss,
    composite_loss,
    ntxent_loss,
    query_registry_from,
    sample_queries,
    structural_loss,
)
from weightspace.tensor import Tensor, backward, default_dtype
from weightspace.tokenizer import apply_permutation, sample_permutation
from weightspace.zoo.arch import build_model, linear_arch, mlp_arch


def unit_rows(rng, k, d):
    z = rng.normal(size=(k, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@pytest.mark.parametrize("case", [c for s in range(4) for c in loss_cases(s)], ids=lambda c: c.name)
def test_loss_gradients_match_central_differences(case):
    assert check_case(case) < 1e-4


# -- structural -----------------------------------------------------------------------------

def test_structural_examples():
    theta = np.random.default_rng(0).normal(size=(3, 5))
    assert float(structural_loss(theta, theta).data) == 0.0
    assert float(structural_loss(np.ones(3), np.zeros(3)).data) == 1.5
    with pytest.raises(ContractError):
        structural_loss(np.ones(3), np.ones(4))


def test_structural_gradient_is_scaled_difference():
    rng = np.random.default_rng(1)
    th, th_hat = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    with default_dtype(np.float64):
        t = Tensor(th_hat, requires_grad=True)
        backward(structural_loss(t, th))
    np.testing.assert_allclose(t.grad, (th_hat - th) / 4, rtol=1e-14)


# -- behavioral ------------------------------------------------------------------------------

@pytest.mark.parametrize("variant", BEHAVIORAL_VARIANTS)
def test_behavioral_self_comparison_is_zero(variant):
    arch = mlp_arch(4, [5], 3)
    th = np.stack([build_model(arch, "normal", s) for s in range(3)])
    x = np.random.default_rng(0).uniform(size=(8,) + arch.input_shape)
    assert float(behavioral_loss(th, th, arch, x, variant).data) == 0.0


def test_behavioral_mse_direct_formula():
    arch = linear_arch(2, 3)
    theta = np.zeros(arch.n_params)
    theta_hat = theta.copy()
    theta_hat[2] = 2.0  # bias of class 0: logits differ by (2, 0, 0)
    x = np.ones((1,) + arch.input_shape)
    assert float(behavioral_loss(theta_hat, theta, arch, x).data) == 2.0


def test_behavioral_gradient_on_fifty_parameter_model():
    arch = mlp_arch(3, [5], 5)
    assert arch.n_params == 50
    rng = np.random.default_rng(4)
    theta = build_model(arch, "normal", 0, np.float64)
    theta_hat = theta + 0.05 * rng.normal(size=theta.shape)
    x = rng.uniform(size=(6,) + arch.input_shape)
    case = Case("b50", lambda t: behavioral_loss(t[0], theta, arch, x), [theta_hat])
    assert check_case(case) < 1e-4


def test_original_branch_gets_no_gradient():
    arch = linear_arch(2, 2)
    rng = np.random.default_rng(0)
    th = Tensor(rng.normal(size=arch.n_params), requires_grad=True)
    th_hat = Tensor(rng.normal(size=arch.n_params), requires_grad=True)
    backward(behavioral_loss(th_hat, th.data, arch, rng.uniform(size=(3,) + arch.input_shape)))
    assert th.grad is None and np.any(th_hat.grad != 0)


@pytest.mark.parametrize("variant", BEHAVIORAL_VARIANTS)
def test_behavioral_loss_invariant_under_permutation(small_zoo, dataset, variant):
    arch = small_zoo.arch
    theta = small_zoo.final()[0].theta
    perm = apply_permutation(theta, sample_permutation(arch, seed=0), arch)
    assert float(behavioral_loss(perm, theta, arch, dataset.x_test[:64], variant).data) < 1e-8


def test_behavioral_errors():
    arch = linear_arch(2, 2)
    with pytest.raises(ContractError):
        behavioral_loss(np.zeros(6), np.zeros(6), arch, np.zeros((0,) + arch.input_shape))
    with pytest.raises(ConfigError):
        behavioral_loss(np.zeros(6), np.zeros(6), arch, np.zeros((1,) + arch.input_shape), "hinge")


# -- contrastive ----------------------------------------------------------------------------------

def test_ntxent_orthogonal_example():
    z = np.eye(2)
    with default_dtype(np.float64):
        got = float(ntxent_loss(z, z, temperature=1.0).data)
    assert abs(got - math.log(1 + 2 * math.exp(-1))) < 1e-12
    assert abs(got - ntxent_oracle(z, z, 1.0)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(k=st.integers(2, 6), d=st.integers(2, 8), tau=st.floats(0.1, 2.0), seed=st.integers(0, 2**32 - 1))
def test_ntxent_matches_enumeration_oracle(k, d, tau, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = unit_rows(rng, k, d), unit_rows(rng, k, d)
    with default_dtype(np.float64):
        got = float(ntxent_loss(z1, z2, tau).data)
    assert abs(got - ntxent_oracle(z1, z2, tau)) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(k=st.integers(2, 6), seed=st.integers(0, 2**32 - 1))
def test_ntxent_invariant_to_model_order(k, seed):
    rng = np.random.default_rng(seed)
    z1, z2 = unit_rows(rng, k, 4), unit_rows(rng, k, 4)
    order = rng.permutation(k)
    with default_dtype(np.float64):
        a = float(ntxent_loss(z1, z2, 0.5).data)
        b = float(ntxent_loss(z1[order], z2[order], 0.5).data)
    assert abs(a - b) < 1e-12


def test_ntxent_needs_negatives():
    with pytest.raises(ContractError):
        ntxent_loss(np.ones((1, 3)), np.ones((1, 3)))


# -- composite --------------------------------------------------------------------------------------

def test_composite_arithmetic():
    assert composite_loss(1.0, 2.0, 4.0, 0.5, 0.25) == 2.25


def test_composite_skips_zero_weight_terms():
    assert composite_loss(None, 2.0, None, 0.0, 1.0) == 2.0
    assert composite_loss(None, None, 4.0, 0.0, 0.0) == 4.0
    assert composite_loss(3.0, 2.0, None, 0.05, 1.0) == 0.05 * 3.0 + 0.95 * 2.0
    with pytest.raises(ContractError):
        composite_loss(None, None, 4.0, 0.5, 0.0)


def test_composite_gradient_is_weighted_sum():
    arch = linear_arch(3, 2)
    rng = np.random.default_rng(7)
    th = rng.normal(size=(2, arch.n_params))
    th_hat = th + 0.1 * rng.normal(size=th.shape)
    x = rng.normal(size=(4,) + arch.input_shape)
    beta = 0.3
    with default_dtype(np.float64):
        grads = []
        for fn in (lambda t: structural_loss(t, th), lambda t: behavioral_loss(t, th, arch, x),
                   lambda t: composite_loss(None, structural_loss(t, th), behavioral_loss(t, th, arch, x),
                                            0.0, beta)):
            t = Tensor(th_hat.copy(), requires_grad=True)
            backward(fn(t))
            grads.append(t.grad)
    np.testing.assert_allclose(grads[2], beta * grads[0] + (1 - beta) * grads[1], rtol=1e-12)


# -- config and queries ------------------------------------------------------------------------------

def test_loss_config_validation():
    cfg = LossConfig()
    assert cfg.uses_contrastive and cfg.uses_structural and cfg.uses_behavioral
    assert not LossConfig(gamma=0, beta=1).uses_behavioral
    for bad in (dict(gamma=1.5), dict(beta=-0.1), dict(n_queries=0), dict(ntxent_temperature=0),
                dict(behavioral_variant="l1"), dict(query_source="imagenet")):
        with pytest.raises(ConfigError):
            LossConfig(**bad)


def test_trainset_queries_come_from_training_data(dataset):
    batch = sample_queries("zoo-trainset", 256, 0, query_registry_from(dataset))
    assert batch.inputs.shape == (256,) + dataset.input_shape
    pool = {x.tobytes() for x in dataset.x_train}
    assert all(x.tobytes() in pool for x in batch.inputs)


def test_random_uniform_is_reproducible(dataset):
    reg = query_registry_from(dataset)
    a = sample_queries("random-uniform", 32, 5, reg)
    b = sample_queries("random-uniform", 32, 5, reg)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1


def test_shifted_queries_differ_in_class_statistics(dataset, shifted):
    reg = query_registry_from(dataset, shifted)
    a = sample_queries("zoo-trainset", 1000, 1, reg).inputs
    b = sample_queries("shifted-set", 1000, 1, reg).inputs
    assert np.abs(a.mean(axis=0) - b.mean(axis=0)).mean() > 0


def test_unknown_or_unregistered_source(dataset):
    with pytest.raises(ConfigError):
        sample_queries("imagenet", 4, 0, {})
    with pytest.raises(ConfigError):
        QuerySampler("shifted-set", query_registry_from(dataset), 4)


def test_sampler_draws_fresh_batches(dataset):
    sampler = QuerySampler("zoo-trainset", query_registry_from(dataset), 16)
    rng = np.random.default_rng(0)
    assert sampler(rng).inputs.tobytes() != sampler(rng).inputs.tobytes()
