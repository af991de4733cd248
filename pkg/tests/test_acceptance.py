"""Acceptance suite: one test per criterion, each printed as a PASS/FAIL line in the terminal summary.

Criteria 6 to 10 and 12 drive the command line end to end on the default desk
configuration (36-model zoo, 100-epoch autoencoders) and take about an hour in
total on one core.
"""
import json
import re
import subprocess
import sys
import time

import numpy as np
import pytest

from helpers import check_case, loss_cases, op_cases, toy_ae_case
from oracles import conv_oracle, diversity_oracle, kde_oracle, ntxent_oracle, ridge_oracle
from weightspace import grad_analysis as ga
from weightspace import tensor as T
from weightspace.downstream import LatentKDEGenerator, LinearProbe, diversity
from weightspace.hyper_ae import AEConfig
from weightspace.losses import ntxent_loss
from weightspace.tensor import default_dtype
from weightspace.tensor.autograd import OP_KINDS
from weightspace.tokenizer import apply_permutation, compression_ratio, detokenize, sample_permutation, tokenize
from weightspace.zoo.arch import build_model, desk_arch, linear_arch, mlp_arch, paper_arch, predict_logits
from weightspace.zoo.forge import agreement


def measured(record_property, text):
    record_property("measured", text)


def run_cli(out, command):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "weightspace.cli.main", command, "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, f"{command} exited {proc.returncode}: {proc.stderr[-2000:]}"
    return time.perf_counter() - start


class DeskRun:
    """gen-data, train-zoo, ablate-losses and ablate-queries on the default configuration."""

    def __init__(self, out):
        self.out = out
        self.seconds = {cmd: run_cli(out, cmd) for cmd in ("gen-data", "train-zoo", "ablate-losses", "ablate-queries")}

    def rows(self, command, key):
        table = json.loads((self.out / command / "metrics.json").read_text())
        return {row[key]: row for row in next(iter(table.values()))["rows"]}

    @property
    def losses(self):
        return self.rows("ablate-losses", "losses")

    @property
    def queries(self):
        return self.rows("ablate-queries", "query_source")


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    return DeskRun(tmp_path_factory.mktemp("desk-a"))


@pytest.fixture(scope="module")
def trained_model(small_zoo, dataset):
    return small_zoo.final("train")[0].theta.astype(np.float64), small_zoo.arch, dataset.x_test[:16].astype(np.float64)


# -- property suites --------------------------------------------------------------------------

@pytest.mark.criterion(1, "autodiff matches central differences for every op and loss")
def test_criterion_01_gradient_correctness(record_property):
    start = time.perf_counter()
    cases = [c for s in range(3) for c in op_cases(s)] + [c for s in range(4) for c in loss_cases(s)]
    cases.append(toy_ae_case())
    errors = {c.name: check_case(c) for c in cases}
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    measured(record_property, f"{len(cases)} cases, max rel err {errors[worst]:.2e} ({worst}), {elapsed:.0f}s")
    kinds = {re.sub(r"\[.*", "", name) for name in errors}
    assert all(any(k == op or k.startswith(op + "_") for k in kinds) for op in OP_KINDS)
    assert {"structural", "ntxent", "composite", "behavioral-mse-logits", "behavioral-cross-entropy",
            "behavioral-distillation"} <= kinds
    assert len(cases) >= 100
    assert errors[worst] < 1e-4
    assert elapsed < 120


@pytest.mark.criterion(2, "permutations preserve behavior exactly")
def test_criterion_02_behavior_preserving_permutations(small_zoo, dataset, record_property):
    start = time.perf_counter()
    checkpoints = small_zoo.select()
    rng = np.random.default_rng(0)
    x = dataset.x_test
    agreements, deviations = [], []
    for i in range(50):
        ck = checkpoints[int(rng.integers(len(checkpoints)))]
        theta = ck.theta.astype(np.float32)
        perm = apply_permutation(theta, sample_permutation(small_zoo.arch, seed=1000 + i), small_zoo.arch)
        agreements.append(agreement(theta, perm, small_zoo.arch, x))
        dev = predict_logits(perm, small_zoo.arch, x) - predict_logits(theta, small_zoo.arch, x)
        deviations.append(float(np.max(np.abs(dev))))
    elapsed = time.perf_counter() - start
    measured(record_property, f"min agreement {min(agreements)}, max logit dev {max(deviations):.2e}, {elapsed:.0f}s")
    assert all(a == 1.0 for a in agreements)
    assert max(deviations) < 1e-5
    assert elapsed < 60


@pytest.mark.criterion(3, "tokenizer round trip is bit-identical; full-size compression ratio")
def test_criterion_03_tokenizer_bijection(record_property):
    archs = [linear_arch(4, 2), mlp_arch(6, [5, 4], 3), desk_arch(),
             desk_arch(side=10, conv_channels=(2, 3), hidden=5), paper_arch()]
    rng = np.random.default_rng(0)
    exact = 0
    for i in range(100):
        arch = archs[i % len(archs)]
        theta = rng.normal(size=arch.n_params).astype(np.float32)
        token_len = int(rng.integers(1, 300))
        exact += detokenize(tokenize(theta, arch, token_len), arch).tobytes() == theta.tobytes()
    cfg = AEConfig.paper_scale()
    ratio = compression_ratio(cfg.token_len, cfg.embed_dim)
    measured(record_property, f"{exact}/100 exact, ratio {ratio:.4f}")
    assert exact == 100
    assert abs(ratio - 4.52) <= 0.01


@pytest.mark.criterion(4, "second-order Taylor residual; exact zero for a linear model")
def test_criterion_04_taylor_order(trained_model, record_property):
    start = time.perf_counter()
    theta, arch, x = trained_model
    res = ga.taylor_order(theta, arch, x, eps=1e-5, n_directions=20)
    lin = linear_arch(4, 3)
    rng = np.random.default_rng(0)
    theta_l = rng.integers(-8, 9, size=lin.n_params) / 4.0
    x_l = rng.integers(-4, 5, size=(5,) + lin.input_shape) / 2.0
    d = np.zeros(lin.n_params)
    d[[0, 3, 7, 12]] = 0.5
    linear = [ga.taylor_residual(theta_l, d, lin, x_l, eps) for eps in (2.0 ** -3, 2.0 ** -7, 1.0)]
    elapsed = time.perf_counter() - start
    measured(record_property, f"mean ratio {res['mean_ratio']:.4f} over {len(res['ratios'])} directions, "
                              f"linear residuals {linear}, {elapsed:.0f}s")
    assert len(res["ratios"]) == 20
    assert 3.5 <= res["mean_ratio"] <= 4.5
    assert all(r == 0.0 for r in linear)
    assert elapsed < 60


@pytest.mark.criterion(5, "alignment recomposition and first-order behavioral gradient")
def test_criterion_05_behavioral_gradient_approximation(trained_model, record_property):
    start = time.perf_counter()
    theta, arch, x = trained_model
    rng = np.random.default_rng(4)
    theta_hat = theta + 1e-2 * np.linalg.norm(theta) * ga._unit(rng.normal(size=theta.shape))
    rep = ga.behavioral_grad_check(theta, theta_hat, arch, x[:4])
    double_sum = float(np.max(np.abs(rep.approx_grad - rep.double_sum_grad)))
    align = ga.alignment_matrix(theta, theta_hat, arch, x[:4])
    J, J_hat = ga.jacobian(theta, arch, x[:4]).J, ga.jacobian(theta_hat, arch, x[:4]).J
    recompose = float(np.max(np.abs(align.F - sum(J[i].T @ J_hat[i] for i in range(4)) / 4)))
    cos = [s["cosine"] for s in ga.epsilon_sweep(theta, arch, x, (1e-1, 1e-2, 1e-3))]
    lin = linear_arch(4, 3)
    theta_l = rng.normal(size=lin.n_params)
    x_l = rng.normal(size=(6,) + lin.input_shape)
    cos_lin = [s["cosine"] for s in ga.epsilon_sweep(theta_l, lin, x_l, (1e-1, 1e-2, 1e-3))]
    elapsed = time.perf_counter() - start
    measured(record_property, f"double-sum {double_sum:.1e}, recomposition {recompose:.1e}, "
                              f"desk cosines {[f'{c:.9f}' for c in cos]}, linear cosines "
                              f"{[f'{c:.15f}' for c in cos_lin]}, {elapsed:.0f}s")
    assert double_sum <= 1e-10 and recompose <= 1e-10
    assert cos[0] < cos[1] < cos[2] and cos[2] > 0.99
    assert min(cos_lin) > 1 - 1e-12
    assert elapsed < 120


# -- desk-scale orderings ------------------------------------------------------------------------

@pytest.mark.criterion(6, "structural plus behavioral loss beats structural alone")
def test_criterion_06_synergy_ordering(desk_run, record_property):
    rows = desk_run.losses
    agree = {k: r["agreement_mean"] for k, r in rows.items()}
    l2 = {k: r["l2_mean"] for k, r in rows.items()}
    minutes = sum(desk_run.seconds[c] for c in ("gen-data", "train-zoo", "ablate-losses")) / 60
    measured(record_property, f"agreement {agree}, L2 {l2}, {minutes:.1f} min")
    assert agree["C+S+B"] > agree["C+S"]
    assert max(l2, key=l2.get) == "B"
    assert minutes < 60


@pytest.mark.criterion(7, "max-performance delta is smaller with the behavioral loss")
def test_criterion_07_max_performance_delta(desk_run, record_property):
    delta = {k: r["max_performance_delta"] for k, r in desk_run.losses.items()}
    measured(record_property, f"delta {delta}")
    assert abs(delta["C+S+B"]) < abs(delta["C+S"])


@pytest.mark.criterion(8, "generated models are more accurate with the behavioral loss and diverse")
def test_criterion_08_generative_ordering(desk_run, record_property):
    rows = desk_run.losses
    acc = {k: r["generated_accuracy_mean"] for k, r in rows.items()}
    div = {k: r["generated_diversity_structural"] for k, r in rows.items()}
    measured(record_property, f"generated accuracy {acc}, structural diversity {div}")
    assert acc["C+S+B"] > acc["C+S"]
    assert all(v is not None and v > 0 for v in div.values())


@pytest.mark.criterion(9, "reconstruction accuracy: zoo-trainset >= shifted-set > random-uniform queries")
def test_criterion_09_query_set_ordering(desk_run, record_property):
    acc = {k: r["accuracy_reconstructed_mean"] for k, r in desk_run.queries.items()}
    measured(record_property, f"reconstructed accuracy {acc}")
    assert acc["zoo-trainset"] >= acc["shifted-set"] > acc["random-uniform"]


@pytest.mark.criterion(10, "linear probe R2 with the full loss is at least that of the behavioral loss alone")
def test_criterion_10_probe_sanity(desk_run, record_property):
    r2 = {k: r["r2_test_accuracy"] for k, r in desk_run.losses.items()}
    measured(record_property, f"R2_test {r2}")
    assert r2["C+S+B"] >= r2["B"]
    assert r2["C+S+B"] > 0 and r2["B"] > 0


@pytest.mark.criterion(11, "oracle equivalences")
def test_criterion_11_oracle_equivalences(record_property):
    rng = np.random.default_rng(0)
    gaps = {}

    nt = []
    for k, d, tau in ((2, 3, 0.1), (4, 8, 0.5), (6, 5, 2.0)):
        z1, z2 = (u / np.linalg.norm(u, axis=1, keepdims=True) for u in rng.normal(size=(2, k, d)))
        with default_dtype(np.float64):
            nt.append(abs(float(ntxent_loss(z1, z2, tau).data) - ntxent_oracle(z1, z2, tau)))
    gaps["ntxent"] = max(nt)

    Z, acc = rng.normal(size=(12, 3, 2)), rng.uniform(0.2, 0.9, size=12)
    gen = LatentKDEGenerator(anchor_quantile=0.0).fit(Z, acc)
    pts = gen.sample_coords(5, seed=0)
    gaps["kde"] = max(abs(gen.coordinate_density(d, v) - kde_oracle(gen.coords_[:, d], gen.bandwidths_[d], v))
                      for d in range(gen.n_components_) for v in pts[:, d])

    arch = mlp_arch(3, [4], 2)
    thetas = np.stack([build_model(arch, "normal", i, np.float64) for i in range(5)])
    xq = rng.uniform(size=(4,) + arch.input_shape)
    div = diversity(thetas, arch, xq)
    s, b = diversity_oracle(thetas, arch, xq)
    gaps["diversity"] = max(abs(div["structural_mean"] - s), abs(div["behavioral_mean"] - b))

    X, y = rng.normal(size=(10, 3)), rng.normal(size=10)
    lp = LinearProbe(alpha=1e-3).fit(X, y)
    w, c = ridge_oracle(X, y, 1e-3)
    gaps["probe"] = max(float(np.max(np.abs(lp.coef_ - w))), abs(lp.intercept_ - c))

    conv = []
    for stride, pad, k in ((1, 0, 3), (2, 1, 3), (1, 1, 2)):
        x = rng.normal(size=(2, 2, 6, 5)).astype(np.float32)
        wt, bias = rng.normal(size=(3, 2, k, k)).astype(np.float32), rng.normal(size=3).astype(np.float32)
        out = T.conv2d(T.Tensor(x), T.Tensor(wt), T.Tensor(bias), stride=stride, padding=pad).data
        ref = conv_oracle(x.astype(np.float64), wt.astype(np.float64), bias.astype(np.float64), stride, pad)
        conv.append(float(np.max(np.abs(out - ref) / np.maximum(1.0, np.abs(ref)))))
    gaps["conv2d"] = max(conv)

    measured(record_property, ", ".join(f"{k} {v:.1e}" for k, v in gaps.items()))
    assert gaps["ntxent"] <= 1e-8
    assert gaps["kde"] <= 1e-10
    assert gaps["diversity"] <= 1e-10
    assert gaps["probe"] <= 1e-8
    assert gaps["conv2d"] <= 1e-6


@pytest.mark.criterion(12, "repeated desk runs give byte-identical metrics.json")
def test_criterion_12_determinism(desk_run, tmp_path_factory, record_property):
    again = DeskRun(tmp_path_factory.mktemp("desk-b"))
    same = {cmd: (desk_run.out / cmd / "metrics.json").read_bytes() == (again.out / cmd / "metrics.json").read_bytes()
            for cmd in ("ablate-losses", "ablate-queries")}
    measured(record_property, f"identical {same}")
    assert all(same.values())
