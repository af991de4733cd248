"""Experiment stages shared by the command line and the acceptance suite.

Each stage reads its inputs from a run directory, writes its outputs atomically
and can be re-run on its own once the upstream artifacts exist.
"""
from __future__ import annotations

import fcntl
import json
import logging
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .._io import atomic_write_text
from ..downstream import (
    EvalReport,
    diversity,
    fit_generator,
    generate_models,
    max_performance_delta,
    probe,
    reconstruct_and_score,
)
from ..exceptions import ConfigError, MissingArtifactError
from ..grad_analysis import analysis_report, write_report
from ..hyper_ae import HyperRepresentationAE
from ..losses import QuerySampler, query_registry_from
from ..zoo.arch import accuracy
from ..zoo.data import Dataset, gen_dataset, load_dataset, save_dataset
from ..zoo.forge import ModelCheckpoint, Zoo, ZooGrid, train_zoo
from .svg import histogram_svg

log = logging.getLogger(__name__)


class RunDir:
    """A run directory, exclusively locked while a command works in it."""

    def __init__(self, root):
        self.root = Path(root)
        self._fh = None

    def __enter__(self) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.root / ".lock", "w")
        try:
            fcntl.flock(self._fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            self._fh.close()
            raise ConfigError(f"run directory {self.root} is locked by another process") from exc
        return self

    def __exit__(self, *exc) -> None:
        fcntl.flock(self._fh, fcntl.LOCK_UN)
        self._fh.close()

    def path(self, *parts) -> Path:
        return self.root.joinpath(*parts)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_config(run: RunDir, cfg: dict, name: str) -> None:
    write_json(run.path("configs", f"{name}.json"), cfg)


# -- data and zoo ----------------------------------------------------------------

def make_datasets(cfg: dict) -> Tuple[Dataset, Dataset]:
    d = cfg["dataset"]
    kw = dict(classes=d["classes"], side=d["side"], channels=d["channels"], n_train=d["n_train"],
              n_test=d["n_test"], seed=d["seed"], noise=d["noise"])
    return gen_dataset(d["kind"], **kw), gen_dataset("shifted-variant", **kw)


def stage_gen_data(cfg: dict, run: RunDir) -> Tuple[Dataset, Dataset]:
    ds, shifted = make_datasets(cfg)
    save_dataset(run.path("data", "train"), ds)
    save_dataset(run.path("data", "shifted"), shifted)
    return ds, shifted


def load_data(run: RunDir) -> Tuple[Dataset, Dataset]:
    if not run.path("data", "train", "dataset.json").exists():
        raise MissingArtifactError(f"no dataset in {run.root}; run the gen-data command first")
    return load_dataset(run.path("data", "train")), load_dataset(run.path("data", "shifted"))


def make_zoo(cfg: dict, ds: Dataset, n_jobs: int = 1) -> Zoo:
    z = cfg["zoo"]
    grid = ZooGrid(tuple(z["init_schemes"]), tuple(z["learning_rates"]), tuple(z["weight_decays"]),
                   tuple(z["seeds"]))
    return train_zoo(grid, ds, epochs=z["epochs"], checkpoint_epochs=z["checkpoint_epochs"],
                     batch_size=z["batch_size"], proportions=tuple(z["proportions"]), split_seed=cfg["seed"],
                     n_jobs=n_jobs)


def stage_train_zoo(cfg: dict, run: RunDir, n_jobs: int = 1) -> Zoo:
    ds, _ = load_data(run)
    zoo = make_zoo(cfg, ds, n_jobs)
    zoo.save(run.path("zoo"))
    return zoo


def load_zoo(run: RunDir) -> Zoo:
    if not run.path("zoo", "zoo.json").exists():
        raise MissingArtifactError(f"no zoo in {run.root}; run the train-zoo command first")
    return Zoo.load(run.path("zoo"))


# -- autoencoders --------------------------------------------------------------------

def build_ae(cfg: dict, arch, precision: str = "f32", **overrides) -> HyperRepresentationAE:
    params = dict(cfg["ae"])
    params.update(cfg["loss"])
    params.update(overrides)
    params["dtype"] = "float64" if precision == "f64" else "float32"
    return HyperRepresentationAE(arch=arch, **params)


def query_sampler(cfg_loss: dict, ds: Dataset, shifted: Dataset, source: Optional[str] = None) -> QuerySampler:
    return QuerySampler(source or cfg_loss["query_source"], query_registry_from(ds, shifted),
                        cfg_loss["n_queries"], ds.input_shape)


def train_ae(cfg: dict, zoo: Zoo, ds: Dataset, shifted: Dataset, precision: str = "f32",
             **overrides) -> HyperRepresentationAE:
    ae = build_ae(cfg, zoo.arch, precision, **overrides)
    qs = query_sampler(cfg["loss"], ds, shifted, overrides.get("query_source"))
    val = zoo.thetas("val")
    return ae.fit(zoo.thetas("train"), query_sampler=qs, X_val=val if len(val) else None)


def stage_train_ae(cfg: dict, run: RunDir, precision: str = "f32") -> HyperRepresentationAE:
    ds, shifted = load_data(run)
    zoo = load_zoo(run)
    ae = train_ae(cfg, zoo, ds, shifted, precision)
    ae.save(run.path("ae", "ae.wzoo"))
    write_json(run.path("ae", "history.json"), ae.history_)
    return ae


def load_ae(run: RunDir) -> HyperRepresentationAE:
    p = run.path("ae", "ae.wzoo")
    if not p.exists():
        raise MissingArtifactError(f"no autoencoder in {run.root}; run the train-ae command first")
    return HyperRepresentationAE.load(p)


# -- evaluation ----------------------------------------------------------------------

def reference_accuracies(zoo: Zoo) -> np.ndarray:
    return np.array([ck.test_accuracy for ck in zoo.select()])


def evaluate_reconstruction(cfg: dict, zoo: Zoo, ae, ds: Dataset) -> Tuple[dict, List[dict]]:
    scores = reconstruct_and_score(zoo, ae, ds.x_test, ds.y_test, "test")
    summary = scores.summary()
    summary["max_performance_delta"] = max_performance_delta(scores.accuracy_reconstructed,
                                                             reference_accuracies(zoo))
    probes = {}
    for target in cfg["downstream"]["probe_targets"]:
        probes[target] = probe(zoo, ae, target, cfg["downstream"]["probe_alpha"]).to_dict()
    summary["probes"] = probes
    return summary, scores.rows()


def stage_eval(cfg: dict, run: RunDir) -> dict:
    ds, _ = load_data(run)
    zoo, ae = load_zoo(run), load_ae(run)
    summary, rows = evaluate_reconstruction(cfg, zoo, ae, ds)
    report = EvalReport()
    report.add("reconstruction", summary, rows)
    out = run.path("eval")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.json", report.to_json())
    atomic_write_text(out / "pairwise.csv", report.table_csv("reconstruction"))
    acc_o = [r["accuracy_original"] for r in rows]
    acc_r = [r["accuracy_reconstructed"] for r in rows]
    atomic_write_text(out / "accuracy.svg", histogram_svg({"original": acc_o, "reconstructed": acc_r},
                                                          title="Test accuracy", xlabel="accuracy"))
    atomic_write_text(out / "agreement.svg", histogram_svg({"agreement": [r["agreement"] for r in rows]},
                                                           title="Agreement with original", xlabel="agreement"))
    return summary


def generation_metrics(cfg: dict, zoo: Zoo, ae, ds: Dataset) -> Tuple[dict, np.ndarray]:
    dcfg = cfg["downstream"]
    gen = fit_generator(zoo, ae, dcfg["anchor_threshold"], dcfg["q"], dcfg["anchor_quantile"])
    thetas = generate_models(gen, ae, dcfg["generation_count"], dcfg["generation_seed"])
    accs = np.array([accuracy(t, zoo.arch, ds.x_test, ds.y_test) for t in thetas])
    anchors = zoo.thetas("train")[gen.anchor_index_]
    summary = {
        "n_anchors": int(len(gen.anchor_index_)),
        "anchor_threshold": gen.threshold_,
        "pca_components": int(gen.n_components_),
        "accuracy_generated": {"mean": float(accs.mean()) if len(accs) else None,
                               "std": float(accs.std()) if len(accs) else None,
                               "max": float(accs.max()) if len(accs) else None},
        "max_performance_delta": (max_performance_delta(accs, reference_accuracies(zoo)) if len(accs) else None),
        "diversity_generated": diversity(thetas, zoo.arch, ds.x_test) if len(thetas) >= 2 else None,
        "diversity_anchors": diversity(anchors, zoo.arch, ds.x_test),
    }
    return summary, thetas


def stage_generate(cfg: dict, run: RunDir) -> dict:
    ds, _ = load_data(run)
    zoo, ae = load_zoo(run), load_ae(run)
    summary, thetas = generation_metrics(cfg, zoo, ae, ds)
    out = run.path("generate")
    (out / "models").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, t in enumerate(thetas):
        ck = ModelCheckpoint(f"g{i:04d}", t, zoo.arch, None, 0,
                             accuracy(t, zoo.arch, ds.x_train, ds.y_train), accuracy(t, zoo.arch, ds.x_test, ds.y_test))
        ck.save(out / "models" / f"g{i:04d}.wzoo", zoo.dataset_fingerprint)
        rows.append({"model_id": ck.model_id, "train_accuracy": ck.train_accuracy, "test_accuracy": ck.test_accuracy})
    report = EvalReport()
    report.add("generation", summary, rows)
    report.write(out)
    zoo_acc = [ck.test_accuracy for ck in zoo.select()]
    atomic_write_text(out / "accuracy.svg", histogram_svg(
        {"zoo": zoo_acc, "generated": [r["test_accuracy"] for r in rows]}, title="Test accuracy", xlabel="accuracy"))
    return summary


def stage_grad_check(cfg: dict, run: RunDir) -> dict:
    ds, _ = load_data(run)
    zoo = load_zoo(run)
    g = cfg["grad_check"]
    models = {ck.model_id: ck.theta for ck in zoo.final("test")[:g["n_models"]]}
    x = ds.x_test[:g["n_queries"]]
    report = analysis_report(models, zoo.arch, x, tuple(g["eps_grid"]), g["taylor_eps"], g["n_directions"],
                             cfg["seed"])
    write_report(run.path("grad-check", "report.json"), report)
    return report


def _variant_row(cfg, zoo, ds, shifted, precision, with_generation=False, **overrides) -> dict:
    ae = train_ae(cfg, zoo, ds, shifted, precision, **overrides)
    scores = reconstruct_and_score(zoo, ae, ds.x_test, ds.y_test, "test")
    row = dict(overrides)
    row.update({
        "accuracy_reconstructed_mean": float(scores.accuracy_reconstructed.mean()),
        "agreement_mean": float(scores.agreement.mean()),
        "l2_mean": float(scores.l2.mean()),
        "max_performance_delta": max_performance_delta(scores.accuracy_reconstructed, reference_accuracies(zoo)),
    })
    for target in cfg["downstream"]["probe_targets"]:
        row[f"r2_{target}"] = probe(zoo, ae, target, cfg["downstream"]["probe_alpha"]).r2_test
    if with_generation:
        gen, _ = generation_metrics(cfg, zoo, ae, ds)
        row["generated_accuracy_mean"] = gen["accuracy_generated"]["mean"]
        div = gen["diversity_generated"]
        row["generated_diversity_structural"] = div["structural_mean"] if div else None
        row["generated_diversity_behavioral"] = div["behavioral_mean"] if div else None
    return row


def _write_table(out: Path, name: str, rows: List[dict]) -> None:
    report = EvalReport()
    report.add(name, {"rows": rows}, rows)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "metrics.json", report.to_json())
    atomic_write_text(out / "table.csv", report.table_csv(name))


def loss_combinations(cfg: dict) -> dict:
    """The four loss mixes compared by ablate-losses, as (gamma, beta) pairs."""
    g, b = cfg["loss"]["gamma"], cfg["loss"]["beta"]
    return {"S": (0.0, 1.0), "B": (0.0, 0.0), "C+S": (g, 1.0), "C+S+B": (g, b)}


def stage_ablate_losses(cfg: dict, run: RunDir, precision: str = "f32") -> List[dict]:
    ds, shifted = load_data(run)
    zoo = load_zoo(run)
    rows = []
    for name, (gamma, beta) in loss_combinations(cfg).items():
        row = {"losses": name}
        row.update(_variant_row(cfg, zoo, ds, shifted, precision, with_generation=True, gamma=gamma, beta=beta))
        rows.append(row)
    _write_table(run.path("ablate-losses"), "ablate_losses", rows)
    return rows


def stage_ablate_queries(cfg: dict, run: RunDir, precision: str = "f32") -> List[dict]:
    ds, shifted = load_data(run)
    zoo = load_zoo(run)
    rows = [_variant_row(cfg, zoo, ds, shifted, precision, query_source=src)
            for src in cfg["ablate_queries"]["sources"]]
    _write_table(run.path("ablate-queries"), "ablate_queries", rows)
    return rows


def stage_sweep_beta(cfg: dict, run: RunDir, precision: str = "f32") -> List[dict]:
    ds, shifted = load_data(run)
    zoo = load_zoo(run)
    rows = [_variant_row(cfg, zoo, ds, shifted, precision, beta=float(b)) for b in cfg["sweep_beta"]["betas"]]
    _write_table(run.path("sweep-beta"), "sweep_beta", rows)
    return rows
