"""Probes, reconstruction fidelity, generation and diversity."""
from .evaluate import (
    EvalReport,
    ReconstructionScores,
    diversity,
    histogram,
    max_performance_delta,
    pairwise_distances,
    perturbation_agreement,
    reconstruct_and_score,
    score_reconstructions,
    summarize,
)
from .generate import LatentKDEGenerator, fit_generator, generate_models, scott_bandwidth
from .probe import PROBE_TARGETS, LinearProbe, ProbeResult, probe, probe_targets, r2_score

__all__ = [
    "EvalReport", "ReconstructionScores", "diversity", "histogram", "max_performance_delta",
    "pairwise_distances", "perturbation_agreement", "reconstruct_and_score", "score_reconstructions",
    "summarize", "LatentKDEGenerator", "fit_generator", "generate_models", "scott_bandwidth",
    "PROBE_TARGETS", "LinearProbe", "ProbeResult", "probe", "probe_targets", "r2_score",
]
