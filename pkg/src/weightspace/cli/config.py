"""Experiment configuration: JSON schema, defaults and line-precise validation."""
from __future__ import annotations

import copy
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Optional

from jsonschema import Draft202012Validator

from ..exceptions import ConfigError
from ..losses import BEHAVIORAL_VARIANTS, QUERY_SOURCES
from ..zoo.arch import INIT_SCHEMES
from ..zoo.data import DATASET_KINDS

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_unit = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: Dict[str, Any]) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props}


SCHEMA = _obj({
    "seed": {"type": "integer", "minimum": 0},
    "dataset": _obj({
        "kind": {"enum": [k for k in DATASET_KINDS if k != "uniform-noise"]},
        "classes": {"type": "integer", "minimum": 2, "maximum": 6},
        "side": {"type": "integer", "minimum": 8},
        "channels": _pos_int,
        "n_train": _pos_int,
        "n_test": _pos_int,
        "noise": {"type": "number", "minimum": 0},
        "seed": {"type": ["integer", "null"], "minimum": 0},
    }),
    "zoo": _obj({
        "init_schemes": {"type": "array", "minItems": 1, "items": {"enum": list(INIT_SCHEMES)}},
        "learning_rates": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "weight_decays": {"type": "array", "minItems": 1, "items": {"type": "number", "minimum": 0}},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 0}},
        "epochs": _pos_int,
        "checkpoint_epochs": {"type": ["array", "null"], "items": _pos_int},
        "batch_size": _pos_int,
        "proportions": {"type": "array", "minItems": 3, "maxItems": 3, "items": _unit},
    }),
    "ae": _obj({
        "token_len": _pos_int,
        "embed_dim": _pos_int,
        "d_model": _pos_int,
        "num_heads": _pos_int,
        "num_encoder_layers": _pos_int,
        "num_decoder_layers": {"type": ["integer", "null"], "minimum": 1},
        "proj_dim": _pos_int,
        "ff_mult": _pos_int,
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "batch_size": _pos_int,
        "epochs": {"type": "integer", "minimum": 0},
        "augment": {"type": "boolean"},
        "normalize": {"type": "boolean"},
        "seed": {"type": ["integer", "null"], "minimum": 0},
    }),
    "loss": _obj({
        "gamma": _unit,
        "beta": _unit,
        "behavioral_variant": {"enum": list(BEHAVIORAL_VARIANTS)},
        "distill_temperature": {"type": "number", "exclusiveMinimum": 0},
        "n_queries": _pos_int,
        "query_source": {"enum": list(QUERY_SOURCES)},
        "ntxent_temperature": {"type": "number", "exclusiveMinimum": 0},
    }),
    "downstream": _obj({
        "probe_targets": {"type": "array", "items": {"enum": ["test_accuracy", "generalization_gap"]}},
        "probe_alpha": {"type": "number", "minimum": 0},
        "anchor_threshold": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "anchor_quantile": _unit,
        "q": _pos_int,
        "generation_count": {"type": "integer", "minimum": 0},
        "generation_seed": {"type": ["integer", "null"], "minimum": 0},
    }),
    "grad_check": _obj({
        "n_models": _pos_int,
        "n_queries": _pos_int,
        "eps_grid": {"type": "array", "minItems": 1, "items": {"type": "number", "exclusiveMinimum": 0}},
        "taylor_eps": {"type": "number", "exclusiveMinimum": 0},
        "n_directions": _pos_int,
    }),
    "sweep_beta": _obj({"betas": {"type": "array", "minItems": 1, "items": _unit}}),
    "ablate_queries": _obj({"sources": {"type": "array", "minItems": 1, "items": {"enum": list(QUERY_SOURCES)}}}),
})

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "dataset": {"kind": "blobs-stripes-checker", "classes": 3, "side": 16, "channels": 1, "n_train": 1000,
                "n_test": 500, "noise": 0.3, "seed": None},
    "zoo": {"init_schemes": ["uniform", "normal", "kaiming_uniform", "kaiming_normal"],
            "learning_rates": [3e-4, 1e-3, 3e-3], "weight_decays": [0.0], "seeds": [0, 1, 2], "epochs": 12,
            "checkpoint_epochs": [6, 9, 12], "batch_size": 32, "proportions": [0.8, 0.05, 0.15]},
    "ae": {"token_len": 32, "embed_dim": 8, "d_model": 64, "num_heads": 4, "num_encoder_layers": 3,
           "num_decoder_layers": None, "proj_dim": 32, "ff_mult": 2, "learning_rate": 1e-3,
           "weight_decay": 3e-9, "batch_size": 16, "epochs": 100, "augment": True, "normalize": True,
           "seed": None},
    "loss": {"gamma": 0.05, "beta": 0.1, "behavioral_variant": "mse-logits", "distill_temperature": 2.0,
             "n_queries": 64, "query_source": "zoo-trainset", "ntxent_temperature": 0.1},
    "downstream": {"probe_targets": ["test_accuracy", "generalization_gap"], "probe_alpha": 1e-3,
                   "anchor_threshold": None, "anchor_quantile": 0.7, "q": 32, "generation_count": 20,
                   "generation_seed": None},
    "grad_check": {"n_models": 2, "n_queries": 16, "eps_grid": [1e-1, 1e-2, 1e-3], "taylor_eps": 1e-5,
                   "n_directions": 20},
    "sweep_beta": {"betas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]},
    "ablate_queries": {"sources": list(QUERY_SOURCES)},
}


def _locate(text: str, path: List[Any]) -> Optional[int]:
    """Best-effort 1-based line of the JSON node at ``path`` (keys searched in nesting order)."""
    pos = 0
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if path else 1


def validate(cfg: dict, text: Optional[str] = None, source: str = "<config>") -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if not errors:
        _check_semantics(cfg, source)
        return
    lines = []
    for err in errors:
        path = list(err.absolute_path)
        field = ".".join(map(str, path)) or "<root>"
        line = _locate(text, path) if text is not None else None
        where = f"{source}:{line}" if line else source
        lines.append(f"{where}: field '{field}': {err.message}")
    raise ConfigError("invalid config\n  " + "\n  ".join(lines))


def _check_semantics(cfg: dict, source: str) -> None:
    props = cfg.get("zoo", {}).get("proportions")
    if props is not None and abs(sum(props) - 1.0) > 1e-9:
        raise ConfigError(f"{source}: field 'zoo.proportions': must sum to 1, got {props}")
    ae = cfg.get("ae", {})
    if "d_model" in ae or "num_heads" in ae:
        d = ae.get("d_model", DEFAULTS["ae"]["d_model"])
        h = ae.get("num_heads", DEFAULTS["ae"]["num_heads"])
        if d % h:
            raise ConfigError(f"{source}: field 'ae.d_model': {d} is not divisible by ae.num_heads={h}")


def merge_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key].update(copy.deepcopy(val))
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: Optional[str]) -> dict:
    """Read, validate and default-fill a config file (or return the defaults when ``path`` is None)."""
    if path is None:
        return merge_defaults({})
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    text = p.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    validate(cfg, text, str(p))
    return merge_defaults(cfg)


def resolve_seeds(cfg: dict) -> dict:
    """Fill component seeds left as null from the master seed."""
    cfg = copy.deepcopy(cfg)
    s = int(cfg["seed"])
    for section, key in (("dataset", "seed"), ("ae", "seed"), ("downstream", "generation_seed")):
        if cfg[section].get(key) is None:
            cfg[section][key] = s
    return cfg
