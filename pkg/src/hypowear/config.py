"""Run configuration: one flat JSON document with defaults for every field.

The fully resolved config is canonicalized (sorted keys, compact
separators) and hashed; the hash stamps every output artifact so that
artifacts from different configurations can never be mixed silently.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .core import HypowearError


class ConfigError(HypowearError):
    pass


MODEL_FAMILIES = ("logistic", "knn", "forest", "gbt", "mlp", "cnn", "lstm", "gru", "tcn")
FEATURE_MODELS = ("logistic", "knn", "forest", "gbt", "mlp")
SEQUENCE_MODELS = ("cnn", "lstm", "gru", "tcn")
MODALITIES = ("gsr_only", "hr_only", "fused_early")

DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "source": "synthetic",  # synthetic | csv_bundle | ohio_xml
        "path": None,  # bundle root or xml directory for file sources
        "synthetic": {
            "n_subjects": 12,
            "days": 7.0,
            "events_per_day": 1.8,
            "coupling_driver_gain": 3.0,
            "coupling_hr_offset": 8.0,
            "prevalence_band": [0.02, 0.06],
        },
    },
    "preprocess": {
        "aggregation": "mean",  # mean | median
        "butter_order": 4,
        "butter_cutoff_hz": 0.5,
        "iqr_k": 1.5,
        "median_width": 5,
        "max_ffill_gap_bins": 6,
        "zero_phase": False,
    },
    "eda": {
        "tau1_s": 10.0,
        "tau2_s": 1.0,
        "alpha_l1": 0.05,
        "lambda_smooth": 10.0,
        "max_iters": 10000,
        "rel_tol": 1e-8,
        "scr_threshold": 0.05,
        "scr_min_sep_bins": 1,
    },
    "window": {"length": 12, "stride": 1, "horizon_bins": 0},
    "split": {"fractions": [0.8, 0.1, 0.1], "stratified": True, "manual": None},
    "models": ["logistic", "gbt", "lstm"],
    "model_params": {
        "logistic": {"l2": 1e-3, "epochs": 500, "lr": 0.1},
        "knn": {"k": 5},
        "forest": {"n_trees": 200, "max_depth": 8, "min_leaf": 5},
        "gbt": {"rounds": 300, "lr": 0.1, "max_depth": 4, "lam": 1.0, "early_stop_patience": 20},
        "hidden": 32,
        "cnn": {"kernel": 3, "layers": 2, "channels": 16},
        "tcn": {"kernel": 3, "blocks": 3, "dilations": [1, 2, 4], "channels": 16, "residual": True},
        "mlp": {"layers": [64, 32]},
    },
    "modalities": ["gsr_only", "hr_only", "fused_early"],
    "late_fusion": False,
    "train": {"lr": 0.01, "momentum": 0.9, "batch_size": 64, "max_epochs": 50, "patience": 5},
    "eval": {
        "bootstrap_iterations": 1000,
        "bootstrap_level": 0.95,
        "bootstrap_variant": "percentile",
        "threshold_policy": "fixed",  # fixed | tune_val_f1
        "threshold": 0.5,
    },
}


def _merge(defaults, override, path=""):
    if not isinstance(override, dict):
        raise ConfigError(f"expected a mapping at {path or 'top level'}")
    out = {}
    for key, default_value in defaults.items():
        if key in override:
            value = override[key]
            if isinstance(default_value, dict) and default_value:
                out[key] = _merge(default_value, value, f"{path}{key}.")
            else:
                out[key] = value
        else:
            out[key] = default_value
    unknown = set(override) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config key(s) at {path or 'top level'}: {sorted(unknown)}")
    return out


def _validate(cfg: dict) -> None:
    if cfg["data"]["source"] not in ("synthetic", "csv_bundle", "ohio_xml"):
        raise ConfigError(f"unknown data source {cfg['data']['source']!r}")
    if cfg["data"]["source"] != "synthetic" and not cfg["data"]["path"]:
        raise ConfigError("file data sources need data.path")
    for family in cfg["models"]:
        if family not in MODEL_FAMILIES:
            raise ConfigError(f"unknown model family {family!r}")
    for modality in cfg["modalities"]:
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality {modality!r}")
    fr = cfg["split"]["fractions"]
    if len(fr) != 3 or abs(sum(fr) - 1.0) > 1e-9 or min(fr) < 0:
        raise ConfigError("split.fractions must be three non-negative numbers summing to 1")
    manual = cfg["split"]["manual"]
    if manual is not None:
        if set(manual) != {"train", "val", "test"} or not all(
            isinstance(v, list) for v in manual.values()
        ):
            raise ConfigError("split.manual needs train/val/test subject-id lists")
    syn = cfg["data"]["synthetic"]
    if syn["events_per_day"] < 0:
        raise ConfigError("data.synthetic.events_per_day must be non-negative")
    if syn["n_subjects"] < 1:
        raise ConfigError("data.synthetic.n_subjects must be >= 1")
    if cfg["eval"]["threshold_policy"] not in ("fixed", "tune_val_f1"):
        raise ConfigError("eval.threshold_policy must be 'fixed' or 'tune_val_f1'")
    if cfg["window"]["length"] < 1 or cfg["window"]["stride"] < 1:
        raise ConfigError("window.length and window.stride must be >= 1")


def resolve_config(overrides: dict | None = None, seed: int | None = None) -> dict:
    """Merge overrides into the defaults, validate, and return the resolved
    config (a plain dict; hash it with ``config_hash``)."""
    cfg = _merge(DEFAULT_CONFIG, overrides or {})
    if seed is not None:
        cfg["seed"] = int(seed)
    _validate(cfg)
    return cfg


def load_config(path: str | Path | None, seed: int | None = None) -> dict:
    if path is None:
        return resolve_config(None, seed)
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(doc, seed)


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:16]
