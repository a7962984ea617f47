"""End-to-end orchestration: data -> preprocess -> windows -> split ->
train per model x modality -> evaluate -> report documents.

Everything is driven by one resolved config; with a fixed seed the whole
run (including report.json bytes) is reproducible.  Late fusion combines
the per-family GSR-only and HR-only probability streams, with fusion
parameters fit on validation predictions and applied once to test.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .classical import (
    ClassWeights,
    knn_predict,
    train_forest,
    train_gbt,
    train_logistic,
)
from .config import FEATURE_MODELS, config_hash
from .core import ChannelKind, HypowearError
from .dataset import (
    Modality,
    SplitPlan,
    Window,
    WindowChannel,
    assemble_batch,
    make_windows,
    split_subjects,
    window_prevalence,
)
from .eda import EdaParams, decompose_segments
from .evaluate import (
    REFERENCE_FUSED_LSTM,
    REFERENCE_FUSION_GAIN_NOTE,
    BootstrapCfg,
    best_per_modality,
    evaluate_predictions,
    format_table,
    tune_threshold,
)
from .features import feature_matrix
from .fusion import fit_stack, fit_weight, fuse_weighted
from .ingest import SubjectBundle, discover_bundles, leakage_guard, parse_ohio_xml
from .nn import ModelSpec, TrainOpts, build, predict_proba, train_net
from .preprocess import AggregationStat, FilterParams, preprocess_bundle
from .rng import derive_seed
from .synth import SimConfig, simulate_cohort

log = logging.getLogger(__name__)


class LeakageError(HypowearError):
    def __init__(self, violations):
        super().__init__("; ".join(f"{v.kind}: {v.detail}" for v in violations))
        self.violations = violations


@dataclass
class SubjectData:
    subject_id: str
    windows: list
    prevalence: float


@dataclass
class RunResult:
    config: dict
    config_hash: str
    plan: SplitPlan
    prevalence: float
    results: dict  # modality -> family -> {"default": MetricsReport, ...}
    late_fusion: dict
    model_docs: dict
    histories: dict
    report: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)


def load_bundles(cfg: dict) -> list:
    source = cfg["data"]["source"]
    if source == "synthetic":
        syn = cfg["data"]["synthetic"]
        sim_cfg = SimConfig(
            days=syn["days"],
            events_per_day=syn["events_per_day"],
            coupling_driver_gain=syn["coupling_driver_gain"],
            coupling_hr_offset=syn["coupling_hr_offset"],
            prevalence_band=tuple(syn["prevalence_band"]),
        )
        bundles, _, info = simulate_cohort(sim_cfg, syn["n_subjects"], cfg["seed"])
        log.info("simulated cohort: prevalence %.4f", info["prevalence"])
        return bundles
    if source == "csv_bundle":
        return discover_bundles(cfg["data"]["path"])
    from pathlib import Path

    paths = sorted(Path(cfg["data"]["path"]).glob("*.xml"))
    if not paths:
        raise FileNotFoundError(f"no XML files under {cfg['data']['path']}")
    return [parse_ohio_xml(p) for p in paths]


def prepare_subject(bundle: SubjectBundle, cfg: dict) -> SubjectData:
    """Preprocess one subject's raw series into labeled windows."""
    pp = cfg["preprocess"]
    params = FilterParams(
        butter_order=pp["butter_order"],
        butter_cutoff_hz=pp["butter_cutoff_hz"],
        iqr_k=pp["iqr_k"],
        median_width=pp["median_width"],
        max_ffill_gap_bins=pp["max_ffill_gap_bins"],
    )
    cgm_series = bundle.series[ChannelKind.CGM]
    start = int(cgm_series.times[0])
    n_bins = int((cgm_series.times[-1] - start) // 300) + 1
    grids, _ = preprocess_bundle(
        bundle.series,
        start,
        n_bins,
        params,
        stat=AggregationStat(pp["aggregation"]),
        zero_phase=pp["zero_phase"],
    )
    channels: dict[WindowChannel, object] = {}
    if ChannelKind.GSR in grids:
        eda_cfg = cfg["eda"]
        eda_params = EdaParams(
            tau1_s=eda_cfg["tau1_s"],
            tau2_s=eda_cfg["tau2_s"],
            alpha_l1=eda_cfg["alpha_l1"],
            lambda_smooth=eda_cfg["lambda_smooth"],
            max_iters=eda_cfg["max_iters"],
            rel_tol=eda_cfg["rel_tol"],
            scr_threshold=eda_cfg["scr_threshold"],
            scr_min_sep_bins=eda_cfg["scr_min_sep_bins"],
        )
        tonic, phasic, _ = decompose_segments(grids[ChannelKind.GSR], eda_params)
        channels[WindowChannel.GSR] = grids[ChannelKind.GSR]
        channels[WindowChannel.TONIC] = tonic
        channels[WindowChannel.PHASIC] = phasic
    if ChannelKind.HR in grids:
        channels[WindowChannel.HR] = grids[ChannelKind.HR]
    win = cfg["window"]
    windows = make_windows(
        channels,
        grids[ChannelKind.CGM],
        length=win["length"],
        stride=win["stride"],
        horizon_bins=win["horizon_bins"],
    )
    return SubjectData(bundle.subject_id, windows, window_prevalence(windows))


def _standardize(train_X, other_Xs):
    mean = train_X.mean(axis=0)
    sd = train_X.std(axis=0, ddof=1)
    sd = np.where(sd == 0, 1.0, sd)
    return [(x - mean) / sd for x in (train_X, *other_Xs)]


def _eda_params_from_cfg(cfg: dict) -> EdaParams:
    e = cfg["eda"]
    return EdaParams(
        tau1_s=e["tau1_s"],
        tau2_s=e["tau2_s"],
        alpha_l1=e["alpha_l1"],
        lambda_smooth=e["lambda_smooth"],
        max_iters=e["max_iters"],
        rel_tol=e["rel_tol"],
        scr_threshold=e["scr_threshold"],
        scr_min_sep_bins=e["scr_min_sep_bins"],
    )


def _labels(windows: list) -> np.ndarray:
    from .core import Label

    return np.array([1 if w.label is Label.HYPO else 0 for w in windows], dtype=np.int64)


def _model_spec(family: str, cfg: dict, modality: Modality, n_features: int) -> ModelSpec:
    mp = cfg["model_params"]
    in_channels = 2 if modality is Modality.FUSED_EARLY else 1
    return ModelSpec(
        family=family,
        in_channels=in_channels,
        window_len=cfg["window"]["length"],
        hidden=mp["hidden"],
        cnn_kernel=mp["cnn"]["kernel"],
        cnn_layers=mp["cnn"]["layers"],
        cnn_channels=mp["cnn"]["channels"],
        tcn_kernel=mp["tcn"]["kernel"],
        tcn_blocks=mp["tcn"]["blocks"],
        tcn_dilations=tuple(mp["tcn"]["dilations"]),
        tcn_channels=mp["tcn"]["channels"],
        tcn_residual=mp["tcn"]["residual"],
        mlp_layers=tuple(mp["mlp"]["layers"]),
        n_features=n_features if family == "mlp" else None,
    )


def train_cell(
    family: str,
    modality: Modality,
    split_windows: dict,
    cfg: dict,
    class_weights: ClassWeights,
):
    """Train one model family on one modality.

    Returns (val_probs, test_probs, model_doc, history_or_None).
    """
    mp = cfg["model_params"]
    seed = derive_seed(cfg["seed"], "train", family, modality.value)
    if family in FEATURE_MODELS:
        eda_params = _eda_params_from_cfg(cfg)
        X_parts = {}
        y_parts = {}
        for part in ("train", "val", "test"):
            X_parts[part], _ = feature_matrix(split_windows[part], modality, eda_params)
            y_parts[part] = _labels(split_windows[part])
        X_train, X_val, X_test = _standardize(X_parts["train"], (X_parts["val"], X_parts["test"]))
        y_train, y_val = y_parts["train"], y_parts["val"]
        if family == "logistic":
            p = mp["logistic"]
            model = train_logistic(
                X_train, y_train, class_weights, l2=p["l2"], epochs=p["epochs"], lr=p["lr"]
            )
            return model.predict_proba(X_val), model.predict_proba(X_test), model.to_doc(), None
        if family == "knn":
            k = min(mp["knn"]["k"], X_train.shape[0])
            doc = {"format_version": 1, "family": "knn", "k": k}
            return (
                knn_predict(X_train, y_train, X_val, k),
                knn_predict(X_train, y_train, X_test, k),
                doc,
                None,
            )
        if family == "forest":
            p = mp["forest"]
            model = train_forest(
                X_train,
                y_train,
                class_weights,
                n_trees=p["n_trees"],
                max_depth=p["max_depth"],
                min_leaf=p["min_leaf"],
                seed=seed,
            )
            return model.predict_proba(X_val), model.predict_proba(X_test), model.to_doc(), None
        if family == "gbt":
            p = mp["gbt"]
            model = train_gbt(
                X_train,
                y_train,
                X_val,
                y_val,
                pos_weight=class_weights.w_pos,
                rounds=p["rounds"],
                lr=p["lr"],
                max_depth=p["max_depth"],
                lam=p["lam"],
                early_stop_patience=p["early_stop_patience"],
            )
            history = {"train_loss": model.train_loss_history, "val_loss": model.val_loss_history}
            return model.predict_proba(X_val), model.predict_proba(X_test), model.to_doc(), history
        # mlp on the handcrafted features
        spec = _model_spec("mlp", cfg, modality, X_train.shape[1])
        net = build(spec, seed)
        opts = _train_opts(cfg, class_weights, seed)
        history = train_net(net, X_train, y_train, X_val, y_val, opts)
        return (
            predict_proba(net, X_val),
            predict_proba(net, X_test),
            net.to_doc(),
            {"train_loss": history.train_loss, "val_f1": history.val_f1},
        )

    batches = {part: assemble_batch(split_windows[part], modality) for part in ("train", "val", "test")}
    spec = _model_spec(family, cfg, modality, 0)
    net = build(spec, seed)
    opts = _train_opts(cfg, class_weights, seed)
    history = train_net(
        net, batches["train"].data, batches["train"].labels, batches["val"].data, batches["val"].labels, opts
    )
    return (
        predict_proba(net, batches["val"].data),
        predict_proba(net, batches["test"].data),
        net.to_doc(),
        {"train_loss": history.train_loss, "val_f1": history.val_f1},
    )


def _train_opts(cfg: dict, class_weights: ClassWeights, seed: int) -> TrainOpts:
    t = cfg["train"]
    return TrainOpts(
        lr=t["lr"],
        momentum=t["momentum"],
        batch_size=t["batch_size"],
        max_epochs=t["max_epochs"],
        patience=t["patience"],
        pos_weight=class_weights.w_pos,
        neg_weight=class_weights.w_neg,
        seed=seed,
    )


def run_pipeline(cfg: dict, include_late_fusion: bool | None = None) -> RunResult:
    """Execute the full pipeline for a resolved config."""
    chash = config_hash(cfg)
    bundles = load_bundles(cfg)
    subjects = [prepare_subject(b, cfg) for b in bundles]
    by_id = {s.subject_id: s for s in subjects}

    manual = cfg["split"]["manual"]
    if manual is not None:
        plan = SplitPlan(
            train=frozenset(manual["train"]),
            val=frozenset(manual["val"]),
            test=frozenset(manual["test"]),
            seed=cfg["seed"],
            fractions=tuple(cfg["split"]["fractions"]),
            fallback_mode="manual",
        )
    else:
        prevalence_map = {s.subject_id: s.prevalence for s in subjects}
        plan = split_subjects(
            [s.subject_id for s in subjects],
            fractions=tuple(cfg["split"]["fractions"]),
            seed=cfg["seed"],
            prevalence=prevalence_map if cfg["split"]["stratified"] else None,
        )
    violations = leakage_guard(bundles, plan)
    if violations:
        raise LeakageError(violations)

    split_windows = {
        part: [w for sid in sorted(getattr(plan, part)) for w in by_id[sid].windows]
        for part in ("train", "val", "test")
    }
    for part, windows in split_windows.items():
        if not windows:
            raise HypowearError(f"no windows in {part} partition")
    pooled = [w for s in subjects for w in s.windows]
    prevalence = window_prevalence(pooled)

    class_weights = ClassWeights.from_labels(_labels(split_windows["train"]))

    ev = cfg["eval"]
    boot = BootstrapCfg(
        iterations=ev["bootstrap_iterations"],
        level=ev["bootstrap_level"],
        seed=derive_seed(cfg["seed"], "bootstrap"),
        variant=ev["bootstrap_variant"],
    )
    modalities = [Modality(m) for m in cfg["modalities"]]
    if include_late_fusion is None:
        include_late_fusion = bool(cfg["late_fusion"])
    can_late_fuse = {Modality.GSR_ONLY, Modality.HR_ONLY} <= set(modalities)

    results: dict = {}
    late: dict = {}
    model_docs: dict = {}
    histories: dict = {}
    stream_cache: dict = {}
    test_labels = _labels(split_windows["test"])
    val_labels = _labels(split_windows["val"])

    for modality in modalities:
        results[modality.value] = {}
        for family in cfg["models"]:
            val_probs, test_probs, doc, history = train_cell(
                family, modality, split_windows, cfg, class_weights
            )
            cell_name = f"{family}__{modality.value}"
            model_docs[cell_name] = {"config_hash": chash, **doc}
            if history is not None:
                histories[cell_name] = history
            stream_cache[(family, modality)] = (val_probs, test_probs)
            entry = {
                "default": evaluate_predictions(test_probs, test_labels, boot, ev["threshold"])
            }
            if ev["threshold_policy"] == "tune_val_f1":
                tuned_t = tune_threshold(val_probs, val_labels)
                entry["tuned"] = evaluate_predictions(test_probs, test_labels, boot, tuned_t)
            results[modality.value][family] = entry

    if include_late_fusion and can_late_fuse:
        for family in cfg["models"]:
            v_gsr, t_gsr = stream_cache[(family, Modality.GSR_ONLY)]
            v_hr, t_hr = stream_cache[(family, Modality.HR_ONLY)]
            weighted = fit_weight(v_gsr, v_hr, val_labels)
            stacked = fit_stack(v_gsr, v_hr, val_labels)
            late[family] = {
                "weighted": {
                    "w": weighted.w,
                    "fit_partition": weighted.fit_partition,
                    "report": evaluate_predictions(
                        fuse_weighted(t_gsr, t_hr, weighted.w), test_labels, boot, ev["threshold"]
                    ),
                },
                "stacked": {
                    "intercept": stacked.intercept,
                    "coef_gsr": stacked.coef_gsr,
                    "coef_hr": stacked.coef_hr,
                    "fit_partition": stacked.fit_partition,
                    "report": evaluate_predictions(
                        stacked.apply(t_gsr, t_hr), test_labels, boot, ev["threshold"]
                    ),
                },
            }

    result = RunResult(
        config=cfg,
        config_hash=chash,
        plan=plan,
        prevalence=prevalence,
        results=results,
        late_fusion=late,
        model_docs=model_docs,
        histories=histories,
    )
    result.report = build_report(result)
    result.tables = build_tables(result)
    return result


def fusion_gain(result: RunResult) -> dict | None:
    """Relative F1 change of early-fused vs best single modality, per family
    (present only when both single modalities ran)."""
    res = result.results
    if not {"gsr_only", "hr_only", "fused_early"} <= set(res):
        return None
    gains = {}
    for family in res["fused_early"]:
        try:
            single = max(
                res["gsr_only"][family]["default"].f1_hypo,
                res["hr_only"][family]["default"].f1_hypo,
            )
        except KeyError:
            continue
        fused = res["fused_early"][family]["default"].f1_hypo
        gains[family] = {
            "fused_f1": fused,
            "best_single_f1": single,
            "relative_gain": (fused - single) / single if single > 0 else None,
        }
    return {"per_family": gains, "reference_note": REFERENCE_FUSION_GAIN_NOTE}


def build_report(result: RunResult) -> dict:
    reports = {
        modality: {family: {k: v.to_doc() for k, v in entry.items()} for family, entry in rows.items()}
        for modality, rows in result.results.items()
    }
    late = {
        family: {
            kind: {k: (v.to_doc() if hasattr(v, "to_doc") else v) for k, v in info.items()}
            for kind, info in kinds.items()
        }
        for family, kinds in result.late_fusion.items()
    }
    flat = {
        modality: {family: entry["default"] for family, entry in rows.items()}
        for modality, rows in result.results.items()
    }
    return {
        "config_hash": result.config_hash,
        "seed": result.config["seed"],
        "window_prevalence": result.prevalence,
        "split": {
            "train": sorted(result.plan.train),
            "val": sorted(result.plan.val),
            "test": sorted(result.plan.test),
        },
        "results": reports,
        "late_fusion": late,
        "best_per_modality": best_per_modality(flat),
        "fusion_gain": fusion_gain(result),
        "reference_annotation": {
            "fused_lstm": REFERENCE_FUSED_LSTM,
            "note": "published reference values; printed for context, never asserted",
        },
        "config": result.config,
    }


def build_tables(result: RunResult) -> dict:
    tables = {}
    for modality, rows in result.results.items():
        flat = {family: entry["default"] for family, entry in rows.items()}
        tables[modality] = format_table(modality, flat, config_hash=result.config_hash)
    summary_lines = [f"# config_hash={result.config_hash}", "Modality,Best Model,Recall,F1-score"]
    flat_all = {
        modality: {family: entry["default"] for family, entry in rows.items()}
        for modality, rows in result.results.items()
    }
    for modality, info in sorted(best_per_modality(flat_all).items()):
        summary_lines.append(
            f"{modality},{info['model']},{float(info['recall'])!r},{float(info['f1'])!r}"
        )
    tables["best_per_modality"] = "\n".join(summary_lines) + "\n"
    return tables
