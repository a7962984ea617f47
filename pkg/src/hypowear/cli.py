"""Command-line entry point: simulate, run, ablate, report.

One JSON config drives everything; every output artifact carries the
resolved-config hash.  Exit codes: 0 success, 2 config error, 3 leakage
violation, 4 model divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, canonical_json, config_hash, load_config
from .ingest import write_bundle
from .nn import DivergedError
from .pipeline import LeakageError, run_pipeline
from .synth import PrevalenceOutOfBandError, SimConfig, simulate_cohort

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_LEAKAGE = 3
EXIT_DIVERGED = 4

OUT_DIR_ENV = "HYPOWEAR_OUT"


def _out_dir(args) -> Path:
    out = os.environ.get(OUT_DIR_ENV) or args.out
    if out is None:
        raise ConfigError("no output directory: pass --out or set " + OUT_DIR_ENV)
    return Path(out)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args)
    syn = cfg["data"]["synthetic"]
    sim_cfg = SimConfig(
        days=syn["days"],
        events_per_day=syn["events_per_day"],
        coupling_driver_gain=syn["coupling_driver_gain"],
        coupling_hr_offset=syn["coupling_hr_offset"],
        prevalence_band=tuple(syn["prevalence_band"]),
    )
    bundles, truths, info = simulate_cohort(sim_cfg, syn["n_subjects"], cfg["seed"])
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    for bundle in bundles:
        write_bundle(bundle, out)
    truth_lines = [f"# config_hash={chash}", "subject_id,onset_s,nadir_time_s,end_s,lead_s"]
    for truth in truths:
        for e in truth.events:
            truth_lines.append(
                f"{truth.subject_id},{e.onset_s!r},{e.nadir_time_s!r},{e.end_s!r},{e.lead_s!r}"
            )
    (out / "truth.csv").write_text("\n".join(truth_lines) + "\n")
    _write_json(out / "resolved_config.json", {"config_hash": chash, "config": cfg})
    print(f"wrote {len(bundles)} subject bundles to {out} (prevalence {info['prevalence']:.4f})")
    return EXIT_OK


def _execute_run(args, force_ablation: bool) -> int:
    cfg = load_config(args.config, args.seed)
    if force_ablation:
        cfg["modalities"] = ["gsr_only", "hr_only", "fused_early"]
        cfg["late_fusion"] = True
    out = _out_dir(args)
    chash = config_hash(cfg)
    if args.dry_run:
        print(f"config_hash: {chash}")
        print(canonical_json(cfg))
        stages = "simulate/ingest -> preprocess -> windows -> split -> train -> evaluate -> report"
        print(f"planned stages: {stages}")
        print(f"models: {cfg['models']} modalities: {cfg['modalities']}")
        return EXIT_OK
    result = run_pipeline(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved_config.json", {"config_hash": chash, "config": cfg})
    (out / "report.json").write_text(
        json.dumps(result.report, sort_keys=True, indent=2) + "\n"
    )
    tables_dir = out / "tables"
    tables_dir.mkdir(exist_ok=True)
    for name, text in result.tables.items():
        (tables_dir / f"{name}.csv").write_text(text)
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    for name, doc in result.model_docs.items():
        _write_json(models_dir / f"{name}.model.json", doc)
    for name, text in sorted(result.tables.items()):
        print(f"== {name} ==")
        print(text, end="")
    if result.report.get("fusion_gain"):
        print("fusion_gain:", json.dumps(result.report["fusion_gain"], sort_keys=True))
    print(f"artifacts in {out} (config_hash {chash})")
    return EXIT_OK


def cmd_run(args) -> int:
    return _execute_run(args, force_ablation=False)


def cmd_ablate(args) -> int:
    return _execute_run(args, force_ablation=True)


def cmd_report(args) -> int:
    out = _out_dir(args)
    report_path = out / "report.json"
    resolved_path = out / "resolved_config.json"
    if not report_path.exists() or not resolved_path.exists():
        raise ConfigError(f"{out} lacks report.json / resolved_config.json")
    report = json.loads(report_path.read_text())
    resolved = json.loads(resolved_path.read_text())
    if report["config_hash"] != resolved["config_hash"]:
        raise ConfigError(
            f"artifact hash mismatch: report {report['config_hash']} != "
            f"resolved config {resolved['config_hash']}"
        )
    recomputed = config_hash(resolved["config"])
    if recomputed != resolved["config_hash"]:
        raise ConfigError("resolved_config.json does not hash to its recorded config_hash")
    from .evaluate import MetricsReport, format_table

    tables_dir = out / "tables"
    tables_dir.mkdir(exist_ok=True)
    for modality, rows in report["results"].items():
        flat = {}
        for family, entry in rows.items():
            doc = entry["default"]
            flat[family] = MetricsReport(
                accuracy=doc["accuracy"],
                precision_hypo=doc["precision_hypo"],
                recall_hypo=doc["recall_hypo"],
                f1_hypo=doc["f1_hypo"],
                auc=doc["auc"],
                n_pos=doc["n_pos"],
                n_neg=doc["n_neg"],
                threshold=doc["threshold"],
                ci95={k: tuple(v) for k, v in doc["ci95"].items()},
            )
        text = format_table(modality, flat, config_hash=report["config_hash"])
        (tables_dir / f"{modality}.csv").write_text(text)
        print(f"== {modality} ==")
        print(text, end="")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypowear",
        description="Hypoglycemia detection pipeline over wearable GSR/HR signals",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("simulate", cmd_simulate),
        ("run", cmd_run),
        ("ablate", cmd_ablate),
        ("report", cmd_report),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="JSON config path")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--dry-run", action="store_true")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, PrevalenceOutOfBandError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LeakageError as exc:
        print(f"leakage violation: {exc}", file=sys.stderr)
        return EXIT_LEAKAGE
    except DivergedError as exc:
        print(f"model divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
