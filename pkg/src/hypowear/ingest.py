"""Parse per-subject sensor bundles from disk.

The canonical interchange format is the open CSV bundle (one directory per
subject: ``manifest.json`` plus ``cgm.csv``/``gsr.csv``/``hr.csv`` with
``timestamp,value`` rows, ISO-8601 UTC timestamps).  The per-patient XML
adapter is a thin optional shim isolated behind SchemaMismatch errors,
since that layout can only be confirmed against data-use-agreement files.
"""

from __future__ import annotations

import csv
import json
import xml.etree.ElementTree as ElementTree
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .core import ChannelKind, HypowearError, SampleSeries, format_timestamp, parse_timestamp
from .dataset import SplitPlan


class MissingCgmError(HypowearError):
    pass


class EmptySeriesError(HypowearError):
    pass


class SchemaMismatchError(HypowearError):
    pass


class BundleSource(Enum):
    CSV_BUNDLE = "csv_bundle"
    OHIO_XML = "ohio_xml"
    SYNTHETIC = "synthetic"


CHANNEL_FILES = {
    ChannelKind.CGM: "cgm.csv",
    ChannelKind.GSR: "gsr.csv",
    ChannelKind.HR: "hr.csv",
}

# Per-signal event-list parents recognized by the XML adapter.
XML_PARENTS = {
    "glucose_level": ChannelKind.CGM,
    "basis_gsr": ChannelKind.GSR,
    "basis_skin_conductance": ChannelKind.GSR,
    "skin_conductance": ChannelKind.GSR,
    "basis_heart_rate": ChannelKind.HR,
    "heart_rate": ChannelKind.HR,
}


@dataclass(frozen=True)
class BundleManifest:
    subject_id: str
    files: dict  # ChannelKind -> Path
    units: dict = field(default_factory=dict)  # ChannelKind -> declared unit string

    def __post_init__(self):
        for ch, path in self.files.items():
            if not Path(path).exists():
                raise FileNotFoundError(f"{ch.value} file missing: {path}")
        for ch, unit in self.units.items():
            if unit != ch.units:
                raise ValueError(f"declared unit {unit!r} does not match {ch.value} ({ch.units})")


@dataclass(frozen=True)
class SubjectBundle:
    subject_id: str
    series: dict  # ChannelKind -> SampleSeries
    source: BundleSource
    skipped_rows: dict = field(default_factory=dict)

    def __post_init__(self):
        if ChannelKind.CGM not in self.series:
            raise MissingCgmError(f"subject {self.subject_id} has no CGM series")
        if ChannelKind.GSR not in self.series and ChannelKind.HR not in self.series:
            raise ValueError(f"subject {self.subject_id} has neither GSR nor HR")
        for s in self.series.values():
            if s.subject_id != self.subject_id:
                raise ValueError("series subject_id mismatch")


def _sorted_series(subject_id, channel, times, values) -> SampleSeries:
    times = np.asarray(times, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    order = np.lexsort((values, times))  # sort by time, ties by value: order-insensitive
    return SampleSeries(subject_id, channel, times[order], values[order])


def _read_channel_csv(path: Path, subject_id: str, channel: ChannelKind):
    times: list[int] = []
    values: list[float] = []
    skipped = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["timestamp", "value"]:
            raise SchemaMismatchError(f"{path}: expected header 'timestamp,value'")
        for row in reader:
            if len(row) < 2:
                skipped += 1
                continue
            try:
                t = parse_timestamp(row[0])
                v = float(row[1])
            except (ValueError, OverflowError):
                skipped += 1
                continue
            times.append(t)
            values.append(v)
    if not times:
        raise EmptySeriesError(f"{path}: no valid rows")
    return _sorted_series(subject_id, channel, times, values), skipped


def parse_csv_bundle(manifest: BundleManifest) -> SubjectBundle:
    """Parse the declared channel files; corrupt rows are skipped and counted."""
    if ChannelKind.CGM not in manifest.files:
        raise MissingCgmError(f"manifest for {manifest.subject_id} declares no CGM file")
    series = {}
    skipped = {}
    for ch, path in manifest.files.items():
        s, n_skipped = _read_channel_csv(Path(path), manifest.subject_id, ch)
        series[ch] = s
        skipped[ch.value] = n_skipped
    return SubjectBundle(manifest.subject_id, series, BundleSource.CSV_BUNDLE, skipped)


def load_manifest(path: Path) -> BundleManifest:
    """Read a per-subject manifest.json next to its channel CSVs."""
    path = Path(path)
    doc = json.loads(path.read_text())
    files = {}
    for name, rel in doc["files"].items():
        files[ChannelKind(name)] = path.parent / rel
    units = {ChannelKind(k): v for k, v in doc.get("units", {}).items()}
    return BundleManifest(doc["subject_id"], files, units)


def discover_bundles(root: Path) -> list[SubjectBundle]:
    """Parse every subject directory under ``root`` (sorted for determinism)."""
    root = Path(root)
    bundles = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        manifest_path = sub / "manifest.json"
        if manifest_path.exists():
            manifest = load_manifest(manifest_path)
        else:
            files = {
                ch: sub / name for ch, name in CHANNEL_FILES.items() if (sub / name).exists()
            }
            if not files:
                continue
            manifest = BundleManifest(sub.name, files)
        bundles.append(parse_csv_bundle(manifest))
    if not bundles:
        raise FileNotFoundError(f"no subject bundles under {root}")
    return bundles


def write_bundle(bundle: SubjectBundle, out_dir: Path) -> Path:
    """Serialize a bundle in the canonical CSV layout (bit-stable floats)."""
    sub_dir = Path(out_dir) / bundle.subject_id
    sub_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for ch, series in sorted(bundle.series.items(), key=lambda kv: kv[0].value):
        name = CHANNEL_FILES[ch]
        files[ch.value] = name
        with open(sub_dir / name, "w", newline="") as fh:
            fh.write("timestamp,value\n")
            for t, v in zip(series.times, series.values):
                fh.write(f"{format_timestamp(int(t))},{float(v)!r}\n")
    manifest = {
        "subject_id": bundle.subject_id,
        "files": files,
        "units": {ch.value: ch.units for ch in bundle.series},
    }
    (sub_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return sub_dir


def _parse_ohio_ts(text: str) -> int:
    try:
        return parse_timestamp(text)
    except ValueError:
        pass
    dt = datetime.strptime(text.strip(), "%d-%m-%Y %H:%M:%S")
    return int(dt.replace(tzinfo=timezone.utc).timestamp())


def parse_ohio_xml(path: Path) -> SubjectBundle:
    """Adapter for the per-patient XML layout (per-signal event lists with
    ts/value attributes).  Unrecognized signal parents are skipped; malformed
    events under recognized parents raise SchemaMismatch naming the path."""
    path = Path(path)
    try:
        root = ElementTree.parse(path).getroot()
    except ElementTree.ParseError as exc:
        raise SchemaMismatchError(f"{path}: not well-formed XML ({exc})") from exc
    subject_id = root.attrib.get("id") or path.stem
    raw: dict[ChannelKind, tuple[list, list]] = {}
    recognized_any = False
    for parent in root:
        channel = XML_PARENTS.get(parent.tag)
        if channel is None:
            continue
        recognized_any = True
        times, values = raw.setdefault(channel, ([], []))
        for event in parent:
            where = f"{root.tag}/{parent.tag}/{event.tag}"
            if event.tag != "event" or "ts" not in event.attrib or "value" not in event.attrib:
                raise SchemaMismatchError(f"{path}: unrecognized element {where}")
            try:
                times.append(_parse_ohio_ts(event.attrib["ts"]))
                values.append(float(event.attrib["value"]))
            except (ValueError, OverflowError) as exc:
                raise SchemaMismatchError(f"{path}: bad event at {where}: {exc}") from exc
    if not recognized_any:
        first = root[0].tag if len(root) else "(empty root)"
        raise SchemaMismatchError(f"{path}: no recognized signal parents; first child {first!r}")
    series = {
        ch: _sorted_series(subject_id, ch, times, values) for ch, (times, values) in raw.items()
    }
    return SubjectBundle(subject_id, series, BundleSource.OHIO_XML)


@dataclass(frozen=True)
class LeakageViolation:
    kind: str
    detail: str


def leakage_guard(bundles: list[SubjectBundle], plan: SplitPlan) -> list[LeakageViolation]:
    """Report-only check that the plan is a sane subject-level partition."""
    out: list[LeakageViolation] = []
    parts = {"train": plan.train, "val": plan.val, "test": plan.test}
    for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
        shared = sorted(parts[a] & parts[b])
        for sid in shared:
            out.append(LeakageViolation("SharedSubject", f"{sid} in both {a} and {b}"))
    for name, ids in parts.items():
        if not ids:
            out.append(LeakageViolation("EmptyPartition", name))
    known = {b.subject_id for b in bundles}
    for sid in sorted((plan.train | plan.val | plan.test) - known):
        out.append(LeakageViolation("UnknownSubject", sid))
    for sid in sorted(known - (plan.train | plan.val | plan.test)):
        out.append(LeakageViolation("UnassignedSubject", sid))
    return out
