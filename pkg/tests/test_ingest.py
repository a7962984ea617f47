import numpy as np
import pytest

from hypowear.core import ChannelKind, SampleSeries
from hypowear.dataset import SplitPlan
from hypowear.ingest import (
    BundleManifest,
    BundleSource,
    EmptySeriesError,
    MissingCgmError,
    SchemaMismatchError,
    SubjectBundle,
    discover_bundles,
    leakage_guard,
    load_manifest,
    parse_csv_bundle,
    parse_ohio_xml,
    write_bundle,
)

CGM_ROWS = "timestamp,value\n2021-01-01T00:00:00Z,120\n2021-01-01T00:05:00Z,118\n"


def make_bundle_dir(tmp_path, subject="subj1", gsr_rows=None, with_cgm=True):
    d = tmp_path / subject
    d.mkdir(parents=True)
    if with_cgm:
        (d / "cgm.csv").write_text(CGM_ROWS)
    gsr = gsr_rows or "timestamp,value\n2021-01-01T00:00:00Z,1.5\n2021-01-01T00:00:05Z,1.6\n"
    (d / "gsr.csv").write_text(gsr)
    return d


class TestCsvBundle:
    def test_two_row_gsr(self, tmp_path):
        d = make_bundle_dir(tmp_path)
        manifest = BundleManifest(
            "subj1", {ChannelKind.CGM: d / "cgm.csv", ChannelKind.GSR: d / "gsr.csv"}
        )
        bundle = parse_csv_bundle(manifest)
        assert len(bundle.series[ChannelKind.GSR]) == 2
        assert bundle.series[ChannelKind.GSR].values.tolist() == [1.5, 1.6]
        assert bundle.source is BundleSource.CSV_BUNDLE

    def test_missing_cgm(self, tmp_path):
        d = make_bundle_dir(tmp_path, with_cgm=False)
        manifest = BundleManifest("subj1", {ChannelKind.GSR: d / "gsr.csv"})
        with pytest.raises(MissingCgmError):
            parse_csv_bundle(manifest)

    def test_corrupt_rows_skipped_and_counted(self, tmp_path):
        rows = ["timestamp,value"]
        for i in range(10):
            rows.append(f"2021-01-01T00:00:{i:02d}Z,{i}.0")
        rows[4] = "not-a-time,oops"
        d = make_bundle_dir(tmp_path, gsr_rows="\n".join(rows) + "\n")
        manifest = BundleManifest(
            "subj1", {ChannelKind.CGM: d / "cgm.csv", ChannelKind.GSR: d / "gsr.csv"}
        )
        bundle = parse_csv_bundle(manifest)
        assert len(bundle.series[ChannelKind.GSR]) == 9
        assert bundle.skipped_rows["gsr"] == 1

    def test_empty_series(self, tmp_path):
        d = make_bundle_dir(tmp_path, gsr_rows="timestamp,value\nbad,row\n")
        manifest = BundleManifest(
            "subj1", {ChannelKind.CGM: d / "cgm.csv", ChannelKind.GSR: d / "gsr.csv"}
        )
        with pytest.raises(EmptySeriesError):
            parse_csv_bundle(manifest)

    def test_order_insensitive(self, tmp_path):
        rows = [f"2021-01-01T00:{m:02d}:00Z,{m}.25" for m in range(8)]
        fwd = make_bundle_dir(tmp_path / "a", gsr_rows="timestamp,value\n" + "\n".join(rows) + "\n")
        rev = make_bundle_dir(
            tmp_path / "b", gsr_rows="timestamp,value\n" + "\n".join(reversed(rows)) + "\n"
        )
        b1 = parse_csv_bundle(
            BundleManifest("subj1", {ChannelKind.CGM: fwd / "cgm.csv", ChannelKind.GSR: fwd / "gsr.csv"})
        )
        b2 = parse_csv_bundle(
            BundleManifest("subj1", {ChannelKind.CGM: rev / "cgm.csv", ChannelKind.GSR: rev / "gsr.csv"})
        )
        assert np.array_equal(b1.series[ChannelKind.GSR].times, b2.series[ChannelKind.GSR].times)
        assert np.array_equal(b1.series[ChannelKind.GSR].values, b2.series[ChannelKind.GSR].values)

    def test_write_parse_roundtrip_bit_identical(self, tmp_path):
        series = {
            ChannelKind.CGM: SampleSeries(
                "s9", ChannelKind.CGM, [0, 300, 600], [120.0, 71.33333333333333, 69.9]
            ),
            ChannelKind.GSR: SampleSeries("s9", ChannelKind.GSR, [0, 1], [0.1 + 0.2, 1e-7]),
        }
        bundle = SubjectBundle("s9", series, BundleSource.SYNTHETIC)
        out = tmp_path / "bundles"
        write_bundle(bundle, out)
        parsed = parse_csv_bundle(load_manifest(out / "s9" / "manifest.json"))
        for ch in series:
            assert np.array_equal(parsed.series[ch].times, series[ch].times)
            assert np.array_equal(parsed.series[ch].values, series[ch].values)

    def test_discover_bundles_sorted(self, tmp_path):
        for name in ("s2", "s1"):
            make_bundle_dir(tmp_path, subject=name)
        bundles = discover_bundles(tmp_path)
        assert [b.subject_id for b in bundles] == ["s1", "s2"]


OHIO_XML = """<patient id="p42">
  <glucose_level>
    <event ts="01-06-2021 00:00:00" value="110"/>
    <event ts="01-06-2021 00:05:00" value="100"/>
    <event ts="01-06-2021 00:10:00" value="90"/>
  </glucose_level>
  <basis_gsr>
    <event ts="01-06-2021 00:00:00" value="1.2"/>
  </basis_gsr>
  <basis_steps>
    <event ts="01-06-2021 00:00:00" value="12"/>
  </basis_steps>
</patient>
"""


class TestOhioXml:
    def test_fixture_roundtrip(self, tmp_path):
        p = tmp_path / "p42.xml"
        p.write_text(OHIO_XML)
        bundle = parse_ohio_xml(p)
        assert bundle.subject_id == "p42"
        assert len(bundle.series[ChannelKind.CGM]) == 3
        assert bundle.source is BundleSource.OHIO_XML

    def test_missing_heart_rate_parent_ok(self, tmp_path):
        p = tmp_path / "p.xml"
        p.write_text(OHIO_XML)
        bundle = parse_ohio_xml(p)
        assert ChannelKind.HR not in bundle.series
        assert set(bundle.series) == {ChannelKind.CGM, ChannelKind.GSR}

    def test_malformed_ts(self, tmp_path):
        p = tmp_path / "p.xml"
        p.write_text(OHIO_XML.replace("01-06-2021 00:05:00", "whenever"))
        with pytest.raises(SchemaMismatchError):
            parse_ohio_xml(p)

    def test_no_recognized_parents(self, tmp_path):
        p = tmp_path / "p.xml"
        p.write_text("<patient id='x'><movement><event ts='a' value='1'/></movement></patient>")
        with pytest.raises(SchemaMismatchError, match="movement"):
            parse_ohio_xml(p)


def bundle_stub(subject):
    series = {
        ChannelKind.CGM: SampleSeries(subject, ChannelKind.CGM, [0], [100.0]),
        ChannelKind.GSR: SampleSeries(subject, ChannelKind.GSR, [0], [1.0]),
    }
    return SubjectBundle(subject, series, BundleSource.SYNTHETIC)


class TestLeakageGuard:
    def test_disjoint_plan_ok(self):
        bundles = [bundle_stub(s) for s in ("A", "B", "C")]
        plan = SplitPlan(frozenset(["A"]), frozenset(["B"]), frozenset(["C"]), seed=0)
        assert leakage_guard(bundles, plan) == []

    def test_shared_subject(self):
        bundles = [bundle_stub(s) for s in ("A", "B", "C")]
        plan = SplitPlan(frozenset(["A", "B"]), frozenset(["C"]), frozenset(["A"]), seed=0)
        violations = leakage_guard(bundles, plan)
        assert any(v.kind == "SharedSubject" and "A" in v.detail for v in violations)

    def test_empty_partition(self):
        bundles = [bundle_stub(s) for s in ("A", "B")]
        plan = SplitPlan(frozenset(["A"]), frozenset(["B"]), frozenset(), seed=0)
        violations = leakage_guard(bundles, plan)
        assert any(v.kind == "EmptyPartition" and v.detail == "test" for v in violations)

    def test_unknown_subject(self):
        bundles = [bundle_stub("A"), bundle_stub("B"), bundle_stub("Z")]
        plan = SplitPlan(frozenset(["A"]), frozenset(["B"]), frozenset(["C"]), seed=0)
        violations = leakage_guard(bundles, plan)
        kinds = {v.kind for v in violations}
        assert "UnknownSubject" in kinds and "UnassignedSubject" in kinds
