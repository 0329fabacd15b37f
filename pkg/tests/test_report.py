"""Report emission tests: golden bytes, round trips, SVG content."""

from pathlib import Path

import numpy as np
import pytest

from nenc.connectivity import AttributionMatrix, GainSummary
from nenc.encoder import FitReport
from nenc.errors import FormatError
from nenc.harness import (
    ComparisonSpec,
    ConnectivityResult,
    ModelResult,
    RunResult,
    compare_families,
    make_folds,
)
from nenc.metrics import RegionScore
from nenc.report import (
    emit_report,
    grouped_bar_svg,
    heatmap_svg,
    read_bundle,
    write_comparison,
)

GOLDEN = Path(__file__).parent / "golden" / "report"


def fixture_result() -> RunResult:
    """Small fully-populated bundle with hand-fixed numbers."""
    regions = ("V1", "V2")
    subjects = ("01", "02")
    scores = []
    refined = []
    base_value = {"V1": 0.30, "V2": 0.40}
    for si, subject in enumerate(subjects):
        for region in regions:
            for fold in range(2):
                r = base_value[region] + 0.01 * fold + 0.002 * si
                scores.append(RegionScore(region, subject, fold, r, 10, 0))
                refined.append(RegionScore(region, subject, fold, r + 0.02, 10, 0))
    report = FitReport(
        beta1=1.0,
        beta2=10.0,
        step_size=0.01,
        train_loss=[10.0, 5.0, 4.0],
        val_loss=[3.0, 2.0, 1.5],
        selected_epoch=2,
        epochs_run=2,
        omega=[0.6, 0.4],
        region="V1",
        score=0.31,
    )
    gains = {
        "full": {
            region: GainSummary(region, (0.02, 0.02), 0.02, 0.0) for region in regions
        }
    }
    attribution = AttributionMatrix(
        regions=regions, values=np.array([[0.5, 0.25], [0.125, 0.4]])
    )
    connectivity = ConnectivityResult(
        lambda_by_variant={"full": 0.01},
        scores={"full": refined},
        baseline_scores={},
        gains=gains,
        attribution=attribution,
    )
    model_result = ModelResult(
        model="toy_net",
        betas=(1.0, 10.0),
        tune_scores={(1.0, 10.0): 0.31},
        scores=scores,
        fit_reports={"toy_net__sub-01__V1__fold0": report},
        connectivity=connectivity,
    )
    return RunResult(
        mode="real",
        seed=7,
        plan=make_folds(20, 2, seed=7),
        regions=regions,
        subjects=subjects,
        models={"toy_net": model_result},
        config_echo={"mode": "real", "seed": 7},
    )


class TestEmitReport:
    def test_emission_is_deterministic(self, tmp_path):
        paths_a = emit_report(fixture_result(), tmp_path / "a")
        paths_b = emit_report(fixture_result(), tmp_path / "b")
        rel_a = [p.relative_to(tmp_path / "a") for p in paths_a]
        rel_b = [p.relative_to(tmp_path / "b") for p in paths_b]
        assert rel_a == rel_b
        for rel in rel_a:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_matches_golden_files(self, tmp_path):
        emit_report(fixture_result(), tmp_path / "out")
        golden_files = sorted(p for p in GOLDEN.rglob("*") if p.is_file())
        assert golden_files, "golden files missing; regenerate with tests/make_golden.py"
        for golden in golden_files:
            rel = golden.relative_to(GOLDEN)
            produced = tmp_path / "out" / rel
            assert produced.exists(), f"missing output {rel}"
            assert produced.read_bytes() == golden.read_bytes(), f"bytes differ for {rel}"

    def test_empty_bundle_rejected(self, tmp_path):
        result = fixture_result()
        result.models = {}
        with pytest.raises(FormatError, match="empty"):
            emit_report(result, tmp_path / "out")
        assert not (tmp_path / "out" / "scores.csv").exists()

    def test_json_round_trip(self, tmp_path):
        result = fixture_result()
        emit_report(result, tmp_path / "out")
        bundle = read_bundle(tmp_path / "out")
        assert bundle["manifest"]["mode"] == "real"
        assert bundle["manifest"]["seed"] == 7
        encoder_scores = [s for m, stage, s in bundle["scores"] if stage == "encoder"]
        assert sorted(encoder_scores, key=lambda s: (s.subject, s.region, s.fold)) == sorted(
            result.models["toy_net"].scores,
            key=lambda s: (s.subject, s.region, s.fold),
        )

    def test_attribution_csv_and_heatmap_written(self, tmp_path):
        emit_report(fixture_result(), tmp_path / "out")
        csv_text = (tmp_path / "out" / "connectivity" / "attribution__toy_net.csv").read_text()
        assert csv_text.splitlines()[0] == "source\\target,V1,V2"
        svg = (tmp_path / "out" / "plots" / "attribution__toy_net.svg").read_text()
        assert svg.startswith("<svg")
        assert "0.500" in svg  # cell annotation


class TestComparisonReport:
    def _comparison(self):
        rng = np.random.default_rng(0)
        results = {}
        for group, base in (("a", 0.8), ("b", 0.4)):
            for i in range(3):
                model = f"{group}{i}"
                results[model] = [
                    RegionScore(region, "01", fold, base + 0.01 * rng.normal(), 10, 0)
                    for region in ("V1", "V2")
                    for fold in range(3)
                ]
        spec = ComparisonSpec(groups={"A": ("a0", "a1", "a2"), "B": ("b0", "b1", "b2")})
        return compare_families(spec, results)

    def test_files_written_with_stars(self, tmp_path):
        paths = write_comparison(self._comparison(), tmp_path, name="img_vs_vid")
        names = {p.name for p in paths}
        assert names == {
            "img_vs_vid.csv",
            "img_vs_vid_significance.csv",
            "img_vs_vid.json",
            "img_vs_vid.svg",
        }
        sig = (tmp_path / "img_vs_vid_significance.csv").read_text()
        assert "***" in sig
        svg = (tmp_path / "img_vs_vid.svg").read_text()
        assert "***" in svg

    def test_deterministic(self, tmp_path):
        write_comparison(self._comparison(), tmp_path / "x", name="c")
        write_comparison(self._comparison(), tmp_path / "y", name="c")
        for name in ("c.csv", "c_significance.csv", "c.json", "c.svg"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


class TestSvgPrimitives:
    def test_grouped_bars_contain_error_bars(self):
        svg = grouped_bar_svg(
            "demo",
            ["V1", "V2"],
            [("g1", [0.3, 0.4], [0.05, 0.02]), ("g2", [0.2, 0.1], [0.01, 0.01])],
            stars=["**", "ns"],
        )
        assert svg.count("<rect") >= 5  # background + legend boxes + bars
        assert svg.count("<line") >= 12  # gridlines + error bars with caps
        assert "**" in svg and "ns" in svg

    def test_heatmap_shape_checked(self):
        with pytest.raises(Exception):
            heatmap_svg("t", ["a"], ["b", "c"], np.zeros((2, 2)))

    def test_negative_values_plot(self):
        svg = grouped_bar_svg("neg", ["x"], [("g", [-0.2], [0.05])])
        assert "<svg" in svg
