"""Connectivity tests: variants, masking exactness, planted coupling,
baselines, attribution, and gains."""

import numpy as np
import pytest

from nenc.connectivity import (
    AttributionMatrix,
    ConnectivityConfig,
    RegionLayout,
    attribute,
    attribute_sources,
    baseline_identity,
    baseline_random,
    connectivity_gain,
    effective_map,
    forward,
    infer_connectivity,
    load_connectivity,
    save_connectivity,
    train_connectivity,
    variant_mask,
)
from nenc.errors import DimensionError, ProvenanceError
from nenc.metrics import RegionScore, region_score
from nenc.provenance import GROUNDTRUTH, PREDICTION, tag


def small_layout():
    return RegionLayout.from_pairs([("A", 3), ("B", 2), ("T", 4)])


def planted_instance(seed, n=300, sigma_t=0.02, big=False):
    """Target region is a fixed linear mix of regions A and B plus noise."""
    rng = np.random.default_rng(seed)
    sizes = (
        [("A", 90), ("B", 80), ("C", 85), ("D", 95), ("T", 100)]
        if big
        else [("A", 20), ("B", 16), ("C", 18), ("D", 22), ("T", 24)]
    )
    layout = RegionLayout.from_pairs(sizes)
    counts = dict(sizes)
    gt = {name: rng.normal(size=(n, count)) for name, count in layout.regions if name != "T"}
    mix_a = rng.normal(size=(counts["T"], counts["A"])) / np.sqrt(counts["A"])
    mix_b = rng.normal(size=(counts["T"], counts["B"])) / np.sqrt(counts["B"])
    gt["T"] = (
        gt["A"] @ mix_a.T + gt["B"] @ mix_b.T + sigma_t * rng.normal(size=(n, counts["T"]))
    )
    concat = np.hstack([gt[name] for name in layout.names])
    return layout, gt, concat


class TestRegionLayout:
    def test_slices_and_total(self):
        layout = small_layout()
        assert layout.total == 9
        assert layout.slice_of("A") == slice(0, 3)
        assert layout.slice_of("B") == slice(3, 5)
        assert layout.slice_of("T") == slice(5, 9)
        assert layout.voxel_count("T") == 4

    def test_duplicate_regions_rejected(self):
        with pytest.raises(DimensionError):
            RegionLayout.from_pairs([("A", 3), ("A", 2)])

    def test_unknown_region_rejected(self):
        with pytest.raises(DimensionError):
            small_layout().slice_of("Z")

    def test_variant_masks(self):
        layout = small_layout()
        intra = variant_mask(layout, "T", "intra")
        inter = variant_mask(layout, "T", "inter")
        full = variant_mask(layout, "T", "full")
        assert intra.tolist() == [False] * 5 + [True] * 4
        assert inter.tolist() == [True] * 5 + [False] * 4
        assert full.all()
        with pytest.raises(DimensionError):
            variant_mask(layout, "T", "both")


class TestBaselines:
    def test_identity_sums_live_slots(self):
        layout = small_layout()
        model = baseline_identity(layout, "T")
        c = 2.5
        out = forward(model, np.full((6, layout.total), c))
        # every output unit equals c times the number of active input slots
        np.testing.assert_array_equal(out, np.full((6, 4), c * layout.total))

    def test_identity_effective_map_is_all_ones(self):
        model = baseline_identity(small_layout(), "T")
        np.testing.assert_array_equal(effective_map(model), np.ones((4, 9)))

    def test_random_seeded_determinism(self):
        layout = small_layout()
        a = baseline_random(layout, "T", hidden=8, seed=42)
        b = baseline_random(layout, "T", hidden=8, seed=42)
        assert a.a1.tobytes() == b.a1.tobytes()
        assert a.a2.tobytes() == b.a2.tobytes()
        c = baseline_random(layout, "T", hidden=8, seed=43)
        assert a.a1.tobytes() != c.a1.tobytes()

    def test_random_weights_within_xavier_bound(self):
        layout = small_layout()
        model = baseline_random(layout, "T", hidden=64, seed=0)
        bound1 = np.sqrt(6.0 / (64 + layout.total))
        bound2 = np.sqrt(6.0 / (4 + 64))
        assert np.abs(model.a1).max() <= bound1
        assert np.abs(model.a2).max() <= bound2
        assert model.a1.std() > 0.1 * bound1

    def test_random_baseline_scores_near_zero(self):
        # Untrained model against >= 100 test videos stays inside the null
        # band. Region sizes are realistic (tens to hundreds of voxels);
        # the chance overlap of a random readout shrinks with both the
        # concatenated width and the per-region voxel count.
        layout, gt, concat = planted_instance(3, n=150, big=True)
        preds = concat + 0.3 * np.random.default_rng(4).normal(size=concat.shape)
        for seed in (0, 1, 2, 3, 4):
            model = baseline_random(layout, "T", hidden=128, seed=seed)
            out = infer_connectivity(model, tag(preds, PREDICTION, range(150)))
            assert abs(region_score(out, gt["T"]).r) < 0.05


class TestTraining:
    def test_intra_identity_solution_reachable(self):
        # dropout 0, tiny L2, hidden >= target width: training MSE -> ~0
        rng = np.random.default_rng(5)
        layout = small_layout()
        data = rng.normal(size=(120, layout.total))
        cfg = ConnectivityConfig(
            hidden=8, p1=0.0, p2=0.0, lambda_c=1e-8, max_epochs=2000, patience=2000
        )
        _, report = train_connectivity(
            tag(data[:100], GROUNDTRUTH, range(100)),
            tag(data[100:], GROUNDTRUTH, range(100, 120)),
            layout,
            "T",
            cfg,
            variant="intra",
            seed=0,
        )
        assert report.train_loss[-1] < 1e-3 * report.train_loss[0]

    def test_planted_coupling_full_beats_intra(self):
        layout, gt, concat = planted_instance(0)
        rng = np.random.default_rng(1)
        noise = {"A": 0.3, "B": 0.3, "C": 0.3, "D": 0.3, "T": 1.5}
        preds = np.hstack(
            [gt[nm] + noise[nm] * rng.normal(size=gt[nm].shape) for nm in layout.names]
        )
        tr, va, te = np.arange(180), np.arange(180, 220), np.arange(220, 300)
        cfg = ConnectivityConfig(hidden=64, lambda_c=1e-3, max_epochs=300, patience=20)
        scores = {}
        for variant in ("intra", "full"):
            model, _ = train_connectivity(
                tag(concat[tr], GROUNDTRUTH, tr),
                tag(concat[va], GROUNDTRUTH, va),
                layout,
                "T",
                cfg,
                variant=variant,
                seed=7,
            )
            refined = infer_connectivity(model, tag(preds[te], PREDICTION, te))
            scores[variant] = region_score(refined, gt["T"][te]).r
        assert scores["full"] - scores["intra"] > 0.05

    def test_inter_variant_ignores_target_slots_exactly(self):
        layout, _, concat = planted_instance(2, n=150)
        tr, va = np.arange(120), np.arange(120, 150)
        cfg = ConnectivityConfig(hidden=16, lambda_c=1e-3, max_epochs=50, patience=10)
        model, _ = train_connectivity(
            tag(concat[tr], GROUNDTRUTH, tr),
            tag(concat[va], GROUNDTRUTH, va),
            layout,
            "T",
            cfg,
            variant="inter",
            seed=3,
        )
        x = concat[va].copy()
        base = forward(model, x)
        x[:, layout.slice_of("T")] = 1e6  # arbitrary garbage in masked slots
        np.testing.assert_array_equal(forward(model, x), base)
        # finite perturbation of a masked slot changes nothing: gradient is 0
        x2 = concat[va].copy()
        x2[:, layout.slice_of("T").start] += 1e-3
        np.testing.assert_array_equal(forward(model, x2), base)
        # masked columns of the first affine map never move off zero
        assert not model.a1[:, layout.slice_of("T")].any()

    def test_seeded_dropout_reproducible(self):
        layout, _, concat = planted_instance(4, n=150)
        tr, va = np.arange(120), np.arange(120, 150)
        cfg = ConnectivityConfig(hidden=16, lambda_c=1e-3, max_epochs=60, patience=60)
        runs = [
            train_connectivity(
                tag(concat[tr], GROUNDTRUTH, tr),
                tag(concat[va], GROUNDTRUTH, va),
                layout,
                "T",
                cfg,
                variant="full",
                seed=11,
            )
            for _ in range(2)
        ]
        (m1, r1), (m2, r2) = runs
        assert r1.train_loss == r2.train_loss
        assert m1.a1.tobytes() == m2.a1.tobytes()
        cfg_other = train_connectivity(
            tag(concat[tr], GROUNDTRUTH, tr),
            tag(concat[va], GROUNDTRUTH, va),
            layout,
            "T",
            cfg,
            variant="full",
            seed=12,
        )
        assert cfg_other[1].train_loss != r1.train_loss

    def test_two_stage_provenance_enforced(self):
        layout, _, concat = planted_instance(5, n=60)
        train = tag(concat[:40], PREDICTION, range(40))  # wrong stage
        val = tag(concat[40:], GROUNDTRUTH, range(40, 60))
        with pytest.raises(ProvenanceError):
            train_connectivity(train, val, layout, "T", ConnectivityConfig(hidden=4))
        model = baseline_identity(layout, "T")
        with pytest.raises(ProvenanceError):
            infer_connectivity(model, tag(concat[:10], GROUNDTRUTH, range(10)))

    def test_missing_region_prediction_rejected(self):
        model = baseline_identity(small_layout(), "T")
        with pytest.raises(DimensionError, match="missing region"):
            infer_connectivity(model, np.zeros((5, 7)))  # too narrow


class TestAttribution:
    def test_identity_model_uniform_row(self):
        layout = RegionLayout.from_pairs([("A", 4), ("B", 4), ("T", 4)])
        sources = attribute_sources(baseline_identity(layout, "T"))
        np.testing.assert_allclose(sources, np.ones(3))

    def test_intra_model_off_diagonal_zero(self):
        layout, _, concat = planted_instance(6, n=150)
        tr, va = np.arange(120), np.arange(120, 150)
        cfg = ConnectivityConfig(hidden=16, lambda_c=1e-3, max_epochs=60, patience=10)
        model, _ = train_connectivity(
            tag(concat[tr], GROUNDTRUTH, tr),
            tag(concat[va], GROUNDTRUTH, va),
            layout,
            "T",
            cfg,
            variant="intra",
            seed=2,
        )
        sources = dict(zip(layout.names, attribute_sources(model)))
        assert sources["T"] > 0.0
        for name in ("A", "B", "C", "D"):
            assert sources[name] == 0.0

    def test_planted_sources_carry_top_two_mass(self):
        layout, _, concat = planted_instance(7)
        tr, va = np.arange(220), np.arange(220, 300)
        cfg = ConnectivityConfig(
            hidden=64, p1=0.3, p2=0.2, lambda_c=1e-3, max_epochs=300, patience=20
        )
        model, _ = train_connectivity(
            tag(concat[tr], GROUNDTRUTH, tr),
            tag(concat[va], GROUNDTRUTH, va),
            layout,
            "T",
            cfg,
            variant="full",
            seed=7,
        )
        sources = dict(zip(layout.names, attribute_sources(model)))
        top2 = sorted(sources, key=sources.get, reverse=True)[:2]
        assert set(top2) == {"A", "B"}

    def test_matrix_assembly_and_flags(self):
        layout = RegionLayout.from_pairs([("A", 2), ("B", 2)])
        models = {
            "A": baseline_identity(layout, "A"),
            "B": baseline_random(layout, "B", hidden=4, seed=0),
        }
        matrix = attribute(models, layout)
        assert matrix.values.shape == (2, 2)
        assert matrix.non_informative == ("A", "B")
        np.testing.assert_allclose(matrix.values[:, 0], np.ones(2))
        normalized = matrix.normalized()
        np.testing.assert_allclose(normalized.values.sum(axis=0), np.ones(2))

    def test_missing_target_rejected(self):
        layout = RegionLayout.from_pairs([("A", 2), ("B", 2)])
        with pytest.raises(DimensionError):
            attribute({"A": baseline_identity(layout, "A")}, layout)


def _scores(region, values_by_fold, subject="01"):
    return [
        RegionScore(region, subject, fold, r, voxels_scored=5, voxels_excluded=0)
        for fold, r in values_by_fold.items()
    ]


class TestGain:
    def test_identical_scores_zero_delta(self):
        base = _scores("V1", {0: 0.3, 1: 0.4})
        gains = connectivity_gain(base, list(base))
        assert gains["V1"].deltas == (0.0, 0.0)
        assert gains["V1"].mean == 0.0

    def test_hand_computed_deltas(self):
        base = _scores("V1", {0: 0.30, 1: 0.40})
        refined = _scores("V1", {0: 0.35, 1: 0.43})
        g = gains = connectivity_gain(base, refined)["V1"]
        assert g.deltas == pytest.approx((0.05, 0.03))
        assert g.mean == pytest.approx(0.04)
        assert g.std == pytest.approx(0.01)
        assert g.scaled() == pytest.approx((5.0, 3.0))

    def test_subjects_averaged_before_differencing(self):
        base = _scores("V1", {0: 0.2}) + _scores("V1", {0: 0.4}, subject="02")
        refined = _scores("V1", {0: 0.5}) + _scores("V1", {0: 0.5}, subject="02")
        g = connectivity_gain(base, refined)["V1"]
        assert g.deltas == pytest.approx((0.2,))

    def test_mismatched_folds_rejected(self):
        base = _scores("V1", {0: 0.3, 1: 0.4})
        refined = _scores("V1", {0: 0.35})
        with pytest.raises(DimensionError):
            connectivity_gain(base, refined)


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        layout, _, concat = planted_instance(8, n=100)
        cfg = ConnectivityConfig(hidden=8, lambda_c=1e-2, max_epochs=30, patience=10)
        model, _ = train_connectivity(
            tag(concat[:80], GROUNDTRUTH, range(80)),
            tag(concat[80:], GROUNDTRUTH, range(80, 100)),
            layout,
            "T",
            cfg,
            variant="full",
            seed=1,
        )
        save_connectivity(model, tmp_path / "conn.nenc")
        loaded = load_connectivity(tmp_path / "conn.nenc")
        assert loaded.target == "T"
        assert loaded.variant == "full"
        assert loaded.trained
        x = concat[:10]
        np.testing.assert_allclose(forward(loaded, x), forward(model, x), atol=1e-4)
