"""Feature store tests: formats, temporal averaging, sparse projection."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nenc.errors import DimensionError, FormatError
from nenc.featurestore import (
    FeatureManifest,
    LayerInfo,
    ProjectionSpec,
    ResponseManifest,
    apply_projection,
    average_by_video,
    make_projection,
    projection_matrix,
    projection_seed,
    read_feature_set,
    read_matrix,
    read_response_set,
    temporal_average,
    write_feature_set,
    write_matrix,
    write_response_set,
)


class TestTemporalAverage:
    def test_two_frames(self):
        assert temporal_average([[1.0, 2.0], [3.0, 4.0]]) == pytest.approx([2.0, 3.0])

    def test_single_frame_identity(self):
        assert temporal_average([[5.0, 7.0]]) == pytest.approx([5.0, 7.0])

    def test_against_summation_oracle(self):
        rng = np.random.default_rng(42)
        raw = rng.normal(size=(7, 16))
        got = temporal_average(raw)
        # per-column summation oracle at double precision
        expected = [sum(float(raw[f, j]) for f in range(7)) / 7.0 for j in range(16)]
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    @given(seed=st.integers(min_value=0, max_value=2**16))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.normal(size=(9, 5))
        shuffled = raw[rng.permutation(9)]
        np.testing.assert_allclose(
            temporal_average(shuffled), temporal_average(raw), rtol=1e-12
        )

    def test_zero_frames_rejected(self):
        with pytest.raises(DimensionError):
            temporal_average(np.empty((0, 4)))

    def test_nonfinite_rejected(self):
        with pytest.raises(FormatError):
            temporal_average([[1.0, float("nan")]])

    def test_average_by_video(self):
        frames = np.array([[1.0, 2.0], [3.0, 4.0], [10.0, 20.0]])
        out = average_by_video(frames, [2, 1])
        np.testing.assert_allclose(out, [[2.0, 3.0], [10.0, 20.0]])
        with pytest.raises(DimensionError):
            average_by_video(frames, [2, 2])


class TestProjection:
    def test_seeded_determinism(self):
        a = projection_matrix(make_projection(42, 1024, 256))
        b = projection_matrix(make_projection(42, 1024, 256))
        assert a.tobytes() == b.tobytes()

    def test_different_seeds_differ(self):
        a = projection_matrix(make_projection(1, 256, 64))
        b = projection_matrix(make_projection(2, 256, 64))
        assert a.tobytes() != b.tobytes()

    def test_unit_row_second_moment(self):
        # E||e_i^T R||^2 = 1; Monte-Carlo over 10^4 basis vectors.
        spec = make_projection(5, 10_000, 32)
        r = projection_matrix(spec)
        norms_sq = np.einsum("ij,ij->i", r, r)
        assert abs(norms_sq.mean() - 1.0) < 0.05

    def test_nonzero_fraction_matches_density(self):
        in_dim = 4096
        spec = make_projection(9, in_dim, 128)
        r = projection_matrix(spec)
        frac = np.count_nonzero(r) / r.size
        expected = 1.0 / np.sqrt(in_dim)
        assert abs(frac - expected) / expected < 0.10

    def test_invalid_dims_rejected(self):
        with pytest.raises(DimensionError):
            make_projection(0, 128, 0)
        with pytest.raises(DimensionError):
            make_projection(0, 128, 256)
        with pytest.raises(DimensionError):
            ProjectionSpec(seed=0, in_dim=10, out_dim=-1, s=2.0)

    def test_zero_matrix_maps_to_zero(self):
        spec = make_projection(3, 64, 16)
        out = apply_projection(spec, np.zeros((5, 64)))
        assert out.shape == (5, 16)
        assert not out.any()

    def test_linearity(self):
        rng = np.random.default_rng(4)
        spec = make_projection(11, 128, 32)
        x, y = rng.normal(size=(6, 128)), rng.normal(size=(6, 128))
        a, b = 2.5, -1.25
        lhs = apply_projection(spec, a * x + b * y)
        rhs = a * apply_projection(spec, x) + b * apply_projection(spec, y)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9)

    def test_johnson_lindenstrauss_distortion(self):
        rng = np.random.default_rng(2048)
        spec = make_projection(77, 2048, 512)
        r = projection_matrix(spec)
        ok = 0
        for _ in range(100):
            x, y = rng.normal(size=2048), rng.normal(size=2048)
            ratio = np.linalg.norm((x - y) @ r) / np.linalg.norm(x - y)
            ok += 0.7 <= ratio <= 1.3
        assert ok >= 95

    def test_dimension_mismatch_names_layer(self):
        spec = make_projection(0, 64, 16)
        with pytest.raises(DimensionError, match="block3"):
            apply_projection(spec, np.zeros((4, 65)), layer="block3")

    def test_projection_seed_stable(self):
        assert projection_seed(3, "layer1") == projection_seed(3, "layer1")
        assert projection_seed(3, "layer1") != projection_seed(3, "layer2")
        assert projection_seed(3, "layer1") != projection_seed(4, "layer1")


def _manifest(num_videos=4, layers=None):
    return FeatureManifest(
        model_name="toy_net",
        video_ids=[f"vid{i:03d}" for i in range(num_videos)],
        layers=layers or [LayerInfo("conv1", 8), LayerInfo("conv2", 5)],
        notes="unit fixture",
    )


class TestFeatureSetIO:
    def test_matrix_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(7, 9)).astype(np.float32)
        write_matrix(tmp_path / "m.bin", a)
        b = read_matrix(tmp_path / "m.bin")
        assert a.tobytes() == b.tobytes()

    def test_feature_set_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        manifest = _manifest()
        arrays = {
            "conv1": rng.normal(size=(4, 8)).astype(np.float32),
            "conv2": rng.normal(size=(4, 5)).astype(np.float32),
        }
        write_feature_set(tmp_path / "set", manifest, arrays)
        fs = read_feature_set(tmp_path / "set")
        assert fs.layer_names == ["conv1", "conv2"]
        for name in arrays:
            got = fs.layer(name).astype(np.float32)
            assert got.tobytes() == arrays[name].tobytes()

    def test_write_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(2)
        manifest = _manifest()
        arrays = {
            "conv1": rng.normal(size=(4, 8)).astype(np.float32),
            "conv2": rng.normal(size=(4, 5)).astype(np.float32),
        }
        write_feature_set(tmp_path / "a", manifest, arrays)
        write_feature_set(tmp_path / "b", manifest, arrays)
        for rel in ("manifest.json", "layers/conv1.bin", "layers/conv2.bin"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_truncated_data_file_rejected(self, tmp_path):
        manifest = _manifest()
        arrays = {"conv1": np.ones((4, 8)), "conv2": np.ones((4, 5))}
        write_feature_set(tmp_path / "set", manifest, arrays)
        path = tmp_path / "set" / "layers" / "conv1.bin"
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="expected .* bytes"):
            read_feature_set(tmp_path / "set")

    def test_bad_magic_rejected(self, tmp_path):
        manifest = _manifest(layers=[LayerInfo("conv1", 8)])
        write_feature_set(tmp_path / "set", manifest, {"conv1": np.ones((4, 8))})
        path = tmp_path / "set" / "layers" / "conv1.bin"
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        fs = read_feature_set(tmp_path / "set")  # sizes still agree
        with pytest.raises(FormatError, match="magic"):
            fs.layer("conv1")

    def test_duplicate_layer_names_rejected(self, tmp_path):
        manifest = _manifest(layers=[LayerInfo("conv1", 8), LayerInfo("conv1", 5)])
        with pytest.raises(FormatError, match="duplicate"):
            write_feature_set(tmp_path / "set", manifest, {"conv1": np.ones((4, 8))})

    def test_manifest_data_disagreement_rejected(self, tmp_path):
        manifest = _manifest(layers=[LayerInfo("conv1", 8)])
        write_feature_set(tmp_path / "set", manifest, {"conv1": np.ones((4, 8))})
        doc = json.loads((tmp_path / "set" / "manifest.json").read_text())
        doc["layers"][0]["raw_dim"] = 9
        (tmp_path / "set" / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            read_feature_set(tmp_path / "set")

    def test_raw_layers_averaged_on_read(self, tmp_path):
        manifest = _manifest(
            num_videos=2,
            layers=[LayerInfo("conv1", 3, averaged=False, frame_counts=(2, 3))],
        )
        frames = np.arange(15, dtype=np.float32).reshape(5, 3)
        write_feature_set(tmp_path / "set", manifest, {"conv1": frames})
        fs = read_feature_set(tmp_path / "set")
        got = fs.layer("conv1")
        np.testing.assert_allclose(got[0], frames[:2].mean(axis=0))
        np.testing.assert_allclose(got[1], frames[2:].mean(axis=0))

    def test_nonfinite_layer_rejected(self, tmp_path):
        manifest = _manifest(layers=[LayerInfo("conv1", 8)])
        bad = np.ones((4, 8))
        bad[0, 0] = np.inf
        with pytest.raises(FormatError, match="non-finite"):
            write_feature_set(tmp_path / "set", manifest, {"conv1": bad})


class TestResponseIO:
    def _write(self, tmp_path):
        rng = np.random.default_rng(3)
        manifest = ResponseManifest(
            video_ids=[f"vid{i}" for i in range(6)],
            regions=[("V1", 4), ("LOC", 3)],
            subjects=["01", "02"],
        )
        data = {
            s: {"V1": rng.normal(size=(6, 4)), "LOC": rng.normal(size=(6, 3))}
            for s in manifest.subjects
        }
        write_response_set(tmp_path / "resp", manifest, data)
        return manifest, data

    def test_round_trip(self, tmp_path):
        manifest, data = self._write(tmp_path)
        rs = read_response_set(tmp_path / "resp", "02")
        assert rs.subject == "02"
        assert rs.regions == [("V1", 4), ("LOC", 3)]
        np.testing.assert_allclose(
            rs.matrices["V1"], data["02"]["V1"].astype(np.float32), rtol=1e-6
        )

    def test_unknown_subject_rejected(self, tmp_path):
        self._write(tmp_path)
        with pytest.raises(FormatError, match="subject"):
            read_response_set(tmp_path / "resp", "99")

    def test_duplicate_region_rejected(self):
        with pytest.raises(FormatError, match="duplicate"):
            ResponseManifest(
                video_ids=["a", "b"], regions=[("V1", 2), ("V1", 3)], subjects=["01"]
            ).validate()

    def test_truncated_region_file_rejected(self, tmp_path):
        self._write(tmp_path)
        path = tmp_path / "resp" / "subject_01" / "V1.bin"
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(FormatError, match="length"):
            read_response_set(tmp_path / "resp", "01")
