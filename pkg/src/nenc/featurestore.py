"""On-disk feature/response formats, ingestion, and sparse random projection.

A feature set is a directory holding one little-endian float32 matrix file
per layer plus a JSON manifest that pins the stimulus ordering::

    <set>/manifest.json
    <set>/layers/<layer_name>.bin

Responses live in a sibling layout, one subdirectory per subject::

    <resp>/regions.json
    <resp>/subject_<id>/<region>.bin

Every matrix file starts with a 16-byte header (magic ``NENC``, format
version, rows, cols; all integers little-endian) followed by row-major
float32 data. Sets are immutable after write; readers validate the manifest
invariants and byte lengths before touching data.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import DimensionError, FormatError

MAGIC = b"NENC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
DEFAULT_MAX_PROJECTED_DIM = 4096

_NAME_RE = re.compile(r"^[A-Za-z0-9._+-]+$")


def _safe_name(name: str, what: str) -> str:
    """Layer/region names double as file names; keep them path-safe."""
    if not name or not _NAME_RE.match(name):
        raise FormatError(f"{what} name {name!r} is empty or not filesystem-safe")
    return name


# ---------------------------------------------------------------------------
# Matrix files


def write_matrix(path, array) -> None:
    """Write a 2-d float32 matrix with the standard 16-byte header."""
    a = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    if a.ndim != 2:
        raise DimensionError(f"matrix files are 2-d, got shape {a.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, a.shape[0], a.shape[1]))
        f.write(a.tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a matrix file, validating magic, version, and byte length."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: data length disagreement (expected {expected} bytes "
            f"for {rows}x{cols}, found {len(raw)})"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# Temporal averaging


def temporal_average(raw) -> np.ndarray:
    """Mean over the frame axis of a (frames x dim) tensor, in float64."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise DimensionError("temporal_average expects a nonempty (frames x dim) tensor")
    if not np.isfinite(raw).all():
        raise FormatError("temporal_average input contains non-finite values")
    return raw.mean(axis=0)


def average_by_video(frames, frame_counts) -> np.ndarray:
    """Collapse stacked per-frame features into one averaged row per video."""
    frames = np.asarray(frames, dtype=np.float64)
    counts = [int(c) for c in frame_counts]
    if any(c < 1 for c in counts):
        raise DimensionError("every video needs at least one frame")
    if frames.shape[0] != sum(counts):
        raise DimensionError(
            f"stacked frames have {frames.shape[0]} rows, frame_counts sum to {sum(counts)}"
        )
    out = np.empty((len(counts), frames.shape[1]))
    start = 0
    for i, c in enumerate(counts):
        out[i] = temporal_average(frames[start : start + c])
        start += c
    return out


# ---------------------------------------------------------------------------
# Sparse random projection


@dataclass(frozen=True)
class ProjectionSpec:
    """Seeded very-sparse random projection (entries 0 or +-sqrt(s))."""

    seed: int
    in_dim: int
    out_dim: int
    s: float

    def __post_init__(self):
        if self.in_dim < 1 or not (1 <= self.out_dim <= self.in_dim):
            raise DimensionError(
                f"invalid projection dims: in_dim={self.in_dim}, out_dim={self.out_dim}"
            )
        if self.s < 1.0:
            raise DimensionError("density parameter s must be >= 1")


def make_projection(seed: int, in_dim: int, out_dim: int, s: float | None = None) -> ProjectionSpec:
    """Define a projection; the default density parameter is sqrt(in_dim)."""
    if s is None:
        s = math.sqrt(in_dim)
    return ProjectionSpec(seed=int(seed), in_dim=int(in_dim), out_dim=int(out_dim), s=float(s))


def projection_matrix(spec: ProjectionSpec) -> np.ndarray:
    """Materialize the (in_dim x out_dim) matrix; bit-identical per spec.

    Entries are +sqrt(s) with probability 1/(2s), -sqrt(s) with the same
    probability, and 0 otherwise, scaled by 1/sqrt(out_dim).
    """
    rng = np.random.default_rng(spec.seed)
    u = rng.random((spec.in_dim, spec.out_dim))
    p = 1.0 / (2.0 * spec.s)
    magnitude = math.sqrt(spec.s) / math.sqrt(spec.out_dim)
    r = np.zeros((spec.in_dim, spec.out_dim))
    r[u < p] = magnitude
    r[u > 1.0 - p] = -magnitude
    return r


def apply_projection(spec: ProjectionSpec, features, layer: str = "") -> np.ndarray:
    """Project (videos x in_dim) features down to out_dim columns."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != spec.in_dim:
        where = f" for layer {layer!r}" if layer else ""
        raise DimensionError(
            f"projection{where} expects dim {spec.in_dim}, got shape {features.shape}"
        )
    return features @ projection_matrix(spec)


def projection_seed(base_seed: int, layer: str) -> int:
    """Stable per-layer projection seed, independent of process or ordering."""
    import zlib

    return (int(base_seed) * 1000003 + zlib.crc32(layer.encode("utf-8"))) % (2**63)


# ---------------------------------------------------------------------------
# Feature sets


@dataclass(frozen=True)
class LayerInfo:
    name: str
    raw_dim: int
    averaged: bool = True
    frame_counts: tuple[int, ...] | None = None


@dataclass
class FeatureManifest:
    """Sidecar metadata pinning layer identities and stimulus ordering."""

    model_name: str
    video_ids: list[str]
    layers: list[LayerInfo]
    dtype: str = "float32"
    notes: str = ""

    @property
    def num_videos(self) -> int:
        return len(self.video_ids)

    def layer(self, name: str) -> LayerInfo:
        for info in self.layers:
            if info.name == name:
                return info
        raise FormatError(f"unknown layer {name!r} in set for {self.model_name!r}")

    def validate(self) -> None:
        if self.dtype != "float32":
            raise FormatError(f"unsupported dtype tag {self.dtype!r}")
        if self.num_videos < 1:
            raise FormatError("manifest lists no videos")
        if len(set(self.video_ids)) != len(self.video_ids):
            raise FormatError("duplicate video ids in manifest")
        names = [info.name for info in self.layers]
        if not names:
            raise FormatError("manifest lists no layers")
        if len(set(names)) != len(names):
            raise FormatError("duplicate layer names in manifest")
        for info in self.layers:
            _safe_name(info.name, "layer")
            if info.raw_dim < 1:
                raise FormatError(f"layer {info.name!r} has non-positive raw_dim")
            if not info.averaged:
                if info.frame_counts is None or len(info.frame_counts) != self.num_videos:
                    raise FormatError(
                        f"raw layer {info.name!r} needs one frame count per video"
                    )
                if any(c < 1 for c in info.frame_counts):
                    raise FormatError(f"layer {info.name!r} has a zero frame count")

    def to_json(self) -> dict:
        return {
            "format": "nenc-featureset",
            "version": FORMAT_VERSION,
            "model_name": self.model_name,
            "video_ids": list(self.video_ids),
            "dtype": self.dtype,
            "notes": self.notes,
            "layers": [
                {
                    "name": info.name,
                    "raw_dim": info.raw_dim,
                    "averaged": info.averaged,
                    "frame_counts": list(info.frame_counts) if info.frame_counts else None,
                }
                for info in self.layers
            ],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FeatureManifest":
        try:
            if doc.get("format") != "nenc-featureset":
                raise FormatError(f"not a feature-set manifest: {doc.get('format')!r}")
            if doc.get("version") != FORMAT_VERSION:
                raise FormatError(f"unsupported manifest version {doc.get('version')!r}")
            layers = [
                LayerInfo(
                    name=entry["name"],
                    raw_dim=int(entry["raw_dim"]),
                    averaged=bool(entry.get("averaged", True)),
                    frame_counts=tuple(entry["frame_counts"])
                    if entry.get("frame_counts")
                    else None,
                )
                for entry in doc["layers"]
            ]
            return cls(
                model_name=doc["model_name"],
                video_ids=list(doc["video_ids"]),
                layers=layers,
                dtype=doc.get("dtype", "float32"),
                notes=doc.get("notes", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc


class FeatureSet:
    """Read-only view of a feature-set directory.

    Raw (per-frame) layers are averaged over the temporal dimension on load,
    so :meth:`layer` always yields one row per video.
    """

    def __init__(self, path, manifest: FeatureManifest):
        self.path = Path(path)
        self.manifest = manifest

    @property
    def layer_names(self) -> list[str]:
        return [info.name for info in self.manifest.layers]

    def layer_path(self, name: str) -> Path:
        return self.path / "layers" / f"{name}.bin"

    def layer(self, name: str) -> np.ndarray:
        info = self.manifest.layer(name)
        matrix = read_matrix(self.layer_path(name)).astype(np.float64)
        if info.averaged:
            expected_rows = self.manifest.num_videos
        else:
            expected_rows = sum(info.frame_counts)
        if matrix.shape != (expected_rows, info.raw_dim):
            raise FormatError(
                f"layer {name!r}: manifest says {expected_rows}x{info.raw_dim}, "
                f"file holds {matrix.shape[0]}x{matrix.shape[1]}"
            )
        if not np.isfinite(matrix).all():
            raise FormatError(f"layer {name!r} contains non-finite values")
        if not info.averaged:
            matrix = average_by_video(matrix, info.frame_counts)
        return matrix

    def layers(self) -> dict[str, np.ndarray]:
        return {name: self.layer(name) for name in self.layer_names}

    def validate_files(self) -> None:
        """Check every data file's header and byte length against the manifest."""
        for info in self.manifest.layers:
            path = self.layer_path(info.name)
            if not path.exists():
                raise FormatError(f"missing data file for layer {info.name!r}: {path}")
            rows = (
                self.manifest.num_videos
                if info.averaged
                else sum(info.frame_counts)
            )
            expected = _HEADER.size + rows * info.raw_dim * 4
            actual = path.stat().st_size
            if actual != expected:
                raise FormatError(
                    f"layer {info.name!r}: expected {expected} bytes, found {actual}"
                )


def write_feature_set(path, manifest: FeatureManifest, arrays: Mapping[str, np.ndarray]) -> FeatureSet:
    """Write a feature-set directory; the writer owns it until this returns."""
    manifest.validate()
    missing = set(info.name for info in manifest.layers) - set(arrays)
    if missing:
        raise FormatError(f"no data provided for layers: {sorted(missing)}")
    path = Path(path)
    (path / "layers").mkdir(parents=True, exist_ok=True)
    for info in manifest.layers:
        a = np.asarray(arrays[info.name])
        rows = manifest.num_videos if info.averaged else sum(info.frame_counts)
        if a.shape != (rows, info.raw_dim):
            raise DimensionError(
                f"layer {info.name!r}: expected shape ({rows}, {info.raw_dim}), got {a.shape}"
            )
        if not np.isfinite(a).all():
            raise FormatError(f"layer {info.name!r} contains non-finite values")
        write_matrix(path / "layers" / f"{info.name}.bin", a)
    (path / "manifest.json").write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n"
    )
    return FeatureSet(path, manifest)


def read_feature_set(path) -> FeatureSet:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc}") from exc
    manifest = FeatureManifest.from_json(doc)
    manifest.validate()
    fs = FeatureSet(path, manifest)
    fs.validate_files()
    return fs


# ---------------------------------------------------------------------------
# Response sets


@dataclass
class ResponseManifest:
    """Region table and stimulus ordering shared by all subjects of a set."""

    video_ids: list[str]
    regions: list[tuple[str, int]]
    subjects: list[str]

    @property
    def num_videos(self) -> int:
        return len(self.video_ids)

    def validate(self) -> None:
        if self.num_videos < 1:
            raise FormatError("response manifest lists no videos")
        if len(set(self.video_ids)) != len(self.video_ids):
            raise FormatError("duplicate video ids in response manifest")
        names = [name for name, _ in self.regions]
        if not names:
            raise FormatError("response manifest lists no regions")
        if len(set(names)) != len(names):
            raise FormatError("duplicate region names in response manifest")
        for name, count in self.regions:
            _safe_name(name, "region")
            if count < 1:
                raise FormatError(f"region {name!r} has non-positive voxel count")
        if not self.subjects:
            raise FormatError("response manifest lists no subjects")
        if len(set(self.subjects)) != len(self.subjects):
            raise FormatError("duplicate subject ids in response manifest")

    def to_json(self) -> dict:
        return {
            "format": "nenc-responses",
            "version": FORMAT_VERSION,
            "video_ids": list(self.video_ids),
            "regions": [[name, count] for name, count in self.regions],
            "subjects": list(self.subjects),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "ResponseManifest":
        try:
            if doc.get("format") != "nenc-responses":
                raise FormatError(f"not a response manifest: {doc.get('format')!r}")
            if doc.get("version") != FORMAT_VERSION:
                raise FormatError(f"unsupported manifest version {doc.get('version')!r}")
            return cls(
                video_ids=list(doc["video_ids"]),
                regions=[(name, int(count)) for name, count in doc["regions"]],
                subjects=[str(s) for s in doc["subjects"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed response manifest: {exc}") from exc


@dataclass
class ResponseSet:
    """One subject's per-region voxel activations (videos x voxels each)."""

    subject: str
    regions: list[tuple[str, int]]
    matrices: dict[str, np.ndarray] = field(repr=False)

    def validate(self) -> None:
        names = [name for name, _ in self.regions]
        if len(set(names)) != len(names):
            raise FormatError("duplicate region names")
        rows = {m.shape[0] for m in self.matrices.values()}
        if len(rows) > 1:
            raise FormatError(f"regions disagree on num_videos: {sorted(rows)}")
        for name, count in self.regions:
            m = self.matrices.get(name)
            if m is None:
                raise FormatError(f"missing matrix for region {name!r}")
            if m.shape[1] != count:
                raise FormatError(
                    f"region {name!r}: expected {count} voxels, found {m.shape[1]}"
                )
            if not np.isfinite(m).all():
                raise FormatError(f"region {name!r} contains non-finite values")

    @property
    def num_videos(self) -> int:
        return next(iter(self.matrices.values())).shape[0]


def write_response_set(path, manifest: ResponseManifest, data: Mapping[str, Mapping[str, np.ndarray]]) -> None:
    """Write responses for every subject in the manifest under ``path``."""
    manifest.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for subject in manifest.subjects:
        if subject not in data:
            raise FormatError(f"no data provided for subject {subject!r}")
        subject_dir = path / f"subject_{subject}"
        for region, count in manifest.regions:
            m = np.asarray(data[subject][region])
            if m.shape != (manifest.num_videos, count):
                raise DimensionError(
                    f"subject {subject!r} region {region!r}: expected "
                    f"({manifest.num_videos}, {count}), got {m.shape}"
                )
            write_matrix(subject_dir / f"{region}.bin", m)
    (path / "regions.json").write_text(
        json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n"
    )


def read_response_manifest(path) -> ResponseManifest:
    path = Path(path)
    sidecar = path / "regions.json"
    if not sidecar.exists():
        raise FormatError(f"no regions.json under {path}")
    try:
        doc = json.loads(sidecar.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{sidecar}: invalid JSON: {exc}") from exc
    manifest = ResponseManifest.from_json(doc)
    manifest.validate()
    return manifest


def read_response_set(path, subject: str) -> ResponseSet:
    """Load one subject's responses, validated against the sidecar manifest."""
    manifest = read_response_manifest(path)
    if subject not in manifest.subjects:
        raise FormatError(f"unknown subject {subject!r}; manifest lists {manifest.subjects}")
    subject_dir = Path(path) / f"subject_{subject}"
    matrices = {}
    for region, count in manifest.regions:
        matrix = read_matrix(subject_dir / f"{region}.bin").astype(np.float64)
        if matrix.shape != (manifest.num_videos, count):
            raise FormatError(
                f"subject {subject!r} region {region!r}: manifest says "
                f"{manifest.num_videos}x{count}, file holds {matrix.shape[0]}x{matrix.shape[1]}"
            )
        matrices[region] = matrix
    rs = ResponseSet(subject=subject, regions=list(manifest.regions), matrices=matrices)
    rs.validate()
    return rs
