"""Provenance tags enforcing fold isolation and two-stage training order.

Voxel matrices travelling through the harness are wrapped in :class:`Tagged`
so that downstream stages can assert where their inputs came from: the
connectivity stage must train on measured activations and infer on stage-1
predictions, and no fit may ever see a row belonging to its fold's test set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProvenanceError

GROUNDTRUTH = "groundtruth"
PREDICTION = "prediction"


@dataclass(frozen=True)
class Tagged:
    """A matrix plus the facts needed to audit its use.

    Attributes:
        data: the wrapped array (rows are videos).
        kind: ``GROUNDTRUTH`` for measured activations, ``PREDICTION`` for
            model outputs.
        video_indices: stimulus indices of the rows, in row order.
    """

    data: np.ndarray
    kind: str
    video_indices: tuple[int, ...]

    def __post_init__(self):
        if self.kind not in (GROUNDTRUTH, PREDICTION):
            raise ProvenanceError(f"unknown provenance kind: {self.kind!r}")
        if len(self.video_indices) != self.data.shape[0]:
            raise ProvenanceError(
                f"tag covers {len(self.video_indices)} videos but data has "
                f"{self.data.shape[0]} rows"
            )


def tag(data, kind, video_indices) -> Tagged:
    return Tagged(np.asarray(data), kind, tuple(int(i) for i in video_indices))


def require_kind(x, kind: str) -> np.ndarray:
    """Unwrap ``x`` asserting its provenance kind; plain arrays pass through.

    Plain arrays are accepted so the numerical modules stay usable on their
    own; the harness always passes tagged data.
    """
    if isinstance(x, Tagged):
        if x.kind != kind:
            raise ProvenanceError(f"expected {kind} data, got {x.kind}")
        return x.data
    return np.asarray(x)


def require_disjoint(train_indices, test_indices, context: str = "fit"):
    overlap = set(train_indices) & set(test_indices)
    if overlap:
        raise ProvenanceError(
            f"{context}: {len(overlap)} video(s) appear in both train and "
            f"test sets (e.g. index {min(overlap)})"
        )
