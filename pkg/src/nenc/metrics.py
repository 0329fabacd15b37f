"""Scoring and statistics: Pearson scores, aggregation, Welch's t-test, CKA.

Region scores are mean per-voxel Pearson correlations; zero-variance voxels
are excluded from the mean and reported in a count field rather than
poisoning it with NaN. Aggregation averages over subjects first, then
reports mean and standard deviation across folds. Significance uses the
unequal-variance (Welch) t-test with two-sided p-values computed from a
continued-fraction evaluation of the regularized incomplete beta function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NumericalError

STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


# ---------------------------------------------------------------------------
# Pearson correlation and region scores


def pearson(x, y) -> float:
    """Sample Pearson correlation between two equal-length vectors.

    Returns NaN (the undefined marker) when either input has zero variance.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DimensionError("pearson needs at least 2 observations")
    # Constancy is the zero-variance case; test it exactly, since the mean
    # of a constant vector need not round back to the constant.
    if (x == x[0]).all() or (y == y[0]).all():
        return float("nan")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        return float("nan")
    # Clamp rounding spill so correlations always lie in [-1, 1].
    return float(np.clip(float(xc @ yc) / (sx * sy), -1.0, 1.0))


def _columnwise_pearson(pred, gt):
    """Per-voxel correlations between matching columns, NaN where undefined."""
    constant = np.all(pred == pred[0], axis=0) | np.all(gt == gt[0], axis=0)
    pc = pred - pred.mean(axis=0)
    gc = gt - gt.mean(axis=0)
    sp = np.sqrt(np.einsum("ij,ij->j", pc, pc))
    sg = np.sqrt(np.einsum("ij,ij->j", gc, gc))
    denom = sp * sg
    bad = constant | (denom == 0.0)
    num = np.einsum("ij,ij->j", pc, gc)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(bad, np.nan, num / np.where(bad, 1.0, denom))
    return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class RegionScore:
    """Mean per-voxel Pearson score for one (region, subject, fold) cell."""

    region: str
    subject: str
    fold: int
    r: float
    voxels_scored: int
    voxels_excluded: int

    def with_ids(self, region=None, subject=None, fold=None) -> "RegionScore":
        return replace(
            self,
            region=self.region if region is None else region,
            subject=self.subject if subject is None else subject,
            fold=self.fold if fold is None else fold,
        )


def region_score(pred, gt, region="", subject="", fold=0) -> RegionScore:
    """Mean per-voxel Pearson correlation between prediction and groundtruth.

    Voxels whose prediction or groundtruth has zero variance are excluded
    from the mean and counted in ``voxels_excluded``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 2 or pred.shape[0] < 2:
        raise DimensionError("expected (videos >= 2, voxels) matrices")
    r = _columnwise_pearson(pred, gt)
    valid = np.isfinite(r)
    if not valid.any():
        raise NumericalError("all voxels have zero variance; score undefined")
    return RegionScore(
        region=region,
        subject=subject,
        fold=fold,
        r=float(r[valid].mean()),
        voxels_scored=int(valid.sum()),
        voxels_excluded=int((~valid).sum()),
    )


# ---------------------------------------------------------------------------
# Aggregation across subjects and folds


@dataclass(frozen=True)
class RegionSummary:
    region: str
    mean: float
    std: float
    fold_means: tuple[float, ...]
    n_subjects: int
    n_folds: int


def aggregate(scores: Iterable[RegionScore]) -> dict[str, RegionSummary]:
    """Subject-mean per fold first, then mean and std across folds.

    The (subject x fold) grid must be complete for every region; std is the
    population standard deviation over folds, so a single fold reports 0.
    """
    scores = list(scores)
    if not scores:
        raise DimensionError("aggregate called with no scores")
    by_region: dict[str, dict[int, dict[str, float]]] = {}
    for s in scores:
        cell = by_region.setdefault(s.region, {}).setdefault(s.fold, {})
        if s.subject in cell:
            raise DimensionError(
                f"duplicate score for ({s.region}, {s.subject}, fold {s.fold})"
            )
        cell[s.subject] = s.r
    out = {}
    for region in sorted(by_region):
        folds = by_region[region]
        subjects = {frozenset(v) for v in folds.values()}
        if len(subjects) != 1:
            raise DimensionError(
                f"incomplete subject x fold grid for region {region}"
            )
        fold_means = tuple(
            float(np.mean(list(folds[f].values()))) for f in sorted(folds)
        )
        out[region] = RegionSummary(
            region=region,
            mean=float(np.mean(fold_means)),
            std=float(np.std(fold_means)),
            fold_means=fold_means,
            n_subjects=len(next(iter(subjects))),
            n_folds=len(fold_means),
        )
    return out


# ---------------------------------------------------------------------------
# Welch's t-test


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz's method)."""
    max_iter, eps, fpmin = 300, 3e-16, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NumericalError(f"incomplete beta failed to converge (a={a}, b={b}, x={x})")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not (a > 0 and b > 0):
        raise NumericalError("incomplete beta parameters must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # Continued fraction converges fast only on one side of the mean.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability of Student's t with ``df`` degrees of freedom.

    Uses the identity P(|T| > t) = I_x(df/2, 1/2) with x = df / (df + t^2).
    """
    if df <= 0:
        raise NumericalError("degrees of freedom must be positive")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(0.5 * df, 0.5, x)


def star_label(p: float) -> str:
    """Map a p-value to its significance label (strict thresholds)."""
    for threshold, label in STAR_THRESHOLDS:
        if p < threshold:
            return label
    return "ns"


@dataclass(frozen=True)
class SignificanceResult:
    group_a: str
    group_b: str
    t: float
    df: float
    p: float
    stars: str


def welch(a: Sequence[float], b: Sequence[float], group_a="A", group_b="B") -> SignificanceResult:
    """Unequal-variance two-sample t-test with two-sided p-value.

    Degrees of freedom follow the Welch-Satterthwaite approximation. At
    least one sample must have nonzero variance.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise DimensionError("welch needs at least 2 observations per sample")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericalError("welch inputs contain non-finite values")
    va = float(a.var(ddof=1)) / a.size
    vb = float(b.var(ddof=1)) / b.size
    pooled = va + vb
    if pooled == 0.0:
        raise NumericalError("degenerate samples: both have zero variance")
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(pooled)
    df = pooled * pooled / (
        va * va / (a.size - 1) + vb * vb / (b.size - 1)
    )
    p = student_t_two_sided_p(t, df)
    return SignificanceResult(group_a, group_b, float(t), float(df), float(p), star_label(p))


# ---------------------------------------------------------------------------
# Linear centered kernel alignment


def linear_cka(x, y) -> float:
    """Linear CKA between two representations with matching rows.

    Columns are centered first; the result lies in [0, 1] and is invariant
    to orthogonal transforms and isotropic scaling of either argument.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise DimensionError("linear_cka expects 2-d matrices")
    if x.shape[0] != y.shape[0]:
        raise DimensionError(f"row mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise DimensionError("linear_cka needs at least 2 rows")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    xx = np.linalg.norm(xc.T @ xc)
    yy = np.linalg.norm(yc.T @ yc)
    if xx == 0.0 or yy == 0.0:
        raise NumericalError("linear_cka undefined for a centered zero matrix")
    xy = np.linalg.norm(yc.T @ xc)
    return float(xy * xy / (xx * yy))
