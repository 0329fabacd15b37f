"""Report emission: score tables, gain tables, grouped bar charts, heatmaps.

All writers are deterministic: rows are emitted in sorted key order, floats
use round-trip repr in tables and fixed decimals in SVG coordinates, and no
timestamps are embedded, so identical inputs yield identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .connectivity import AttributionMatrix
from .errors import DimensionError, FormatError
from .harness import ComparisonResult, RunResult
from .metrics import RegionScore, aggregate

ALL_FORMATS = ("csv", "json", "svg")
_PALETTE = ("#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c")

SCORE_COLUMNS = (
    "model",
    "stage",
    "subject",
    "region",
    "fold",
    "r",
    "voxels_scored",
    "voxels_excluded",
)


def _score_rows(result: RunResult):
    rows = []
    for model in sorted(result.models):
        mr = result.models[model]
        stages = [("encoder", mr.scores)]
        if mr.connectivity is not None:
            for variant in sorted(mr.connectivity.scores):
                stages.append((f"connectivity:{variant}", mr.connectivity.scores[variant]))
            for kind in sorted(mr.connectivity.baseline_scores):
                stages.append((f"baseline:{kind}", mr.connectivity.baseline_scores[kind]))
        for stage, scores in stages:
            for s in sorted(scores, key=lambda s: (s.subject, s.region, s.fold)):
                rows.append(
                    {
                        "model": model,
                        "stage": stage,
                        "subject": s.subject,
                        "region": s.region,
                        "fold": s.fold,
                        "r": s.r,
                        "voxels_scored": s.voxels_scored,
                        "voxels_excluded": s.voxels_excluded,
                    }
                )
    return rows


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# SVG primitives


def _svg_document(width, height, body) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        '<rect width="100%" height="100%" fill="white"/>\n'
        + body
        + "</svg>\n"
    )


def _text(x, y, s, size=11, anchor="middle", angle=None) -> str:
    transform = f' transform="rotate({angle} {x:.2f} {y:.2f})"' if angle else ""
    return (
        f'<text x="{x:.2f}" y="{y:.2f}" font-family="Helvetica,Arial,sans-serif" '
        f'font-size="{size}" text-anchor="{anchor}"{transform}>{s}</text>\n'
    )


def _nice_ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = float(min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw))
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12:
        ticks.append(round(float(t), 10))
        t += step
    return ticks


def grouped_bar_svg(
    title: str,
    axis_labels,
    groups,
    stars=None,
    y_label: str = "Regression score",
) -> str:
    """Grouped bars with error bars and optional per-axis-point star labels.

    ``groups`` is a list of (name, means, stds) triples aligned with
    ``axis_labels``; ``stars`` is one significance label per axis point,
    drawn under the axis.
    """
    axis_labels = list(axis_labels)
    n_axis, n_groups = len(axis_labels), len(groups)
    if n_axis == 0 or n_groups == 0:
        raise DimensionError("nothing to plot")
    for name, means, stds in groups:
        if len(means) != n_axis or len(stds) != n_axis:
            raise DimensionError(f"group {name!r} length disagrees with axis")
    left, right, top, bottom = 64, 16, 44, 64
    bar_w, gap, group_gap = 18, 4, 18
    slot = n_groups * bar_w + (n_groups - 1) * gap + group_gap
    width = left + right + n_axis * slot
    height = 360
    plot_h = height - top - bottom

    lo = min(0.0, min(m - s for _, ms, ss in groups for m, s in zip(ms, ss)))
    hi = max(m + s for _, ms, ss in groups for m, s in zip(ms, ss))
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo

    def ypix(v):
        return top + plot_h * (1.0 - (v - lo) / span)

    body = _text(width / 2, 20, title, size=13)
    body += _text(16, top + plot_h / 2, y_label, size=11, angle=-90)
    for tick in _nice_ticks(lo, hi):
        y = ypix(tick)
        body += f'<line x1="{left}" y1="{y:.2f}" x2="{width - right}" y2="{y:.2f}" stroke="#dddddd" stroke-width="1"/>\n'
        body += _text(left - 6, y + 3, f"{tick:g}", size=10, anchor="end")
    zero_y = ypix(max(lo, 0.0))
    body += f'<line x1="{left}" y1="{zero_y:.2f}" x2="{width - right}" y2="{zero_y:.2f}" stroke="#333333" stroke-width="1"/>\n'

    for gi, (name, means, stds) in enumerate(groups):
        color = _PALETTE[gi % len(_PALETTE)]
        legend_x = left + 8 + gi * 150
        body += f'<rect x="{legend_x}" y="30" width="10" height="10" fill="{color}"/>\n'
        body += _text(legend_x + 14, 39, name, size=10, anchor="start")
        for ai in range(n_axis):
            x = left + group_gap / 2 + ai * slot + gi * (bar_w + gap)
            v, s = means[ai], stds[ai]
            y0, y1 = ypix(max(v, 0.0)), ypix(min(v, 0.0))
            body += (
                f'<rect x="{x:.2f}" y="{y0:.2f}" width="{bar_w}" '
                f'height="{max(y1 - y0, 0.5):.2f}" fill="{color}"/>\n'
            )
            cx = x + bar_w / 2
            e0, e1 = ypix(v + s), ypix(v - s)
            body += (
                f'<line x1="{cx:.2f}" y1="{e0:.2f}" x2="{cx:.2f}" y2="{e1:.2f}" '
                'stroke="black" stroke-width="1"/>\n'
            )
            for ey in (e0, e1):
                body += (
                    f'<line x1="{cx - 3:.2f}" y1="{ey:.2f}" x2="{cx + 3:.2f}" '
                    f'y2="{ey:.2f}" stroke="black" stroke-width="1"/>\n'
                )
    for ai, label in enumerate(axis_labels):
        cx = left + ai * slot + slot / 2
        body += _text(cx, height - bottom + 16, label, size=10)
        if stars is not None:
            body += _text(cx, height - bottom + 32, stars[ai], size=10)
    body += _text(width / 2, height - 12, "Regions", size=11)
    return _svg_document(width, height, body)


def heatmap_svg(title: str, row_labels, col_labels, values) -> str:
    """Directional heatmap (rows: source, columns: target), white-to-blue."""
    values = np.asarray(values, dtype=np.float64)
    n_rows, n_cols = values.shape
    if n_rows != len(list(row_labels)) or n_cols != len(list(col_labels)):
        raise DimensionError("heatmap labels disagree with value shape")
    cell = 34
    left, top = 84, 72
    width = left + n_cols * cell + 24
    height = top + n_rows * cell + 24
    vmax = float(values.max()) if values.size and values.max() > 0 else 1.0
    body = _text(width / 2, 20, title, size=13)
    for j, label in enumerate(col_labels):
        body += _text(left + j * cell + cell / 2, top - 8, label, size=9, angle=-45)
    for i, label in enumerate(row_labels):
        body += _text(left - 8, top + i * cell + cell / 2 + 3, label, size=9, anchor="end")
    for i in range(n_rows):
        for j in range(n_cols):
            frac = max(0.0, min(1.0, values[i, j] / vmax))
            # white (255,255,255) -> dark blue (8,81,156)
            rgb = tuple(int(round(255 + (c - 255) * frac)) for c in (8, 81, 156))
            body += (
                f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" '
                f'height="{cell}" fill="rgb({rgb[0]},{rgb[1]},{rgb[2]})" '
                'stroke="#cccccc" stroke-width="0.5"/>\n'
            )
            luminance = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
            text_color = "#000000" if luminance > 140 else "#ffffff"
            body += (
                f'<text x="{left + j * cell + cell / 2}" y="{top + i * cell + cell / 2 + 3}" '
                f'font-family="Helvetica,Arial,sans-serif" font-size="8" text-anchor="middle" '
                f'fill="{text_color}">{values[i, j]:.3f}</text>\n'
            )
    return _svg_document(width, height, body)


# ---------------------------------------------------------------------------
# Bundle emission


def _kept(scores, result: RunResult):
    if not result.excluded_subjects:
        return scores
    return [s for s in scores if s.subject not in result.excluded_subjects]


def _summary_rows(result: RunResult):
    rows = []
    for model in sorted(result.models):
        mr = result.models[model]
        stages = [("encoder", mr.scores)]
        if mr.connectivity is not None:
            for variant in sorted(mr.connectivity.scores):
                stages.append((f"connectivity:{variant}", mr.connectivity.scores[variant]))
            for kind in sorted(mr.connectivity.baseline_scores):
                stages.append((f"baseline:{kind}", mr.connectivity.baseline_scores[kind]))
        for stage, scores in stages:
            for region, summary in aggregate(_kept(scores, result)).items():
                rows.append(
                    [
                        model,
                        stage,
                        region,
                        summary.mean,
                        summary.std,
                        summary.n_subjects,
                        summary.n_folds,
                    ]
                )
    return rows


def _bundle_manifest(result: RunResult) -> dict:
    # The echo records result-determining configuration; execution-side
    # fields (worker count, output location) are excluded so bundles from
    # identical runs are byte-identical regardless of parallelism.
    echo = {
        k: v
        for k, v in result.config_echo.items()
        if k not in ("workers", "out_dir")
    }
    doc = {
        "format": "nenc-bundle",
        "version": 1,
        "mode": result.mode,
        "seed": result.seed,
        "folds": result.plan.k,
        "num_videos": result.plan.num_videos,
        "regions": list(result.regions),
        "subjects": list(result.subjects),
        "excluded_subjects": list(result.excluded_subjects),
        "models": {},
        "config": _jsonable(echo),
        "welch_unit": "per-model mean region score",
    }
    for model in sorted(result.models):
        mr = result.models[model]
        entry = {"betas": list(mr.betas)}
        if mr.tune_scores is not None:
            entry["tune_scores"] = {
                f"{b1:g},{b2:g}": v for (b1, b2), v in sorted(mr.tune_scores.items())
            }
        if mr.connectivity is not None:
            entry["connectivity_lambda"] = dict(
                sorted(mr.connectivity.lambda_by_variant.items())
            )
        doc["models"][model] = entry
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def attribution_csv(matrix: AttributionMatrix) -> str:
    rows = []
    for i, source in enumerate(matrix.regions):
        rows.append([source] + [float(v) for v in matrix.values[i]])
    return _csv_text(["source\\target", *matrix.regions], rows)


def emit_report(result: RunResult, out_dir, formats=ALL_FORMATS) -> list[Path]:
    """Write the result bundle; returns the created file paths."""
    unknown = set(formats) - set(ALL_FORMATS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    if not result.models or all(not m.scores for m in result.models.values()):
        raise FormatError("refusing to emit an empty bundle")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def write(path: Path, text: str):
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        written.append(path)

    score_rows = _score_rows(result)
    write(out / "manifest.json", _json_text(_bundle_manifest(result)))
    if "csv" in formats:
        write(
            out / "scores.csv",
            _csv_text(SCORE_COLUMNS, [[row[c] for c in SCORE_COLUMNS] for row in score_rows]),
        )
        write(
            out / "summary.csv",
            _csv_text(
                ("model", "stage", "region", "mean", "std", "n_subjects", "n_folds"),
                _summary_rows(result),
            ),
        )
    if "json" in formats:
        write(out / "scores.json", _json_text({"columns": list(SCORE_COLUMNS), "rows": score_rows}))

    for model in sorted(result.models):
        mr = result.models[model]
        if "json" in formats:
            for key in sorted(mr.fit_reports):
                write(
                    out / "fit_reports" / f"{key}.json",
                    _json_text(mr.fit_reports[key].to_json()),
                )
        if mr.connectivity is not None:
            cr = mr.connectivity
            gain_rows = []
            for variant in sorted(cr.gains):
                for region in sorted(cr.gains[variant]):
                    g = cr.gains[variant][region]
                    gain_rows.append(
                        [model, variant, region, g.mean, g.std]
                        + [d for d in g.deltas]
                    )
            if "csv" in formats and gain_rows:
                n_folds = len(gain_rows[0]) - 5
                write(
                    out / "connectivity" / "gains.csv",
                    _csv_text(
                        ("model", "variant", "region", "mean_delta", "std_delta")
                        + tuple(f"fold{i}" for i in range(n_folds)),
                        gain_rows,
                    ),
                )
            if "csv" in formats and cr.attribution is not None:
                write(
                    out / "connectivity" / f"attribution__{model}.csv",
                    attribution_csv(cr.attribution),
                )
            if "svg" in formats and cr.attribution is not None:
                write(
                    out / "plots" / f"attribution__{model}.svg",
                    heatmap_svg(
                        f"Region contributions ({model})",
                        cr.attribution.regions,
                        cr.attribution.regions,
                        cr.attribution.values,
                    ),
                )
        if "svg" in formats:
            stages = [("encoder", mr.scores)]
            if mr.connectivity is not None:
                for variant in sorted(mr.connectivity.scores):
                    stages.append((variant, mr.connectivity.scores[variant]))
            summaries = [(stage, aggregate(_kept(scores, result))) for stage, scores in stages]
            axis = [r for r in result.regions if r in summaries[0][1]]
            groups = [
                (
                    stage,
                    [table[r].mean for r in axis],
                    [table[r].std for r in axis],
                )
                for stage, table in summaries
            ]
            write(
                out / "plots" / f"scores__{model}.svg",
                grouped_bar_svg(f"Region scores ({model})", axis, groups),
            )
    return sorted(written)


def read_bundle(out_dir) -> dict:
    """Read back a bundle's manifest and scores (JSON round-trip)."""
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    scores_path = out / "scores.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json under {out}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "nenc-bundle":
        raise FormatError(f"{manifest_path} is not a result bundle manifest")
    scores = []
    if scores_path.exists():
        doc = json.loads(scores_path.read_text())
        for row in doc["rows"]:
            scores.append(
                (
                    row["model"],
                    row["stage"],
                    RegionScore(
                        region=row["region"],
                        subject=row["subject"],
                        fold=int(row["fold"]),
                        r=float(row["r"]),
                        voxels_scored=int(row["voxels_scored"]),
                        voxels_excluded=int(row["voxels_excluded"]),
                    ),
                )
            )
    return {"manifest": manifest, "scores": scores}


# ---------------------------------------------------------------------------
# Comparison reports


def write_comparison(
    comparison: ComparisonResult, out_dir, name: str = "comparison", formats=ALL_FORMATS
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    groups = sorted({g for _, g in comparison.cells})
    rows = []
    for point in comparison.axis:
        for g in groups:
            cell = comparison.cells[(point, g)]
            rows.append(
                [
                    point,
                    g,
                    cell.mean,
                    cell.std,
                    cell.best[0],
                    cell.best[1],
                    cell.worst[0],
                    cell.worst[1],
                ]
            )
    if "csv" in formats:
        path = out / f"{name}.csv"
        path.write_text(
            _csv_text(
                ("axis", "group", "mean", "std", "max_model", "max_score", "min_model", "min_score"),
                rows,
            )
        )
        written.append(path)
        sig_rows = []
        for point in comparison.axis:
            for s in comparison.significance[point]:
                sig_rows.append([point, s.group_a, s.group_b, s.t, s.df, s.p, s.stars])
        sig_path = out / f"{name}_significance.csv"
        sig_path.write_text(
            _csv_text(("axis", "group_a", "group_b", "t", "df", "p", "stars"), sig_rows)
        )
        written.append(sig_path)
    if "json" in formats:
        doc = {
            "axis": list(comparison.axis),
            "welch_unit": "per-model mean region score",
            "cells": [
                {
                    "axis": point,
                    "group": g,
                    "mean": comparison.cells[(point, g)].mean,
                    "std": comparison.cells[(point, g)].std,
                    "max": list(comparison.cells[(point, g)].best),
                    "min": list(comparison.cells[(point, g)].worst),
                    "samples": list(comparison.cells[(point, g)].samples),
                }
                for point in comparison.axis
                for g in groups
            ],
            "significance": {
                point: [
                    {
                        "group_a": s.group_a,
                        "group_b": s.group_b,
                        "t": s.t,
                        "df": s.df,
                        "p": s.p,
                        "stars": s.stars,
                    }
                    for s in comparison.significance[point]
                ]
                for point in comparison.axis
            },
        }
        path = out / f"{name}.json"
        path.write_text(_json_text(doc))
        written.append(path)
    if "svg" in formats:
        plot_groups = []
        for g in groups:
            means = [comparison.cells[(point, g)].mean for point in comparison.axis]
            stds = [comparison.cells[(point, g)].std for point in comparison.axis]
            plot_groups.append((g, means, stds))
        stars = [
            comparison.significance[point][0].stars if comparison.significance[point] else ""
            for point in comparison.axis
        ]
        path = out / f"{name}.svg"
        path.write_text(
            grouped_bar_svg(f"Family comparison ({name})", comparison.axis, plot_groups, stars)
        )
        written.append(path)
    return sorted(written)
