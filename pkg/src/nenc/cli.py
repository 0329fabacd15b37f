"""Command-line interface.

Subcommands: ingest, project, fit, connectivity, simulate, compare, report,
validate. Exit codes: 0 ok, 1 input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import featurestore as fs
from . import harness, report
from .errors import NencError, NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def _load_run_config(args) -> harness.RunConfig:
    config = harness.load_config(args.config)
    overrides = {}
    for key in ("seed", "folds", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return replace(config, **overrides) if overrides else config


def _cmd_ingest(args) -> int:
    spec = json.loads(Path(args.spec).read_text())
    layers, arrays = [], {}
    for entry in spec["layers"]:
        array = np.load(entry["npy"])
        info = fs.LayerInfo(
            name=entry["name"],
            raw_dim=int(array.shape[1]),
            averaged=bool(entry.get("averaged", True)),
            frame_counts=tuple(entry["frame_counts"]) if entry.get("frame_counts") else None,
        )
        if not info.averaged:
            # Temporal averaging happens at ingest; the stored set is averaged.
            array = fs.average_by_video(array, info.frame_counts)
            info = fs.LayerInfo(name=info.name, raw_dim=info.raw_dim, averaged=True)
        layers.append(info)
        arrays[info.name] = array
    manifest = fs.FeatureManifest(
        model_name=spec["model_name"],
        video_ids=list(spec["video_ids"]),
        layers=layers,
        notes=spec.get("notes", ""),
    )
    fs.write_feature_set(args.out, manifest, arrays)
    print(f"wrote feature set with {len(layers)} layer(s) to {args.out}")
    return EXIT_OK


def _cmd_project(args) -> int:
    feature_set = fs.read_feature_set(args.set)
    layers, arrays = [], {}
    for info in feature_set.manifest.layers:
        matrix = feature_set.layer(info.name)
        out_dim = min(info.raw_dim, args.dim)
        if out_dim < info.raw_dim:
            spec = fs.make_projection(
                fs.projection_seed(args.seed, info.name), info.raw_dim, out_dim, args.s
            )
            matrix = fs.apply_projection(spec, matrix, layer=info.name)
        layers.append(fs.LayerInfo(name=info.name, raw_dim=matrix.shape[1]))
        arrays[info.name] = matrix
    manifest = fs.FeatureManifest(
        model_name=feature_set.manifest.model_name,
        video_ids=feature_set.manifest.video_ids,
        layers=layers,
        notes=f"projected from {args.set} (seed={args.seed}, dim={args.dim})",
    )
    fs.write_feature_set(args.out, manifest, arrays)
    print(f"projected {len(layers)} layer(s) to {args.out}")
    return EXIT_OK


def _run_and_emit(config: harness.RunConfig) -> int:
    result = harness.run(config)
    paths = report.emit_report(result, config.out_dir)
    print(f"wrote {len(paths)} file(s) to {config.out_dir}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    config = _load_run_config(args)
    if config.connectivity is not None:
        config = replace(config, connectivity=None)
    return _run_and_emit(config)


def _cmd_connectivity(args) -> int:
    config = _load_run_config(args)
    if config.connectivity is None:
        config = replace(config, connectivity=harness.ConnectivityRunConfig())
    if args.variant:
        config = replace(
            config, connectivity=replace(config.connectivity, variants=tuple(args.variant))
        )
    return _run_and_emit(config)


def _cmd_simulate(args) -> int:
    config = _load_run_config(args)
    return _run_and_emit(config)


def _cmd_compare(args) -> int:
    groups_doc = json.loads(Path(args.groups).read_text())
    spec = harness.ComparisonSpec(
        groups={k: tuple(v) for k, v in groups_doc["groups"].items()},
        axis=tuple(groups_doc["axis"]) if groups_doc.get("axis") else None,
    )
    results: dict[str, list] = {}
    for bundle_dir in args.bundle:
        bundle = report.read_bundle(bundle_dir)
        for model, stage, score in bundle["scores"]:
            if stage == args.stage:
                results.setdefault(model, []).append(score)
    comparison = harness.compare_families(spec, results)
    paths = report.write_comparison(comparison, args.out, name=args.name)
    print(f"wrote {len(paths)} file(s) to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    bundle = report.read_bundle(args.bundle)
    if not bundle["scores"]:
        raise NencError(f"bundle {args.bundle} has no scores to report")
    by_model_stage: dict[tuple[str, str], list] = {}
    for model, stage, score in bundle["scores"]:
        by_model_stage.setdefault((model, stage), []).append(score)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .metrics import aggregate

    rows = []
    for (model, stage), scores in sorted(by_model_stage.items()):
        for region, summary in aggregate(scores).items():
            rows.append([model, stage, region, summary.mean, summary.std])
    (out / "summary.csv").write_text(
        report._csv_text(("model", "stage", "region", "mean", "std"), rows)
    )
    for (model, stage), scores in sorted(by_model_stage.items()):
        table = aggregate(scores)
        axis = sorted(table)
        svg = report.grouped_bar_svg(
            f"{model} ({stage})",
            axis,
            [(stage, [table[r].mean for r in axis], [table[r].std for r in axis])],
        )
        (out / f"scores__{model}__{stage.replace(':', '-')}.svg").write_text(svg)
    print(f"wrote report to {out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.set:
        feature_set = fs.read_feature_set(args.set)
        print(
            f"ok: feature set {feature_set.manifest.model_name!r} with "
            f"{len(feature_set.layer_names)} layer(s), "
            f"{feature_set.manifest.num_videos} video(s)"
        )
    if args.responses:
        manifest = fs.read_response_manifest(args.responses)
        for subject in manifest.subjects:
            fs.read_response_set(args.responses, subject)
        print(
            f"ok: responses with {len(manifest.subjects)} subject(s), "
            f"{len(manifest.regions)} region(s), {manifest.num_videos} video(s)"
        )
    if not args.set and not args.responses:
        raise NencError("nothing to validate; pass --set and/or --responses")
    return EXIT_OK


def _add_run_args(p):
    p.add_argument("--config", required=True, help="run config (JSON or TOML)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output bundle directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nenc", description="Layer-weighted voxel encoding toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a feature set from .npy arrays")
    p.add_argument("--spec", required=True, help="ingest spec JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("project", help="write a dimensionality-reduced feature set")
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=fs.DEFAULT_MAX_PROJECTED_DIM)
    p.add_argument("--s", type=float, default=None, help="projection density parameter")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_project)

    p = sub.add_parser("fit", help="run encoders against voxel responses")
    _add_run_args(p)
    p.set_defaults(fn=_cmd_fit)

    p = sub.add_parser("connectivity", help="two-stage run with connectivity refinement")
    _add_run_args(p)
    p.add_argument(
        "--variant", action="append", choices=("intra", "inter", "full"), default=None
    )
    p.set_defaults(fn=_cmd_connectivity)

    p = sub.add_parser("simulate", help="run encoders against a target network's blocks")
    _add_run_args(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("compare", help="Welch-tested family comparison across bundles")
    p.add_argument("--bundle", action="append", required=True)
    p.add_argument("--groups", required=True, help="groups spec JSON")
    p.add_argument("--stage", default="encoder")
    p.add_argument("--out", required=True)
    p.add_argument("--name", default="comparison")
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("report", help="re-render tables and plots from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("validate", help="validate feature/response sets on disk")
    p.add_argument("--set", default=None)
    p.add_argument("--responses", default=None)
    p.set_defaults(fn=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NencError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
