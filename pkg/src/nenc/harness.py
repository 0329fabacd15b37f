"""Orchestration: fold construction, real/simulated runs, family comparisons.

A run walks every (model, subject, region, fold) cell through the same
path: project features, tune the penalty grid once on the first subject,
fit the layer-weighted encoder on the fold's training videos (with an inner
validation carve for early stopping), score the held-out videos, and
optionally refine through the connectivity stage. Cells are independent
tasks executed on a bounded worker pool and merged in deterministic key
order, so results are identical for any worker count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import connectivity as conn
from . import encoder as enc
from . import featurestore as fs
from .errors import DimensionError, FormatError, NumericalError
from .metrics import RegionScore, SignificanceResult, aggregate, region_score, welch
from .provenance import GROUNDTRUTH, PREDICTION, require_disjoint, tag

REAL, SIMULATED = "real", "simulated"
SIM_SUBJECT = "model"


# ---------------------------------------------------------------------------
# Cross-validation plans


@dataclass(frozen=True)
class Fold:
    index: int
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass(frozen=True)
class CVPlan:
    num_videos: int
    k: int
    seed: int
    folds: tuple[Fold, ...]
    test_fraction: float | None = None

    def validate(self) -> None:
        if self.test_fraction is None:
            lo, hi = self.num_videos // self.k, self.num_videos // self.k + 1
        else:
            lo = hi = max(1, int(round(self.num_videos * self.test_fraction)))
        all_test: set[int] = set()
        for fold in self.folds:
            train, test = set(fold.train), set(fold.test)
            if train & test:
                raise DimensionError(f"fold {fold.index}: train/test overlap")
            if train | test != set(range(self.num_videos)):
                raise DimensionError(f"fold {fold.index}: indices do not cover all videos")
            if not lo <= len(test) <= hi:
                raise DimensionError(f"fold {fold.index}: test size {len(test)} out of range")
            if all_test & test:
                raise DimensionError("fold test sets overlap")
            all_test |= test
        if self.test_fraction is None and all_test != set(range(self.num_videos)):
            raise DimensionError("fold test sets do not cover all videos")


def make_folds(
    num_videos: int, k: int, seed: int, test_fraction: float | None = None
) -> CVPlan:
    """Seeded fold plan with pairwise-disjoint test sets.

    Default: a k-way partition (test sets cover all videos, size n/k each).
    With ``test_fraction``, each fold instead holds a disjoint test block of
    that fraction (the published protocol's four folds at 90/10); coverage
    is then only complete when k * fraction == 1.
    """
    if k < 2:
        raise DimensionError("need at least 2 folds")
    if num_videos < k:
        raise DimensionError(f"{num_videos} videos cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = rng.permutation(num_videos)
    if test_fraction is None:
        parts = np.array_split(order, k)
    else:
        if not 0.0 < test_fraction < 1.0:
            raise DimensionError(f"test_fraction {test_fraction} out of (0, 1)")
        m = max(1, int(round(num_videos * test_fraction)))
        if k * m > num_videos:
            raise DimensionError(
                f"{k} disjoint test sets of {m} videos exceed {num_videos}"
            )
        parts = [order[i * m : (i + 1) * m] for i in range(k)]
    folds = []
    for i, part in enumerate(parts):
        test = set(int(v) for v in part)
        train = tuple(sorted(set(range(num_videos)) - test))
        folds.append(Fold(index=i, train=train, test=tuple(sorted(test))))
    plan = CVPlan(
        num_videos=num_videos,
        k=k,
        seed=seed,
        folds=tuple(folds),
        test_fraction=test_fraction,
    )
    plan.validate()
    return plan


def inner_split(train: Sequence[int], seed: int, fold_index: int, frac: float = 0.1):
    """Carve an early-stopping validation subset out of a fold's train set."""
    train = list(train)
    rng = np.random.default_rng([seed, 7, fold_index])
    order = rng.permutation(len(train))
    n_val = max(1, int(round(frac * len(train))))
    val = tuple(sorted(train[i] for i in order[:n_val]))
    inner = tuple(sorted(train[i] for i in order[n_val:]))
    return inner, val


# ---------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class ConnectivityRunConfig:
    variants: tuple[str, ...] = ("full",)
    hidden: int = 512
    p1: float = 0.2
    p2: float = 0.2
    lambda_grid: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    lambda_c: float | None = None  # set to skip tuning
    activation: str = "identity"
    baselines: bool = False
    max_epochs: int = 500
    patience: int = 10

    def __post_init__(self):
        for v in self.variants:
            if v not in conn.VARIANTS:
                raise ValueError(f"unknown connectivity variant {v!r}")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    feature_sets: tuple[str, ...]
    responses: str | None = None
    target_set: str | None = None
    target_blocks: tuple[str, ...] | None = None
    regions: tuple[str, ...] | None = None
    subjects: tuple[str, ...] | None = None
    folds: int = 4
    test_fraction: float | None = None
    seed: int = 0
    workers: int = 1
    out_dir: str = "results"
    projection_dim: int | None = None  # default min(raw_dim, 4096) per layer
    projection_s: float | None = None
    grid: enc.HyperGrid = enc.HyperGrid()
    encoder: enc.EncoderConfig = enc.EncoderConfig()
    tune_betas: tuple[float, float] | None = None  # set to skip tuning
    tune_per_subject: bool = False
    exclude_tuning_subject: bool = False
    connectivity: ConnectivityRunConfig | None = None

    def __post_init__(self):
        if self.mode not in (REAL, SIMULATED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.feature_sets:
            raise ValueError("at least one source feature set is required")
        if self.mode == REAL and not self.responses:
            raise ValueError("real mode needs a responses path")
        if self.mode == SIMULATED and not (self.target_set and self.target_blocks):
            raise ValueError("simulated mode needs a target set and target blocks")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "RunConfig":
        doc = dict(doc)
        if "grid" in doc:
            g = dict(doc["grid"])
            doc["grid"] = enc.HyperGrid(
                beta1=tuple(g.get("beta1", (0.1, 1.0, 10.0))),
                beta2=tuple(g.get("beta2", (1.0, 10.0, 100.0))),
                folds=int(g.get("folds", 2)),
                subject=str(g.get("subject", "")),
            )
        if "encoder" in doc:
            e = dict(doc["encoder"])
            if "step_candidates" in e:
                e["step_candidates"] = tuple(e["step_candidates"])
            doc["encoder"] = enc.EncoderConfig(**e)
        if "connectivity" in doc and doc["connectivity"] is not None:
            c = dict(doc["connectivity"])
            for key in ("variants", "lambda_grid"):
                if key in c:
                    c[key] = tuple(c[key])
            doc["connectivity"] = ConnectivityRunConfig(**c)
        for key in ("feature_sets", "target_blocks", "regions", "subjects"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        if doc.get("tune_betas") is not None:
            doc["tune_betas"] = tuple(doc["tune_betas"])
        return cls(**doc)

    def echo(self) -> dict:
        return asdict(self)


def load_config(path) -> RunConfig:
    """Read a RunConfig from a JSON or TOML file."""
    import json

    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
    else:
        doc = json.loads(text)
    try:
        return RunConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid run config {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Result containers


@dataclass
class ConnectivityResult:
    lambda_by_variant: dict[str, float]
    scores: dict[str, list[RegionScore]]  # variant -> refined scores
    baseline_scores: dict[str, list[RegionScore]]  # baseline name -> scores
    gains: dict[str, dict[str, conn.GainSummary]]
    attribution: conn.AttributionMatrix | None


@dataclass
class ModelResult:
    model: str
    betas: tuple[float, float]
    tune_scores: dict | None
    scores: list[RegionScore]
    fit_reports: dict[str, enc.FitReport]
    connectivity: ConnectivityResult | None = None


@dataclass
class RunResult:
    mode: str
    seed: int
    plan: CVPlan
    regions: tuple[str, ...]
    subjects: tuple[str, ...]
    models: dict[str, ModelResult]
    config_echo: dict = field(default_factory=dict)
    # Subjects kept out of summary averages (e.g. the tuning subject when
    # exclude_tuning_subject is set); raw scores are still recorded.
    excluded_subjects: tuple[str, ...] = ()

    def scores_for(self, model: str, stage: str = "encoder") -> list[RegionScore]:
        """Scores by stage: "encoder", a variant ("connectivity:full" or
        "full"), or a baseline ("baseline:random" or "random")."""
        mr = self.models[model]
        if stage == "encoder":
            return mr.scores
        if mr.connectivity is None:
            raise DimensionError(f"model {model!r} has no connectivity results")
        name = stage.split(":", 1)[-1]
        if name in mr.connectivity.scores:
            return mr.connectivity.scores[name]
        if name in mr.connectivity.baseline_scores:
            return mr.connectivity.baseline_scores[name]
        raise DimensionError(f"unknown stage {stage!r} for model {model!r}")


# ---------------------------------------------------------------------------
# Worker tasks (top-level so they pickle)


def _score_or_chance(pred, gt, **ids) -> RegionScore:
    """Score predictions, mapping the fully-undefined case to chance level.

    A model whose every layer weight was silenced by the L1 penalty predicts
    a constant, which has no defined correlation; for run bookkeeping that
    is a no-signal model, recorded as r = 0 with zero scored voxels.
    """
    try:
        return region_score(pred, gt, **ids)
    except NumericalError:
        return RegionScore(
            region=ids.get("region", ""),
            subject=ids.get("subject", ""),
            fold=ids.get("fold", 0),
            r=0.0,
            voxels_scored=0,
            voxels_excluded=gt.shape[1],
        )


def _encoder_task(payload: dict) -> dict:
    require_disjoint(
        payload["train_ids"] + payload["val_ids"],
        payload["test_ids"],
        context=f"fit {payload['key']}",
    )
    model, report = enc.fit(
        payload["xs_train"],
        payload["y_train"],
        payload["xs_val"],
        payload["y_val"],
        payload["config"],
        region=payload["key"][2],
    )
    test_pred = enc.predict(model, payload["xs_test"])
    key = payload["key"]
    score = _score_or_chance(
        test_pred, payload["y_test"], region=key[2], subject=key[1], fold=key[3]
    )
    report.score = score.r
    return {"key": key, "score": score, "report": report, "test_pred": test_pred}


def _connectivity_task(payload: dict) -> dict:
    model, report = conn.train_connectivity(
        payload["gt_train"],
        payload["gt_val"],
        payload["layout"],
        payload["target"],
        payload["config"],
        variant=payload["variant"],
        seed=payload["seed"],
    )
    refined = conn.infer_connectivity(model, payload["stage1_test"])
    key = payload["key"]
    score = _score_or_chance(
        refined, payload["y_test"], region=payload["target"], subject=key[1], fold=key[3]
    )
    return {
        "key": key,
        "score": score,
        "report": report,
        "sources": conn.attribute_sources(model),
    }


def map_tasks(fn, payloads: Sequence[dict], workers: int) -> list:
    """Run independent tasks, merging results in submission order."""
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, payloads))
    return [fn(p) for p in payloads]


# ---------------------------------------------------------------------------
# Shared pipeline pieces


def project_layers(feature_set: fs.FeatureSet, seed: int, out_dim=None, s=None) -> dict[str, np.ndarray]:
    """Project every layer with a per-layer seeded projection.

    Projection seeds depend only on the run seed and the layer name, so the
    same layer projects identically wherever it appears. Layers already at
    or below the requested width pass through unchanged.
    """
    projected = {}
    for info in feature_set.manifest.layers:
        matrix = feature_set.layer(info.name)
        target_dim = min(info.raw_dim, out_dim or fs.DEFAULT_MAX_PROJECTED_DIM)
        if target_dim >= info.raw_dim:
            projected[info.name] = matrix
            continue
        spec = fs.make_projection(
            fs.projection_seed(seed, info.name), info.raw_dim, target_dim, s
        )
        projected[info.name] = fs.apply_projection(spec, matrix, layer=info.name)
    return projected


def _model_name(feature_set: fs.FeatureSet, path: str) -> str:
    return feature_set.manifest.model_name or Path(path).name


def _check_video_ids(a_ids, b_ids, a_what: str, b_what: str):
    if list(a_ids) != list(b_ids):
        if set(a_ids) != set(b_ids):
            extra = sorted(set(a_ids) ^ set(b_ids))
            raise FormatError(
                f"{a_what} and {b_what} disagree on video ids (e.g. {extra[:3]})"
            )
        raise FormatError(f"{a_what} and {b_what} list the same videos in different orders")


def _tuning_subject(grid: enc.HyperGrid, subjects: Sequence[str]) -> str:
    if grid.subject:
        if grid.subject not in subjects:
            raise FormatError(f"tuning subject {grid.subject!r} not in {list(subjects)}")
        return grid.subject
    return subjects[0]


def _fit_payloads(
    projected: dict[str, np.ndarray],
    responses: Mapping[str, Mapping[str, np.ndarray]],
    regions: Sequence[str],
    subjects: Sequence[str],
    plan: CVPlan,
    model: str,
    config: RunConfig,
    betas_by_subject: Mapping[str, tuple[float, float]],
):
    layer_names = sorted(projected)
    payloads = []
    for subject, region, fold in itertools.product(subjects, regions, plan.folds):
        train_ids, val_ids = inner_split(fold.train, config.seed, fold.index)
        y = responses[subject][region]
        beta1, beta2 = betas_by_subject[subject]
        cfg = replace(config.encoder, beta1=beta1, beta2=beta2)
        payloads.append(
            {
                "key": (model, subject, region, fold.index),
                "xs_train": [projected[l][list(train_ids)] for l in layer_names],
                "y_train": y[list(train_ids)],
                "xs_val": [projected[l][list(val_ids)] for l in layer_names],
                "y_val": y[list(val_ids)],
                "xs_test": [projected[l][list(fold.test)] for l in layer_names],
                "y_test": y[list(fold.test)],
                "train_ids": train_ids,
                "val_ids": val_ids,
                "test_ids": fold.test,
                "config": cfg,
            }
        )
    return payloads


def _tune_for_subject(
    projected: dict[str, np.ndarray],
    responses: Mapping[str, Mapping[str, np.ndarray]],
    regions: Sequence[str],
    subject: str,
    plan: CVPlan,
    config: RunConfig,
) -> enc.TuneResult:
    train_idx = list(plan.folds[0].train)
    layer_names = sorted(projected)
    xs = [projected[l][train_idx] for l in layer_names]
    ys = {r: responses[subject][r][train_idx] for r in regions}
    return enc.tune(config.grid, xs, ys, seed=config.seed, base_config=config.encoder)


def _connectivity_lambda(
    responses: Mapping[str, Mapping[str, np.ndarray]],
    layout: conn.RegionLayout,
    subject: str,
    plan: CVPlan,
    variant: str,
    run_cfg: RunConfig,
) -> float:
    """Two-fold CV on the tuning subject's training set, scored by Pearson."""
    ccfg = run_cfg.connectivity
    if ccfg.lambda_c is not None:
        return ccfg.lambda_c
    train_idx = list(plan.folds[0].train)
    gt = np.hstack([responses[subject][name] for name in layout.names])[train_idx]
    rng = np.random.default_rng([run_cfg.seed, 11])
    order = rng.permutation(len(train_idx))
    half = len(train_idx) // 2
    splits = [(order[:half], order[half:]), (order[half:], order[:half])]
    scores = {}
    for lam in ccfg.lambda_grid:
        cfg = conn.ConnectivityConfig(
            hidden=ccfg.hidden,
            p1=ccfg.p1,
            p2=ccfg.p2,
            lambda_c=lam,
            activation=ccfg.activation,
            max_epochs=ccfg.max_epochs,
            patience=ccfg.patience,
        )
        cell = []
        for tr, va in splits:
            gt_tr = tag(gt[tr], GROUNDTRUTH, tr)
            gt_va = tag(gt[va], GROUNDTRUTH, va)
            for target in layout.names:
                model, _ = conn.train_connectivity(
                    gt_tr, gt_va, layout, target, cfg, variant=variant, seed=run_cfg.seed
                )
                pred = conn.forward(model, gt[va])
                cell.append(
                    region_score(pred, gt[va][:, layout.slice_of(target)]).r
                )
        scores[lam] = float(np.mean(cell))
    # Ties prefer the stronger penalty, mirroring the encoder rule.
    return max(scores, key=lambda lam: (scores[lam], lam))


def _run_connectivity_stage(
    model: str,
    projected_scores: list[RegionScore],
    test_preds: dict[tuple, np.ndarray],
    responses: Mapping[str, Mapping[str, np.ndarray]],
    layout: conn.RegionLayout,
    subjects: Sequence[str],
    plan: CVPlan,
    config: RunConfig,
    tuning_subject: str,
) -> ConnectivityResult:
    ccfg = config.connectivity
    lambda_by_variant = {}
    for variant in ccfg.variants:
        lambda_by_variant[variant] = _connectivity_lambda(
            responses, layout, tuning_subject, plan, variant, config
        )

    payloads = []
    for variant in ccfg.variants:
        cfg = conn.ConnectivityConfig(
            hidden=ccfg.hidden,
            p1=ccfg.p1,
            p2=ccfg.p2,
            lambda_c=lambda_by_variant[variant],
            activation=ccfg.activation,
            max_epochs=ccfg.max_epochs,
            patience=ccfg.patience,
        )
        for subject, fold in itertools.product(subjects, plan.folds):
            train_ids, val_ids = inner_split(fold.train, config.seed, fold.index)
            gt_train = np.hstack(
                [responses[subject][name][list(train_ids)] for name in layout.names]
            )
            gt_val = np.hstack(
                [responses[subject][name][list(val_ids)] for name in layout.names]
            )
            stage1 = np.hstack(
                [test_preds[(model, subject, name, fold.index)] for name in layout.names]
            )
            for target in layout.names:
                payloads.append(
                    {
                        "key": (model, subject, variant, fold.index),
                        "target": target,
                        "variant": variant,
                        "config": cfg,
                        "seed": int(
                            np.random.default_rng(
                                [config.seed, 13, fold.index]
                            ).integers(2**31)
                        ),
                        "gt_train": tag(gt_train, GROUNDTRUTH, train_ids),
                        "gt_val": tag(gt_val, GROUNDTRUTH, val_ids),
                        "stage1_test": tag(stage1, PREDICTION, fold.test),
                        "y_test": responses[subject][target][list(fold.test)],
                        "layout": layout,
                    }
                )
    results = map_tasks(_connectivity_task, payloads, config.workers)

    scores: dict[str, list[RegionScore]] = {v: [] for v in ccfg.variants}
    source_vectors: dict[str, list[np.ndarray]] = {name: [] for name in layout.names}
    for payload, result in zip(payloads, results):
        variant = payload["variant"]
        scores[variant].append(result["score"])
        if variant == "full":
            source_vectors[payload["target"]].append(result["sources"])

    baseline_scores: dict[str, list[RegionScore]] = {}
    if ccfg.baselines:
        for kind in ("random", "identity"):
            rows = []
            for subject, fold in itertools.product(subjects, plan.folds):
                stage1 = np.hstack(
                    [
                        test_preds[(model, subject, name, fold.index)]
                        for name in layout.names
                    ]
                )
                for target in layout.names:
                    if kind == "random":
                        bmodel = conn.baseline_random(
                            layout, target, hidden=ccfg.hidden, seed=config.seed + fold.index
                        )
                    else:
                        bmodel = conn.baseline_identity(layout, target)
                    pred = conn.infer_connectivity(
                        bmodel, tag(stage1, PREDICTION, fold.test)
                    )
                    rows.append(
                        _score_or_chance(
                            pred,
                            responses[subject][target][list(fold.test)],
                            region=target,
                            subject=subject,
                            fold=fold.index,
                        )
                    )
            baseline_scores[kind] = rows

    stage1_subset = [s for s in projected_scores if s.region in layout.names]
    gains = {
        variant: conn.connectivity_gain(stage1_subset, scores[variant])
        for variant in ccfg.variants
    }

    attribution = None
    if "full" in ccfg.variants:
        values = np.stack(
            [np.mean(source_vectors[target], axis=0) for target in layout.names], axis=1
        )
        attribution = conn.AttributionMatrix(layout.names, values)

    return ConnectivityResult(
        lambda_by_variant=lambda_by_variant,
        scores=scores,
        baseline_scores=baseline_scores,
        gains=gains,
        attribution=attribution,
    )


# ---------------------------------------------------------------------------
# Runs


def _run_for_model(
    path: str,
    responses: Mapping[str, Mapping[str, np.ndarray]],
    regions: Sequence[str],
    subjects: Sequence[str],
    layout: conn.RegionLayout | None,
    plan: CVPlan,
    config: RunConfig,
) -> ModelResult:
    feature_set = fs.read_feature_set(path)
    model = _model_name(feature_set, path)
    projected = project_layers(
        feature_set, config.seed, config.projection_dim, config.projection_s
    )

    tuning_subject = _tuning_subject(config.grid, subjects)
    tune_scores = None
    if config.tune_betas is not None:
        betas = {s: tuple(config.tune_betas) for s in subjects}
    elif config.tune_per_subject:
        betas = {}
        for s in subjects:
            result = _tune_for_subject(projected, responses, regions, s, plan, config)
            betas[s] = (result.beta1, result.beta2)
            if s == tuning_subject:
                tune_scores = result.scores
    else:
        result = _tune_for_subject(
            projected, responses, regions, tuning_subject, plan, config
        )
        tune_scores = result.scores
        betas = {s: (result.beta1, result.beta2) for s in subjects}

    payloads = _fit_payloads(
        projected, responses, regions, subjects, plan, model, config, betas
    )
    results = map_tasks(_encoder_task, payloads, config.workers)

    scores, reports, test_preds = [], {}, {}
    for result in results:
        m, subject, region, fold = result["key"]
        scores.append(result["score"])
        reports["__".join([m, f"sub-{subject}", region, f"fold{fold}"])] = result["report"]
        test_preds[(m, subject, region, fold)] = result["test_pred"]

    connectivity_result = None
    if config.connectivity is not None:
        if layout is None:
            raise DimensionError("connectivity stage requires a region layout")
        connectivity_result = _run_connectivity_stage(
            model,
            scores,
            test_preds,
            responses,
            layout,
            subjects,
            plan,
            config,
            tuning_subject,
        )

    return ModelResult(
        model=model,
        betas=betas[tuning_subject],
        tune_scores=tune_scores,
        scores=scores,
        fit_reports=reports,
        connectivity=connectivity_result,
    )


def run_real(config: RunConfig) -> RunResult:
    """Fit every source model against measured voxel responses."""
    if config.mode != REAL:
        raise ValueError("run_real needs a real-mode config")
    manifest = fs.read_response_manifest(config.responses)
    regions = tuple(config.regions or (name for name, _ in manifest.regions))
    for r in regions:
        if r not in dict(manifest.regions):
            raise FormatError(f"region {r!r} not in response set {config.responses}")
    subjects = tuple(config.subjects or manifest.subjects)
    for s in subjects:
        if s not in manifest.subjects:
            raise FormatError(f"subject {s!r} not in response set {config.responses}")
    responses = {
        s: fs.read_response_set(config.responses, s).matrices for s in subjects
    }
    layout = conn.RegionLayout.from_pairs(
        [(name, count) for name, count in manifest.regions if name in regions]
    )
    plan = make_folds(
        manifest.num_videos, config.folds, config.seed, config.test_fraction
    )

    models = {}
    for path in config.feature_sets:
        feature_set = fs.read_feature_set(path)
        _check_video_ids(
            feature_set.manifest.video_ids,
            manifest.video_ids,
            f"feature set {path}",
            "responses",
        )
        result = _run_for_model(path, responses, regions, subjects, layout, plan, config)
        models[result.model] = result

    excluded = ()
    if config.exclude_tuning_subject and len(subjects) > 1:
        excluded = (_tuning_subject(config.grid, subjects),)
    return RunResult(
        mode=REAL,
        seed=config.seed,
        plan=plan,
        regions=regions,
        subjects=subjects,
        models=models,
        config_echo=config.echo(),
        excluded_subjects=excluded,
    )


def run_simulated(config: RunConfig) -> RunResult:
    """Fit source models against another network's projected block features."""
    if config.mode != SIMULATED:
        raise ValueError("run_simulated needs a simulated-mode config")
    target = fs.read_feature_set(config.target_set)
    for block in config.target_blocks:
        if block not in target.layer_names:
            raise FormatError(
                f"target block {block!r} not in {config.target_set} "
                f"(has {target.layer_names})"
            )
    projected_target = project_layers(
        target, config.seed, config.projection_dim, config.projection_s
    )
    responses = {
        SIM_SUBJECT: {block: projected_target[block] for block in config.target_blocks}
    }
    plan = make_folds(
        target.manifest.num_videos, config.folds, config.seed, config.test_fraction
    )

    models = {}
    for path in config.feature_sets:
        feature_set = fs.read_feature_set(path)
        _check_video_ids(
            feature_set.manifest.video_ids,
            target.manifest.video_ids,
            f"feature set {path}",
            f"target set {config.target_set}",
        )
        result = _run_for_model(
            path,
            responses,
            tuple(config.target_blocks),
            (SIM_SUBJECT,),
            None,
            plan,
            replace(config, connectivity=None),
        )
        models[result.model] = result

    return RunResult(
        mode=SIMULATED,
        seed=config.seed,
        plan=plan,
        regions=tuple(config.target_blocks),
        subjects=(SIM_SUBJECT,),
        models=models,
        config_echo=config.echo(),
    )


def run(config: RunConfig) -> RunResult:
    return run_real(config) if config.mode == REAL else run_simulated(config)


# ---------------------------------------------------------------------------
# Family comparisons


@dataclass(frozen=True)
class ComparisonSpec:
    """Named disjoint groups of models compared along a region/block axis."""

    groups: dict[str, tuple[str, ...]]
    axis: tuple[str, ...] | None = None

    def validate(self) -> None:
        if len(self.groups) < 2:
            raise DimensionError("need at least two groups to compare")
        seen: set[str] = set()
        for name, members in self.groups.items():
            if not members:
                raise DimensionError(f"group {name!r} is empty")
            if len(members) < 2:
                raise DimensionError(
                    f"group {name!r} has {len(members)} model(s); Welch needs >= 2"
                )
            overlap = seen & set(members)
            if overlap:
                raise DimensionError(f"groups overlap on {sorted(overlap)}")
            seen |= set(members)


@dataclass(frozen=True)
class GroupCell:
    group: str
    mean: float
    std: float
    best: tuple[str, float]
    worst: tuple[str, float]
    samples: tuple[float, ...]


@dataclass
class ComparisonResult:
    axis: tuple[str, ...]
    cells: dict[tuple[str, str], GroupCell]  # (axis point, group)
    significance: dict[str, list[SignificanceResult]]  # axis point -> pairwise


def compare_families(
    spec: ComparisonSpec, results: Mapping[str, Sequence[RegionScore]]
) -> ComparisonResult:
    """Welch-tested group comparison with best/worst models per group.

    ``results`` maps each model to its region scores; the observation unit
    within a family is the per-model mean region score.
    """
    spec.validate()
    missing = [
        m for members in spec.groups.values() for m in members if m not in results
    ]
    if missing:
        raise DimensionError(f"no results for model(s): {missing}")
    summaries = {m: aggregate(results[m]) for m in results}
    if spec.axis is not None:
        axis = tuple(spec.axis)
    else:
        any_model = next(iter(summaries))
        axis = tuple(sorted(summaries[any_model]))
    cells = {}
    significance: dict[str, list[SignificanceResult]] = {}
    for point in axis:
        per_group: dict[str, list[tuple[str, float]]] = {}
        for gname, members in spec.groups.items():
            values = []
            for m in members:
                if point not in summaries[m]:
                    raise DimensionError(f"model {m!r} has no scores for {point!r}")
                values.append((m, summaries[m][point].mean))
            per_group[gname] = values
            samples = tuple(v for _, v in values)
            cells[(point, gname)] = GroupCell(
                group=gname,
                mean=float(np.mean(samples)),
                std=float(np.std(samples)),
                best=max(values, key=lambda kv: kv[1]),
                worst=min(values, key=lambda kv: kv[1]),
                samples=samples,
            )
        sig = []
        for (ga, va), (gb, vb) in itertools.combinations(per_group.items(), 2):
            sig.append(
                welch([v for _, v in va], [v for _, v in vb], group_a=ga, group_b=gb)
            )
        significance[point] = sig
    return ComparisonResult(axis=axis, cells=cells, significance=significance)
