"""Inter/intra-region connectivity refinement over concatenated voxels.

A connectivity model maps the concatenated voxels of all regions to one
target region through four layers: dropout, an affine map to a hidden
width, dropout, and a second affine map to the target voxels. Both affine
maps carry an L2 penalty. The variant decides which input slots are live:
``intra`` sees only the target region, ``inter`` everything but the target,
``full`` everything. Masked slots are zeroed before the first affine map,
so outputs and gradients are exactly independent of them.

Training follows the two-stage protocol: inputs are measured (groundtruth)
activations, early-stopped on validation MSE with seeded dropout; inference
runs dropout-free on stage-1 predicted activations. Provenance tags on the
inputs let both directions be asserted.

The default activation between the two affine maps is the identity, which
keeps the composite map A2 @ A1 linear and makes the per-region attribution
(mean absolute effective weight) exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._descent import MAX_RESTARTS, EarlyStopper, choose_step_size
from .errors import DimensionError, DivergenceError, FormatError, NumericalError
from .metrics import RegionScore
from .provenance import GROUNDTRUTH, PREDICTION, require_kind

VARIANTS = ("intra", "inter", "full")


@dataclass(frozen=True)
class RegionLayout:
    """Ordered regions and their slices into the concatenated voxel vector."""

    regions: tuple[tuple[str, int], ...]

    def __post_init__(self):
        names = [name for name, _ in self.regions]
        if not names:
            raise DimensionError("layout needs at least one region")
        if len(set(names)) != len(names):
            raise DimensionError("duplicate region names in layout")
        if any(count < 1 for _, count in self.regions):
            raise DimensionError("every region needs at least one voxel")

    @classmethod
    def from_pairs(cls, pairs) -> "RegionLayout":
        return cls(tuple((str(n), int(c)) for n, c in pairs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.regions)

    @property
    def total(self) -> int:
        return sum(count for _, count in self.regions)

    def voxel_count(self, region: str) -> int:
        return dict(self.regions)[region]

    def slice_of(self, region: str) -> slice:
        offset = 0
        for name, count in self.regions:
            if name == region:
                return slice(offset, offset + count)
            offset += count
        raise DimensionError(f"unknown region {region!r}")


def variant_mask(layout: RegionLayout, target: str, variant: str) -> np.ndarray:
    """Boolean mask over concatenated slots for the given variant."""
    if variant not in VARIANTS:
        raise DimensionError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    mask = np.zeros(layout.total, dtype=bool)
    target_slice = layout.slice_of(target)
    if variant == "intra":
        mask[target_slice] = True
    elif variant == "inter":
        mask[:] = True
        mask[target_slice] = False
    else:
        mask[:] = True
    return mask


@dataclass(frozen=True)
class ConnectivityConfig:
    """Architecture and optimization knobs for the refinement stage."""

    hidden: int = 512
    p1: float = 0.2
    p2: float = 0.2
    lambda_c: float = 1e-2
    activation: str = "identity"  # or "relu"
    step_candidates: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    momentum: float = 0.9
    max_epochs: int = 500
    patience: int = 10

    def __post_init__(self):
        if not (0 <= self.p1 < 1 and 0 <= self.p2 < 1):
            raise ValueError("dropout rates must lie in [0, 1)")
        if self.lambda_c < 0:
            raise ValueError("lambda_c must be nonnegative")
        if self.activation not in ("identity", "relu"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.hidden < 1:
            raise ValueError("hidden width must be positive")


@dataclass
class ConnectivityModel:
    layout: RegionLayout
    target: str
    variant: str
    mask: np.ndarray  # bool over concatenated slots
    a1: np.ndarray  # (hidden, total)
    b1: np.ndarray  # (hidden,)
    a2: np.ndarray  # (target voxels, hidden)
    b2: np.ndarray  # (target voxels,)
    p1: float
    p2: float
    lambda_c: float
    activation: str = "identity"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_target = self.layout.voxel_count(self.target)
        if self.a1.shape[1] != self.layout.total or self.a2.shape[0] != n_target:
            raise DimensionError(
                f"inconsistent shapes for target {self.target!r}: a1 {self.a1.shape}, "
                f"a2 {self.a2.shape}, layout total {self.layout.total}"
            )
        expected = variant_mask(self.layout, self.target, self.variant)
        if self.mask.shape != expected.shape or not np.array_equal(self.mask, expected):
            raise DimensionError(f"mask inconsistent with variant {self.variant!r}")

    @property
    def trained(self) -> bool:
        return bool(self.meta.get("trained", False))


def _activate(z, activation):
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z, activation):
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def _check_input(model: ConnectivityModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layout.total:
        raise DimensionError(
            f"expected concatenated voxels of width {model.layout.total} "
            f"(missing region predictions?), got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise NumericalError("connectivity input contains NaN/inf")
    return x


def forward(model: ConnectivityModel, x) -> np.ndarray:
    """Dropout-free forward pass on raw concatenated voxels."""
    x = _check_input(model, x)
    z = x * model.mask
    h = _activate(z @ model.a1.T + model.b1, model.activation)
    return h @ model.a2.T + model.b2


def infer_connectivity(model: ConnectivityModel, predictions) -> np.ndarray:
    """Refine stage-1 predictions into the target region's final prediction.

    ``predictions`` must hold the stage-1 outputs of every region in layout
    order; tagged inputs are asserted to be predictions, not groundtruth.
    """
    data = require_kind(predictions, PREDICTION)
    return forward(model, data)


# ---------------------------------------------------------------------------
# Training


@dataclass
class ConnectivityReport:
    target: str
    variant: str
    lambda_c: float
    step_size: float
    train_loss: list[float]
    val_loss: list[float]
    selected_epoch: int
    epochs_run: int
    restarts: int = 0

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "variant": self.variant,
            "lambda_c": self.lambda_c,
            "step_size": self.step_size,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "selected_epoch": self.selected_epoch,
            "epochs_run": self.epochs_run,
            "restarts": self.restarts,
        }


def _dropout_masks(shape1, shape2, p1, p2, seed, epoch):
    # Per-epoch generator keyed by (seed, epoch): identical trajectories for
    # identical seeds, and the probe epoch sees the true epoch-1 masks.
    rng = np.random.default_rng([seed, epoch])
    m1 = None if p1 == 0 else (rng.random(shape1) >= p1) / (1.0 - p1)
    m2 = None if p2 == 0 else (rng.random(shape2) >= p2) / (1.0 - p2)
    return m1, m2


class _State:
    def __init__(self, a1, a2, hidden, n_target):
        self.a1 = a1.copy()
        self.b1 = np.zeros(hidden)
        self.a2 = a2.copy()
        self.b2 = np.zeros(n_target)
        self.v = [np.zeros_like(p) for p in (self.a1, self.b1, self.a2, self.b2)]

    def params(self):
        return self.a1, self.b1, self.a2, self.b2

    def snapshot(self):
        return tuple(p.copy() for p in self.params())


def _epoch_update(state: _State, z, y, cfg: ConnectivityConfig, step, seed, epoch):
    n = z.shape[0]
    m1, m2 = _dropout_masks(z.shape, (n, cfg.hidden), cfg.p1, cfg.p2, seed, epoch)
    d0 = z if m1 is None else z * m1
    pre = d0 @ state.a1.T + state.b1
    h = _activate(pre, cfg.activation)
    d1 = h if m2 is None else h * m2
    out = d1 @ state.a2.T + state.b2
    g_out = (2.0 / (n * y.shape[1])) * (out - y)
    g_a2 = g_out.T @ d1 + 2.0 * cfg.lambda_c * state.a2
    g_b2 = g_out.sum(axis=0)
    g_d1 = g_out @ state.a2
    g_h = g_d1 if m2 is None else g_d1 * m2
    g_pre = g_h * _activate_grad(pre, cfg.activation)
    g_a1 = g_pre.T @ d0 + 2.0 * cfg.lambda_c * state.a1
    g_b1 = g_pre.sum(axis=0)
    mu = cfg.momentum
    for p, v, g in zip(state.params(), state.v, (g_a1, g_b1, g_a2, g_b2)):
        v *= mu
        v -= step * g
        p += v


def _mse(params, z, y, activation):
    a1, b1, a2, b2 = params
    h = _activate(z @ a1.T + b1, activation)
    out = h @ a2.T + b2
    d = out - y
    return float(np.mean(d * d))


def _objective(state: _State, z, y, cfg: ConnectivityConfig):
    penalty = cfg.lambda_c * (float(np.sum(state.a1**2)) + float(np.sum(state.a2**2)))
    return _mse(state.params(), z, y, cfg.activation) + penalty


def _xavier(rng, rows, cols):
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def train_connectivity(
    gt_train,
    gt_val,
    layout: RegionLayout,
    target: str,
    config: ConnectivityConfig = ConnectivityConfig(),
    variant: str = "full",
    seed: int = 0,
) -> tuple[ConnectivityModel, ConnectivityReport]:
    """Fit the refinement network for one target region on measured voxels.

    Both splits must be groundtruth activations (two-stage order); dropout
    masks are seeded so the whole trajectory is reproducible.
    """
    train = require_kind(gt_train, GROUNDTRUTH).astype(np.float64)
    val = require_kind(gt_val, GROUNDTRUTH).astype(np.float64)
    for name, arr in (("train", train), ("validation", val)):
        if arr.ndim != 2 or arr.shape[1] != layout.total:
            raise DimensionError(
                f"{name} input must be (videos, {layout.total}), got {arr.shape}"
            )
        if not np.isfinite(arr).all():
            raise NumericalError(f"{name} input contains NaN/inf")
    mask = variant_mask(layout, target, variant)
    target_slice = layout.slice_of(target)
    y_train, y_val = train[:, target_slice], val[:, target_slice]
    z_train, z_val = train * mask, val * mask
    n_target = layout.voxel_count(target)

    init_rng = np.random.default_rng(seed)
    a1_init = _xavier(init_rng, config.hidden, layout.total)
    a1_init[:, ~mask] = 0.0  # masked columns never receive gradient; keep them 0
    a2_init = _xavier(init_rng, n_target, config.hidden)

    def fresh():
        return _State(a1_init, a2_init, config.hidden, n_target)

    init_loss = _objective(fresh(), z_train, y_train, config)

    def probe(step):
        st = fresh()
        _epoch_update(st, z_train, y_train, config, step, seed, 1)
        return _objective(st, z_train, y_train, config)

    step = choose_step_size(init_loss, probe, config.step_candidates)

    restarts = 0
    while True:
        state = fresh()
        stopper = EarlyStopper(config.patience)
        train_losses = [init_loss]
        val_losses = [_mse(state.params(), z_val, y_val, config.activation)]
        stopper.update(0, val_losses[0])
        best = state.snapshot()
        diverged_at = None
        for epoch in range(1, config.max_epochs + 1):
            _epoch_update(state, z_train, y_train, config, step, seed, epoch)
            train_obj = _objective(state, z_train, y_train, config)
            if not np.isfinite(train_obj) or train_obj > 1e6 * max(init_loss, 1.0):
                diverged_at = epoch
                break
            val_obj = _mse(state.params(), z_val, y_val, config.activation)
            train_losses.append(train_obj)
            val_losses.append(val_obj)
            if stopper.update(epoch, val_obj):
                best = state.snapshot()
            if stopper.should_stop:
                break
        if diverged_at is None:
            break
        restarts += 1
        if restarts > MAX_RESTARTS:
            raise DivergenceError(
                "connectivity training diverged at every attempted step size",
                epoch=diverged_at,
                target=target,
                variant=variant,
                lambda_c=config.lambda_c,
                step=step,
            )
        step /= 10.0

    a1, b1, a2, b2 = best
    model = ConnectivityModel(
        layout=layout,
        target=target,
        variant=variant,
        mask=mask,
        a1=a1,
        b1=b1,
        a2=a2,
        b2=b2,
        p1=config.p1,
        p2=config.p2,
        lambda_c=config.lambda_c,
        activation=config.activation,
        meta={
            "trained": True,
            "seed": seed,
            "step_size": step,
            "best_val_mse": stopper.best_loss,
        },
    )
    report = ConnectivityReport(
        target=target,
        variant=variant,
        lambda_c=config.lambda_c,
        step_size=step,
        train_loss=train_losses,
        val_loss=val_losses,
        selected_epoch=stopper.best_epoch,
        epochs_run=len(train_losses) - 1,
        restarts=restarts,
    )
    return model, report


# ---------------------------------------------------------------------------
# Baselines


def baseline_random(
    layout: RegionLayout, target: str, hidden: int = 512, seed: int = 0
) -> ConnectivityModel:
    """Untrained full-variant model with Xavier-uniform affine maps."""
    rng = np.random.default_rng(seed)
    n_target = layout.voxel_count(target)
    return ConnectivityModel(
        layout=layout,
        target=target,
        variant="full",
        mask=variant_mask(layout, target, "full"),
        a1=_xavier(rng, hidden, layout.total),
        b1=np.zeros(hidden),
        a2=_xavier(rng, n_target, hidden),
        b2=np.zeros(n_target),
        p1=0.0,
        p2=0.0,
        lambda_c=0.0,
        meta={"trained": False, "baseline": "random", "seed": seed},
    )


def baseline_identity(layout: RegionLayout, target: str) -> ConnectivityModel:
    """Untrained all-ones connectivity: every region weighs in equally.

    Built with a width-1 hidden layer of literal ones so the composite map
    is exactly the all-ones matrix; each output voxel is the plain sum of
    the live input slots.
    """
    n_target = layout.voxel_count(target)
    return ConnectivityModel(
        layout=layout,
        target=target,
        variant="full",
        mask=variant_mask(layout, target, "full"),
        a1=np.ones((1, layout.total)),
        b1=np.zeros(1),
        a2=np.ones((n_target, 1)),
        b2=np.zeros(n_target),
        p1=0.0,
        p2=0.0,
        lambda_c=0.0,
        meta={"trained": False, "baseline": "identity"},
    )


# ---------------------------------------------------------------------------
# Attribution and gains


def effective_map(model: ConnectivityModel) -> np.ndarray:
    """Composite linear map A2 @ A1 (exact for the identity activation)."""
    return model.a2 @ model.a1


@dataclass(frozen=True)
class AttributionMatrix:
    """Mean |effective weight| of each source region per target region.

    ``values[i, j]`` is the contribution of source region i to target
    region j. Targets whose model was never trained (random/identity
    baselines) are listed in ``non_informative``.
    """

    regions: tuple[str, ...]
    values: np.ndarray  # (source, target)
    non_informative: tuple[str, ...] = ()

    def normalized(self) -> "AttributionMatrix":
        """Column-normalize so each target's contributions sum to 1."""
        sums = self.values.sum(axis=0, keepdims=True)
        sums = np.where(sums == 0.0, 1.0, sums)
        return AttributionMatrix(self.regions, self.values / sums, self.non_informative)


def attribute_sources(model: ConnectivityModel) -> np.ndarray:
    """Per-source-region mean absolute effective weight onto the target."""
    eff = np.abs(effective_map(model))
    return np.array(
        [float(eff[:, model.layout.slice_of(name)].mean()) for name in model.layout.names]
    )


def attribute(models: Mapping[str, ConnectivityModel], layout: RegionLayout) -> AttributionMatrix:
    """Assemble the region-by-region attribution matrix from per-target models."""
    names = layout.names
    missing = set(names) - set(models)
    if missing:
        raise DimensionError(f"no connectivity model for target(s): {sorted(missing)}")
    values = np.zeros((len(names), len(names)))
    non_informative = []
    for j, target in enumerate(names):
        model = models[target]
        if model.target != target:
            raise DimensionError(
                f"model for column {target!r} targets {model.target!r}"
            )
        values[:, j] = attribute_sources(model)
        if not model.trained:
            non_informative.append(target)
    return AttributionMatrix(names, values, tuple(non_informative))


@dataclass(frozen=True)
class GainSummary:
    region: str
    deltas: tuple[float, ...]  # per fold, subjects averaged first
    mean: float
    std: float

    def scaled(self, factor: float = 100.0) -> tuple[float, ...]:
        """Display scaling (the comparison figures use x100)."""
        return tuple(d * factor for d in self.deltas)


def connectivity_gain(
    base: Sequence[RegionScore], refined: Sequence[RegionScore]
) -> dict[str, GainSummary]:
    """Per-region score improvements of refined over base predictions.

    Scores must cover identical (region, subject, fold) cells; subjects are
    averaged within each fold before differencing.
    """

    def index(scores):
        table: dict[str, dict[int, dict[str, float]]] = {}
        for s in scores:
            table.setdefault(s.region, {}).setdefault(s.fold, {})[s.subject] = s.r
        return table

    base_t, refined_t = index(base), index(refined)
    if set(base_t) != set(refined_t):
        raise DimensionError(
            f"region mismatch: base {sorted(base_t)} vs refined {sorted(refined_t)}"
        )
    out = {}
    for region in sorted(base_t):
        folds_b, folds_r = base_t[region], refined_t[region]
        if set(folds_b) != set(folds_r):
            raise DimensionError(f"fold mismatch for region {region!r}")
        deltas = []
        for fold in sorted(folds_b):
            if set(folds_b[fold]) != set(folds_r[fold]):
                raise DimensionError(
                    f"subject mismatch for region {region!r} fold {fold}"
                )
            b = np.mean(list(folds_b[fold].values()))
            r = np.mean(list(folds_r[fold].values()))
            deltas.append(float(r - b))
        out[region] = GainSummary(
            region=region,
            deltas=tuple(deltas),
            mean=float(np.mean(deltas)),
            std=float(np.std(deltas)),
        )
    return out


# ---------------------------------------------------------------------------
# Checkpoints (same conventions as encoder checkpoints)


def save_connectivity(model: ConnectivityModel, path) -> None:
    from .encoder import _CKPT_HEADER, _CKPT_MAGIC, _write_block

    path_str = str(path)
    with open(path_str, "wb") as f:
        f.write(_CKPT_HEADER.pack(_CKPT_MAGIC, 1, 2, 0))
        for block in (model.a1, model.b1, model.a2, model.b2):
            _write_block(f, block)
    sidecar = {
        "kind": "connectivity",
        "target": model.target,
        "variant": model.variant,
        "regions": [[name, count] for name, count in model.layout.regions],
        "p1": model.p1,
        "p2": model.p2,
        "lambda_c": model.lambda_c,
        "activation": model.activation,
        "meta": model.meta,
    }
    with open(path_str + ".json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def load_connectivity(path) -> ConnectivityModel:
    from .encoder import _CKPT_HEADER, _CKPT_MAGIC, _read_block

    path_str = str(path)
    try:
        with open(path_str + ".json") as f:
            sidecar = json.load(f)
    except FileNotFoundError as exc:
        raise FormatError(f"missing checkpoint sidecar {path_str}.json") from exc
    layout = RegionLayout.from_pairs(sidecar["regions"])
    with open(path_str, "rb") as f:
        head = f.read(_CKPT_HEADER.size)
        magic, version, _, _ = _CKPT_HEADER.unpack(head)
        if magic != _CKPT_MAGIC or version != 1:
            raise FormatError(f"{path_str}: bad checkpoint header")
        a1 = _read_block(f, path_str)
        b1 = _read_block(f, path_str).ravel()
        a2 = _read_block(f, path_str)
        b2 = _read_block(f, path_str).ravel()
    return ConnectivityModel(
        layout=layout,
        target=sidecar["target"],
        variant=sidecar["variant"],
        mask=variant_mask(layout, sidecar["target"], sidecar["variant"]),
        a1=a1,
        b1=b1,
        a2=a2,
        b2=b2,
        p1=float(sidecar["p1"]),
        p2=float(sidecar["p2"]),
        lambda_c=float(sidecar["lambda_c"]),
        activation=sidecar.get("activation", "identity"),
        meta=sidecar.get("meta", {}),
    )
