"""Layer-weighted region regression with sparse layer weights.

Each region is predicted as a weighted sum of per-layer linear readouts,

    prediction = sum_l omega_l (X_l W_l^T + b_l),

trained by minimizing the squared residual plus a ridge-style penalty on
every W_l (squared Frobenius by default, plain Frobenius behind a switch)
and an L1 penalty enforcing sparsity on the layer weights omega.

Training is deterministic full-batch descent: the fixed step size is chosen
from a log-grid by a one-epoch probe, momentum is optional, the L1 term is
handled by a proximal (soft-threshold) update so irrelevant layers reach
exactly zero, and the returned parameters come from the epoch with the best
validation loss. All accumulation is float64 regardless of storage dtype.
"""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from ._descent import MAX_RESTARTS, EarlyStopper, choose_step_size
from .errors import DimensionError, DivergenceError, FormatError, NumericalError
from .metrics import region_score


@dataclass(frozen=True)
class EncoderConfig:
    """Optimization and parameterization knobs for one regression fit."""

    beta1: float = 1.0
    beta2: float = 10.0
    step_candidates: tuple[float, ...] = (1e-1, 1e-2, 1e-3)
    momentum: float = 0.9
    max_epochs: int = 500
    patience: int = 10
    include_bias: bool = True
    freeze_omega: bool = False
    squared_weight_penalty: bool = True
    zscore_features: bool = False

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("penalty strengths must be nonnegative")
        if self.zscore_features and not self.include_bias:
            raise ValueError("z-scoring folds the feature means into the bias terms")


@dataclass
class EncoderModel:
    """Per-layer linear readouts plus the learned layer weights."""

    region: str
    weights: list[np.ndarray]  # W_l, each (voxels, features_l)
    biases: list[np.ndarray]  # b_l, each (voxels,)
    omega: np.ndarray  # (layers,)
    meta: dict = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def num_voxels(self) -> int:
        return self.weights[0].shape[0]


class LossParts(NamedTuple):
    """Exact decomposition of the training objective."""

    total: float
    residual: float
    weight_penalty: float
    omega_penalty: float


class Gradients(NamedTuple):
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    omega: np.ndarray


@dataclass
class FitReport:
    """Per-epoch loss trajectories and the early-stopping outcome.

    Epoch 0 is the initial parameter state; epoch e is the state after e
    updates. ``val_loss`` is the squared residual on the validation split
    (penalties regularize training, not model selection); ``selected_epoch``
    always points at its minimum.
    """

    beta1: float
    beta2: float
    step_size: float
    train_loss: list[float]
    val_loss: list[float]
    selected_epoch: int
    epochs_run: int
    omega: list[float]
    restarts: int = 0
    region: str = ""
    score: float | None = None

    def to_json(self) -> dict:
        return {
            "beta1": self.beta1,
            "beta2": self.beta2,
            "step_size": self.step_size,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "selected_epoch": self.selected_epoch,
            "epochs_run": self.epochs_run,
            "omega": self.omega,
            "restarts": self.restarts,
            "region": self.region,
            "score": self.score,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FitReport":
        return cls(**doc)


def _check_batch(xs, y=None):
    xs = [np.asarray(x, dtype=np.float64) for x in xs]
    if not xs:
        raise DimensionError("need at least one layer of features")
    n = xs[0].shape[0]
    for i, x in enumerate(xs):
        if x.ndim != 2 or x.shape[0] != n:
            raise DimensionError(f"layer {i}: expected ({n}, dim), got {x.shape}")
        if not np.isfinite(x).all():
            raise NumericalError(f"layer {i} features contain NaN/inf")
    if y is None:
        return xs, None
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != n:
        raise DimensionError(f"targets: expected ({n}, voxels), got {y.shape}")
    if not np.isfinite(y).all():
        raise NumericalError("targets contain NaN/inf")
    return xs, y


def _check_model(model: EncoderModel, xs):
    if model.num_layers != len(xs):
        raise DimensionError(
            f"model has {model.num_layers} layers, batch has {len(xs)}"
        )
    for l, (w, x) in enumerate(zip(model.weights, xs)):
        if w.shape[1] != x.shape[1]:
            raise DimensionError(
                f"layer {l}: weights expect dim {w.shape[1]}, features have {x.shape[1]}"
            )


def _layer_predictions(weights, biases, xs):
    return [x @ w.T + b for w, b, x in zip(weights, biases, xs)]


def predict(model: EncoderModel, xs: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate the weighted sum of per-layer readouts on a batch."""
    xs, _ = _check_batch(xs)
    _check_model(model, xs)
    preds = _layer_predictions(model.weights, model.biases, xs)
    out = np.zeros((xs[0].shape[0], model.num_voxels))
    for omega_l, pred_l in zip(model.omega, preds):
        out += omega_l * pred_l
    return out


def _weight_penalty(weights, squared: bool) -> float:
    if squared:
        return float(sum(np.sum(w * w) for w in weights))
    return float(sum(np.linalg.norm(w) for w in weights))


def loss(model: EncoderModel, xs, y, beta1: float, beta2: float, squared_weight_penalty=True) -> LossParts:
    """Training objective split into residual and the two penalty terms."""
    if beta1 < 0 or beta2 < 0:
        raise ValueError("penalty strengths must be nonnegative")
    xs, y = _check_batch(xs, y)
    _check_model(model, xs)
    r = predict(model, xs) - y
    residual = float(np.sum(r * r))
    wpen = beta1 * _weight_penalty(model.weights, squared_weight_penalty)
    open_ = beta2 * float(np.sum(np.abs(model.omega)))
    return LossParts(residual + wpen + open_, residual, wpen, open_)


def gradient(model: EncoderModel, xs, y, beta1: float, beta2: float, squared_weight_penalty=True) -> Gradients:
    """Analytic gradients; the L1 term uses subgradient 0 at omega_l = 0."""
    xs, y = _check_batch(xs, y)
    _check_model(model, xs)
    preds = _layer_predictions(model.weights, model.biases, xs)
    r = np.zeros_like(y)
    for omega_l, pred_l in zip(model.omega, preds):
        r += omega_l * pred_l
    r -= y
    g_weights, g_biases = [], []
    g_omega = np.empty(model.num_layers)
    for l, (w, x, pred_l) in enumerate(zip(model.weights, xs, preds)):
        gw = 2.0 * model.omega[l] * (r.T @ x)
        if beta1 > 0:
            if squared_weight_penalty:
                gw += 2.0 * beta1 * w
            else:
                norm = np.linalg.norm(w)
                if norm > 0:
                    gw += beta1 * w / norm
        g_weights.append(gw)
        g_biases.append(2.0 * model.omega[l] * r.sum(axis=0))
        g_omega[l] = 2.0 * float(np.sum(r * pred_l)) + beta2 * np.sign(model.omega[l])
    return Gradients(g_weights, g_biases, g_omega)


def _soft_threshold(v: np.ndarray, t: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


class _TrainState:
    """Mutable parameter state for one descent run."""

    def __init__(self, layer_dims, num_voxels, num_layers, freeze_omega):
        self.weights = [np.zeros((num_voxels, c)) for c in layer_dims]
        self.biases = [np.zeros(num_voxels) for _ in layer_dims]
        self.omega = (
            np.ones(num_layers) if freeze_omega else np.full(num_layers, 1.0 / num_layers)
        )
        self.v_weights = [np.zeros_like(w) for w in self.weights]
        self.v_biases = [np.zeros_like(b) for b in self.biases]
        self.v_omega = np.zeros(num_layers)

    def snapshot(self):
        return (
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.omega.copy(),
        )


def _epoch_update(state: _TrainState, xs, y, cfg: EncoderConfig, step: float):
    """One full-batch update in place; returns the pre-update residual parts."""
    preds = _layer_predictions(state.weights, state.biases, xs)
    r = np.zeros_like(y)
    for omega_l, pred_l in zip(state.omega, preds):
        r += omega_l * pred_l
    r -= y
    col_r = r.sum(axis=0)
    mu = cfg.momentum
    for l, (x, pred_l) in enumerate(zip(xs, preds)):
        gw = 2.0 * state.omega[l] * (r.T @ x)
        if cfg.beta1 > 0:
            if cfg.squared_weight_penalty:
                gw += 2.0 * cfg.beta1 * state.weights[l]
            else:
                norm = np.linalg.norm(state.weights[l])
                if norm > 0:
                    gw += cfg.beta1 * state.weights[l] / norm
        state.v_weights[l] = mu * state.v_weights[l] - step * gw
        state.weights[l] += state.v_weights[l]
        if cfg.include_bias:
            gb = 2.0 * state.omega[l] * col_r
            state.v_biases[l] = mu * state.v_biases[l] - step * gb
            state.biases[l] += state.v_biases[l]
    if not cfg.freeze_omega:
        g_omega = np.array([2.0 * float(np.sum(r * p)) for p in preds])
        state.v_omega = mu * state.v_omega - step * g_omega
        state.omega = _soft_threshold(state.omega + state.v_omega, step * cfg.beta2)


def _objective(state, xs, y, cfg: EncoderConfig) -> float:
    preds = _layer_predictions(state.weights, state.biases, xs)
    r = np.zeros_like(y)
    for omega_l, pred_l in zip(state.omega, preds):
        r += omega_l * pred_l
    r -= y
    total = float(np.sum(r * r))
    total += cfg.beta1 * _weight_penalty(state.weights, cfg.squared_weight_penalty)
    total += cfg.beta2 * float(np.sum(np.abs(state.omega)))
    return total


def _val_objective(state, xs_val, y_val, cfg: EncoderConfig) -> float:
    preds = _layer_predictions(state.weights, state.biases, xs_val)
    r = np.zeros_like(y_val)
    for omega_l, pred_l in zip(state.omega, preds):
        r += omega_l * pred_l
    r -= y_val
    return float(np.sum(r * r))


def _zscore_stats(xs):
    stats = []
    for x in xs:
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        sd = np.where(sd < 1e-12, 1.0, sd)
        stats.append((mu, sd))
    return stats


def fit(
    xs_train,
    y_train,
    xs_val,
    y_val,
    config: EncoderConfig,
    region: str = "",
) -> tuple[EncoderModel, FitReport]:
    """Train one region's encoder; returns the best-validation-epoch model.

    Deterministic: no randomness is consumed, so identical inputs and config
    always reproduce the same model and report.
    """
    xs_train, y_train = _check_batch(xs_train, y_train)
    xs_val, y_val = _check_batch(xs_val, y_val)
    if len(xs_train) != len(xs_val):
        raise DimensionError("train and validation layer counts differ")
    for l, (a, b) in enumerate(zip(xs_train, xs_val)):
        if a.shape[1] != b.shape[1]:
            raise DimensionError(f"layer {l}: train dim {a.shape[1]} != val dim {b.shape[1]}")
    if y_train.shape[1] != y_val.shape[1]:
        raise DimensionError("train and validation voxel counts differ")

    if config.zscore_features:
        stats = _zscore_stats(xs_train)
        xs_train = [(x - mu) / sd for x, (mu, sd) in zip(xs_train, stats)]
        xs_val = [(x - mu) / sd for x, (mu, sd) in zip(xs_val, stats)]

    dims = [x.shape[1] for x in xs_train]
    num_voxels = y_train.shape[1]
    num_layers = len(xs_train)

    def fresh_state():
        return _TrainState(dims, num_voxels, num_layers, config.freeze_omega)

    init_loss = _objective(fresh_state(), xs_train, y_train, config)

    def probe(step: float) -> float:
        state = fresh_state()
        _epoch_update(state, xs_train, y_train, config, step)
        return _objective(state, xs_train, y_train, config)

    step = choose_step_size(init_loss, probe, config.step_candidates)

    restarts = 0
    while True:
        state = fresh_state()
        stopper = EarlyStopper(config.patience)
        train_losses = [init_loss]
        val_losses = [_val_objective(state, xs_val, y_val, config)]
        stopper.update(0, val_losses[0])
        best = state.snapshot()
        diverged_at = None
        for epoch in range(1, config.max_epochs + 1):
            _epoch_update(state, xs_train, y_train, config, step)
            train_obj = _objective(state, xs_train, y_train, config)
            if not np.isfinite(train_obj) or train_obj > 1e6 * max(init_loss, 1.0):
                diverged_at = epoch
                break
            val_obj = _val_objective(state, xs_val, y_val, config)
            train_losses.append(train_obj)
            val_losses.append(val_obj)
            if stopper.update(epoch, val_obj):
                best = state.snapshot()
            if stopper.should_stop:
                break
        if diverged_at is None:
            break
        # A probe epoch can look fine while a top eigenmode slowly blows up;
        # retry the whole run with a smaller fixed step.
        restarts += 1
        if restarts > MAX_RESTARTS:
            raise DivergenceError(
                "training diverged at every attempted step size",
                epoch=diverged_at,
                beta1=config.beta1,
                beta2=config.beta2,
                step=step,
            )
        step /= 10.0

    weights, biases, omega = best
    if config.zscore_features:
        # Fold the standardization into the parameters so the stored model
        # applies directly to raw features.
        for l, (mu, sd) in enumerate(stats):
            folded = weights[l] / sd
            biases[l] = biases[l] - folded @ mu
            weights[l] = folded
    model = EncoderModel(
        region=region,
        weights=weights,
        biases=biases,
        omega=omega,
        meta={
            "beta1": config.beta1,
            "beta2": config.beta2,
            "step_size": step,
            "epochs_run": len(train_losses) - 1,
            "best_val_loss": stopper.best_loss,
        },
    )
    report = FitReport(
        beta1=config.beta1,
        beta2=config.beta2,
        step_size=step,
        train_loss=train_losses,
        val_loss=val_losses,
        selected_epoch=stopper.best_epoch,
        epochs_run=len(train_losses) - 1,
        omega=[float(v) for v in omega],
        restarts=restarts,
        region=region,
    )
    return model, report


# ---------------------------------------------------------------------------
# Closed-form oracle and hyperparameter search


def ridge_oracle(x, y, lam: float) -> np.ndarray:
    """Closed-form ridge weights for the single-layer, no-bias special case.

    Solves min_W ||Y - X W^T||_F^2 + lam ||W||_F^2; requires lam > 0 unless
    X has full column rank.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    gram = x.T @ x + lam * np.eye(x.shape[1])
    try:
        wt = np.linalg.solve(gram, x.T @ y)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular system (lam={lam}): {exc}") from exc
    return wt.T


@dataclass(frozen=True)
class HyperGrid:
    """Grid-search candidates and the tuning protocol parameters."""

    beta1: tuple[float, ...] = (0.1, 1.0, 10.0)
    beta2: tuple[float, ...] = (1.0, 10.0, 100.0)
    folds: int = 2
    subject: str = ""

    def __post_init__(self):
        if not self.beta1 or not self.beta2:
            raise ValueError("hyperparameter candidate sets must be nonempty")
        if self.folds < 2:
            raise ValueError("tuning needs at least 2 folds")


@dataclass(frozen=True)
class TuneResult:
    beta1: float
    beta2: float
    scores: dict


def select_best(scores: dict, tie_tol: float = 1e-3) -> tuple[float, float]:
    """Argmax over grid cells with stronger regularization preferred on ties.

    Cells scoring within ``tie_tol`` of the best count as tied, and the
    lexicographically largest (beta1, beta2) among them wins. Early-stopped
    descent makes penalty strengths nearly score-equivalent on many
    instances, so a strict float argmax would reduce the tie rule to dead
    code; the tolerance gives "prefer stronger regularization" its intended
    force.
    """
    if not scores:
        raise ValueError("empty score table")
    best = max(scores.values())
    tied = [cell for cell, v in scores.items() if v >= best - tie_tol]
    return max(tied)


def tune(
    grid: HyperGrid,
    xs,
    ys_by_region: dict[str, np.ndarray],
    seed: int,
    base_config: EncoderConfig = EncoderConfig(),
) -> TuneResult:
    """Cross-validated grid search on one subject's training data.

    Scores each (beta1, beta2) cell by the mean validation Pearson over the
    tuning folds and all regions, using the fold's validation half both for
    early stopping and for scoring. A cell whose model collapses to constant
    predictions (strong L1 can zero every layer weight) counts as chance
    level 0 rather than failing the search.
    """
    xs, _ = _check_batch(xs)
    n = xs[0].shape[0]
    if n < 2 * grid.folds:
        raise DimensionError(f"{n} videos cannot support {grid.folds}-fold tuning")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    parts = np.array_split(order, grid.folds)
    scores: dict[tuple[float, float], float] = {}
    for beta1, beta2 in itertools.product(grid.beta1, grid.beta2):
        cfg = replace(base_config, beta1=float(beta1), beta2=float(beta2))
        cell = []
        for f in range(grid.folds):
            val_idx = parts[f]
            train_idx = np.concatenate([parts[g] for g in range(grid.folds) if g != f])
            xs_tr = [x[train_idx] for x in xs]
            xs_va = [x[val_idx] for x in xs]
            for region, y in ys_by_region.items():
                model, _ = fit(xs_tr, y[train_idx], xs_va, y[val_idx], cfg, region=region)
                try:
                    cell.append(region_score(predict(model, xs_va), y[val_idx]).r)
                except NumericalError:
                    cell.append(0.0)
        scores[(float(beta1), float(beta2))] = float(np.mean(cell))
    beta1, beta2 = select_best(scores)
    return TuneResult(beta1=beta1, beta2=beta2, scores=scores)


# ---------------------------------------------------------------------------
# Checkpoints (same binary conventions as the feature store)


_CKPT_HEADER = struct.Struct("<4sIII")
_CKPT_MAGIC = b"NENC"


def _write_block(f, array):
    a = np.ascontiguousarray(np.asarray(array, dtype=np.float64), dtype="<f4")
    if a.ndim == 1:
        a = a.reshape(1, -1)
    f.write(_CKPT_HEADER.pack(_CKPT_MAGIC, 1, a.shape[0], a.shape[1]))
    f.write(a.tobytes())


def _read_block(f, path):
    head = f.read(_CKPT_HEADER.size)
    if len(head) < _CKPT_HEADER.size:
        raise FormatError(f"{path}: truncated checkpoint block header")
    magic, version, rows, cols = _CKPT_HEADER.unpack(head)
    if magic != _CKPT_MAGIC or version != 1:
        raise FormatError(f"{path}: bad checkpoint block header")
    raw = f.read(rows * cols * 4)
    if len(raw) != rows * cols * 4:
        raise FormatError(f"{path}: truncated checkpoint block data")
    return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)


def save_model(model: EncoderModel, path) -> None:
    """Write a checkpoint: per-layer W and b blocks, then the omega block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_CKPT_HEADER.pack(_CKPT_MAGIC, 1, model.num_layers, 1))
        for w, b in zip(model.weights, model.biases):
            _write_block(f, w)
            _write_block(f, b)
        _write_block(f, model.omega)
    sidecar = {
        "kind": "encoder",
        "region": model.region,
        "meta": model.meta,
        "layer_dims": [int(w.shape[1]) for w in model.weights],
        "voxels": int(model.num_voxels),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def load_model(path) -> EncoderModel:
    path = Path(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"missing checkpoint sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text())
    with open(path, "rb") as f:
        head = f.read(_CKPT_HEADER.size)
        if len(head) < _CKPT_HEADER.size:
            raise FormatError(f"{path}: truncated checkpoint header")
        magic, version, num_layers, _flags = _CKPT_HEADER.unpack(head)
        if magic != _CKPT_MAGIC or version != 1:
            raise FormatError(f"{path}: bad checkpoint header")
        weights, biases = [], []
        for _ in range(num_layers):
            weights.append(_read_block(f, path))
            biases.append(_read_block(f, path).ravel())
        omega = _read_block(f, path).ravel()
    return EncoderModel(
        region=sidecar.get("region", ""),
        weights=weights,
        biases=biases,
        omega=omega,
        meta=sidecar.get("meta", {}),
    )
