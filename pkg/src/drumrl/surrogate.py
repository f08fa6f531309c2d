"""Per-burnup-step MLP surrogates of the core response, with random architecture search."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn, oracle
from .dataset import DatasetSplit, to_arrays
from .oracle import BurnupStep, CoreResponse

log = logging.getLogger(__name__)

N_OUT = oracle.N_HEXANTS + 1
# target scaling: y_scaled = (y - offset) * scale, first column k_eff then p1..p6
OUTPUT_OFFSET = np.array([1.0] + [1.0 / 6.0] * 6)
OUTPUT_SCALE = np.array([100.0] + [50.0] * 6)
POWER_FLOOR = 1e-9


class SurrogateLoadError(ValueError):
    pass


@dataclass
class SurrogateConfig:
    n_hidden_layers: int = 5
    nodes_per_layer: int = 150
    learning_rate: float = 3e-3
    max_epochs: int = 2000
    batch_size: int = 64
    patience: int = 50

    def __post_init__(self):
        if self.n_hidden_layers < 1 or self.nodes_per_layer < 1:
            raise ValueError("need at least one hidden layer with one node")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def layer_sizes(self) -> list[int]:
        return [oracle.N_HEXANTS] + [self.nodes_per_layer] * self.n_hidden_layers + [N_OUT]


@dataclass
class SurrogateMetrics:
    k_mae: float  # pcm
    k_r2: float
    p_mae: float
    p_r2: float

    def as_row(self) -> list[float]:
        return [self.k_mae, self.k_r2, self.p_mae, self.p_r2]


@dataclass
class SurrogateModel:
    mlp: nn.Mlp
    step: BurnupStep
    input_offset: float = 1.0
    input_scale: float = 1.0 / 90.0
    output_offset: np.ndarray = field(default_factory=lambda: OUTPUT_OFFSET.copy())
    output_scale: np.ndarray = field(default_factory=lambda: OUTPUT_SCALE.copy())
    metadata: dict = field(default_factory=dict)

    def scale_inputs(self, angles) -> np.ndarray:
        return np.asarray(angles, dtype=np.float64) * self.input_scale - self.input_offset

    def raw_predict(self, angles) -> np.ndarray:
        """Unscaled network outputs ``(k_eff, p1..p6)`` for a batch of angle rows."""
        out = nn.forward(self.mlp, self.scale_inputs(angles))
        return out / self.output_scale + self.output_offset


@dataclass
class TrialResult:
    config: SurrogateConfig
    val_mse: float


def _scaled_targets(y) -> np.ndarray:
    return (y - OUTPUT_OFFSET) * OUTPUT_SCALE


def _mse(mlp, x, y) -> float:
    d = nn.forward(mlp, x) - y
    return float(np.mean(d * d))


def train(split: DatasetSplit, config: SurrogateConfig, seed: int = 0,
          step=None) -> tuple[SurrogateModel, SurrogateMetrics]:
    """Fit the 7-output MSE regression; returns the best-on-validation checkpoint."""
    if not split.train or not split.validation:
        raise ValueError("train and validation sets must be non-empty")
    step = BurnupStep.parse(step if step is not None else split.train[0].step)
    model = SurrogateModel(nn.init_mlp(config.layer_sizes(), "relu", seed), step)
    xa, ya = to_arrays(split.train)
    xv, yv = to_arrays(split.validation)
    x_tr, y_tr = model.scale_inputs(xa), _scaled_targets(ya)
    x_va, y_va = model.scale_inputs(xv), _scaled_targets(yv)

    mlp = model.mlp
    params = mlp.params
    opt = nn.AdamState.for_params(params, config.learning_rate)
    rng = np.random.default_rng(seed)
    n = len(x_tr)
    initial_train = _mse(mlp, x_tr, y_tr)
    best_mse, best, since_best = math.inf, mlp.copy(), 0
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, cache = nn.forward(mlp, x_tr[idx], return_cache=True)
            grad_out = 2.0 * (out - y_tr[idx]) / out.size
            grads = nn.backward(mlp, grad_out, cache)
            nn.adam_step(params, grads, opt)
        val = _mse(mlp, x_va, y_va)
        if not math.isfinite(val):
            raise nn.TrainingError(f"validation loss diverged at epoch {epoch}")
        history.append(val)
        if val < best_mse:
            best_mse, best, since_best = val, mlp.copy(), 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    model.mlp = best
    model.metadata = {
        "step": step.name,
        "config": asdict(config),
        "seed": seed,
        "split_seed": split.seed,
        "epochs_run": len(history),
        "best_val_mse": best_mse,
        "initial_train_mse": initial_train,
        "final_train_mse": _mse(best, x_tr, y_tr),
        "group_ids": {name: split.group_ids(name) for name in ("train", "validation", "test")},
    }
    return model, evaluate(model, split.validation)


def sample_search_config(rng: np.random.Generator, max_epochs: int, patience: int) -> SurrogateConfig:
    return SurrogateConfig(
        n_hidden_layers=int(rng.integers(2, 9)),
        nodes_per_layer=int(rng.integers(50, 257)),
        learning_rate=float(10 ** rng.uniform(-4, -2)),
        max_epochs=max_epochs,
        patience=patience,
    )


def search(split: DatasetSplit, n_trials: int = 30, seed: int = 0,
           trial_epochs: int = 150, trial_patience: int = 25,
           trials: list | None = None) -> SurrogateConfig:
    """Seeded random search over depth, width and learning rate.

    Each trial trains for at most ``trial_epochs``; the winner is the trial
    with the lowest validation MSE. Pass a list as ``trials`` to receive
    every :class:`TrialResult`.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for i in range(n_trials):
        cfg = sample_search_config(rng, trial_epochs, trial_patience)
        try:
            model, _ = train(split, cfg, seed=seed + 1 + i)
            mse = model.metadata["best_val_mse"]
        except nn.TrainingError:
            mse = math.inf
        log.info("trial %d/%d layers=%d nodes=%d lr=%.2e val_mse=%.3e", i + 1, n_trials,
                 cfg.n_hidden_layers, cfg.nodes_per_layer, cfg.learning_rate, mse)
        results.append(TrialResult(cfg, mse))
    if trials is not None:
        trials.extend(results)
    best = min(results, key=lambda r: r.val_mse)
    if not math.isfinite(best.val_mse):
        raise nn.TrainingError("every search trial diverged")
    return best.config


def _r2(y, yhat) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def metrics_from_arrays(y, yhat) -> SurrogateMetrics:
    """Metrics from ``(n, 7)`` arrays of true and predicted ``(k_eff, p1..p6)``."""
    k_mae = float(np.mean(np.abs(y[:, 0] - yhat[:, 0]))) * 1e5
    p_mae = float(np.mean([np.mean(np.abs(y[:, j] - yhat[:, j])) for j in range(1, N_OUT)]))
    p_r2 = float(np.mean([_r2(y[:, j], yhat[:, j]) for j in range(1, N_OUT)]))
    return SurrogateMetrics(k_mae, _r2(y[:, 0], yhat[:, 0]), p_mae, p_r2)


def evaluate(model: SurrogateModel, samples) -> SurrogateMetrics:
    if not samples:
        raise ValueError("cannot evaluate on an empty set")
    x, y = to_arrays(samples)
    return metrics_from_arrays(y, postprocess(model.raw_predict(x)))


def postprocess(raw) -> np.ndarray:
    """Clamp powers to a small floor and renormalise each row to sum 1."""
    raw = np.array(raw, dtype=np.float64, copy=True)
    squeeze = raw.ndim == 1
    raw = np.atleast_2d(raw)
    p = np.maximum(raw[:, 1:], POWER_FLOOR)
    raw[:, 1:] = p / p.sum(axis=1, keepdims=True)
    return raw[0] if squeeze else raw


def predict(model: SurrogateModel, config) -> CoreResponse:
    cfg = oracle.check_config(config)
    out = postprocess(model.raw_predict(np.array(cfg, dtype=np.float64)))
    return CoreResponse(float(out[0]), tuple(float(p) for p in out[1:]))


# -- persistence ------------------------------------------------------------------

def model_path(directory, step) -> Path:
    return Path(directory) / f"surrogate_{BurnupStep.parse(step).tag}"


def save_model(model: SurrogateModel, path, extra: dict | None = None) -> None:
    meta = dict(model.metadata)
    meta.update(extra or {})
    meta.update({
        "kind": "surrogate",
        "burnup": model.step.name,
        "input_offset": model.input_offset,
        "input_scale": model.input_scale,
        "output_offset": [float(v) for v in model.output_offset],
        "output_scale": [float(v) for v in model.output_scale],
    })
    nn.save_mlp(path, model.mlp, meta)


def load_model(path, step=None) -> SurrogateModel:
    """Load a surrogate; ``step`` (if given) must match the stored burnup tag."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"surrogate model not found: {path}")
    mlp = nn.load_mlp(path)
    meta = nn.load_metadata(path)
    if meta.get("kind") != "surrogate":
        raise SurrogateLoadError(f"{path}: metadata sidecar missing or not a surrogate")
    stored = BurnupStep.parse(meta["burnup"])
    if step is not None and BurnupStep.parse(step) is not stored:
        raise SurrogateLoadError(f"{path}: model is for {stored.name}, "
                                 f"requested {BurnupStep.parse(step).name}")
    if mlp.layer_sizes[0] != oracle.N_HEXANTS or mlp.layer_sizes[-1] != N_OUT:
        raise SurrogateLoadError(f"{path}: layer sizes {mlp.layer_sizes} are not 6 -> 7")
    return SurrogateModel(mlp, stored, float(meta["input_offset"]), float(meta["input_scale"]),
                          np.array(meta["output_offset"]), np.array(meta["output_scale"]), meta)


def load_all(directory) -> dict[BurnupStep, SurrogateModel]:
    return {s: load_model(model_path(directory, s), s) for s in BurnupStep}
