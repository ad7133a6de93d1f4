"""Loss, Adam, plateau schedule, normalization and the training/evaluation loop."""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import PoseSample, bone_lengths, split_indices, stack_samples
from .linalg import PoleError
from .metrics import EvalReport, evaluate
from .mobius import DegenerateFilterError, MobiusNetwork, network_forward
from .skeleton import SkeletonTopology

DEGENERATE_BONE_MM = 1e-9


class TrainingError(RuntimeError):
    pass


class DegeneratePoseError(ValueError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    decay_factor: float = 0.5
    plateau_patience: int = 5
    plateau_threshold: float = 1e-3
    min_lr: float = 1e-6
    max_epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.1
    output_scale: float = 1000.0
    keep_best: bool = True  # restore the parameters of the lowest validation loss

    def __post_init__(self):
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.output_scale <= 0:
            raise ValueError("output_scale must be positive")


def deterministic_mode() -> bool:
    return os.environ.get("MOBIUS_DETERMINISTIC", "") not in ("", "0")


@contextlib.contextmanager
def compute_context(single_thread: bool | None = None):
    """Pin BLAS to one thread when determinism is requested."""
    if single_thread is None:
        single_thread = deterministic_mode()
    if not single_thread:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------- loss / optimizer

def mse_loss(pred, target) -> float:
    """Squared joint error summed over joints and coordinates, averaged over the batch."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    sq = (pred - target) ** 2
    if sq.ndim == 2:
        return float(sq.sum())
    return float(sq.reshape(sq.shape[0], -1).sum(axis=1).mean())


def mse_loss_var(pred: ad.Var, target) -> ad.Var:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    sq = ad.total(ad.square(pred - target))
    return ad.scale(sq, 1.0 / pred.shape[0]) if pred.value.ndim == 3 else sq


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam, updating ``params`` and ``state`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and moments must have equal length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a
    relative improvement of ``threshold`` over the best loss so far."""

    def __init__(self, lr, factor=0.5, patience=5, threshold=1e-3, min_lr=0.0):
        self.lr = float(lr)
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, loss: float) -> float:
        if loss < self.best * (1.0 - self.threshold) or not np.isfinite(self.best):
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.bad_epochs = 0
        return self.lr

    def state(self) -> dict:
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}


def plateau_scheduler(history, config: TrainConfig, lr: float | None = None) -> float:
    """Learning rate after replaying a validation-loss history through the schedule."""
    if len(history) == 0:
        raise ValueError("history must be non-empty")
    sched = PlateauScheduler(
        config.learning_rate if lr is None else lr,
        config.decay_factor, config.plateau_patience, config.plateau_threshold, config.min_lr,
    )
    for loss in history:
        sched.step(float(loss))
    return sched.lr


# ---------------------------------------------------------------- geometry

def center_on_root(joints3d, root_index: int) -> np.ndarray:
    p = np.asarray(joints3d, dtype=np.float64)
    return p - p[..., root_index:root_index + 1, :]


def calibrate_bone_scale(pred, canonical_lengths, topo: SkeletonTopology) -> np.ndarray:
    """Rescale root-relative poses so their total bone length matches the canonical total."""
    pred = np.asarray(pred, dtype=np.float64)
    totals = bone_lengths(pred, topo).sum(axis=-1)
    if np.any(totals < DEGENERATE_BONE_MM):
        raise DegeneratePoseError("predicted pose has (near) zero total bone length")
    s = float(np.sum(canonical_lengths)) / totals
    return pred * np.asarray(s)[..., None, None]


@dataclass
class NormalizationStats:
    input_offset: np.ndarray  # (2,) pixels
    input_scale: float  # pixels per unit
    output_scale: float  # mm per unit
    bone_lengths: np.ndarray  # (E,) mm

    def __post_init__(self):
        self.input_offset = np.asarray(self.input_offset, dtype=np.float64).reshape(2)
        self.bone_lengths = np.asarray(self.bone_lengths, dtype=np.float64)
        if not self.input_scale > 0 or not self.output_scale > 0:
            raise ValueError("scales must be positive")
        if np.any(self.bone_lengths <= 0):
            raise ValueError("canonical bone lengths must be positive")

    @classmethod
    def fit(cls, samples, topo: SkeletonTopology, output_scale: float = 1000.0) -> "NormalizationStats":
        """Map the 2D bounding range of ``samples`` onto [-1, 1] (one scale for both axes)."""
        j2, j3 = stack_samples(samples)
        lo = j2.reshape(-1, 2).min(axis=0)
        hi = j2.reshape(-1, 2).max(axis=0)
        scale = float(np.max(hi - lo) / 2.0) or 1.0
        return cls((lo + hi) / 2.0, scale, output_scale, bone_lengths(j3, topo).mean(axis=0))

    def normalize_input(self, joints2d) -> np.ndarray:
        return (np.asarray(joints2d, dtype=np.float64) - self.input_offset) / self.input_scale

    def denormalize_input(self, x) -> np.ndarray:
        return np.asarray(x) * self.input_scale + self.input_offset

    def normalize_target(self, joints3d, root_index: int) -> np.ndarray:
        return center_on_root(joints3d, root_index) / self.output_scale


# ---------------------------------------------------------------- loop

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.train_loss:.17g},{self.val_loss:.17g},{self.lr:.17g}"


METRICS_HEADER = "epoch,train_loss,val_loss,lr"


@dataclass
class TrainResult:
    net: MobiusNetwork
    stats: NormalizationStats
    history: list[EpochRecord] = field(default_factory=list)
    train_indices: np.ndarray | None = None
    val_indices: np.ndarray | None = None

    def metrics_csv(self) -> str:
        return "\n".join([METRICS_HEADER] + [r.csv() for r in self.history]) + "\n"


def _loss_and_grads(net: MobiusNetwork, x, y):
    tape = ad.Tape()
    bound = net.bind(tape)
    pred = net.forward_on_tape(tape, bound, x)
    loss = mse_loss_var(pred, y)
    grads = ad.backward(loss)
    leaves = [v for blk in bound for v in blk.leaves()]
    return float(loss.value), [grads[v] for v in leaves]


def _dataset_loss(net: MobiusNetwork, x, y, chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, len(x), chunk):
        pred = network_forward(net, x[start:start + chunk])
        total += mse_loss(pred, y[start:start + chunk]) * len(pred)
    return total / len(x)


def train(
    net: MobiusNetwork,
    samples: list[PoseSample],
    config: TrainConfig,
    log=None,
    progress=None,
) -> TrainResult:
    """Mini-batch Adam on MSE with a plateau schedule; no augmentation.

    ``net`` is updated in place. ``log`` (optional file-like) receives the
    metrics CSV as it is produced; ``progress(record)`` is called per epoch.
    """
    if not samples:
        raise ValueError("dataset is empty")
    topo = net.topology
    train_idx, val_idx = split_indices(len(samples), config.val_fraction, config.seed)
    train_samples = [samples[i] for i in train_idx]
    stats = NormalizationStats.fit(train_samples, topo, config.output_scale)
    j2, j3 = stack_samples(samples)
    x_all = stats.normalize_input(j2)
    y_all = stats.normalize_target(j3, topo.root_index)
    x_tr, y_tr = x_all[train_idx], y_all[train_idx]
    if len(val_idx):
        x_val, y_val = x_all[val_idx], y_all[val_idx]
    else:
        x_val, y_val = x_tr, y_tr

    result = TrainResult(net, stats, [], train_idx, val_idx)
    params = net.parameters()
    state = AdamState.fresh(params)
    sched = PlateauScheduler(
        config.learning_rate, config.decay_factor, config.plateau_patience,
        config.plateau_threshold, config.min_lr,
    )
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(1,)))
    best_loss, best_params = np.inf, None
    if log is not None:
        log.write(METRICS_HEADER + "\n")

    with compute_context():
        for epoch in range(1, config.max_epochs + 1):
            lr = sched.lr
            order = shuffle_rng.permutation(len(x_tr))
            running = 0.0
            for b, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start:start + config.batch_size]
                try:
                    with np.errstate(over="raise", invalid="raise", divide="raise"):
                        loss, grads = _loss_and_grads(net, x_tr[idx], y_tr[idx])
                except (PoleError, DegenerateFilterError, FloatingPointError) as exc:
                    raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
                if not np.isfinite(loss):
                    raise TrainingError(f"epoch {epoch}, batch {b}: non-finite loss")
                adam_step(params, grads, state, lr)
                running += loss * len(idx)
            val_loss = _dataset_loss(net, x_val, y_val)
            record = EpochRecord(epoch, running / len(x_tr), val_loss, lr)
            result.history.append(record)
            sched.step(val_loss)
            if config.keep_best and val_loss < best_loss:
                best_loss, best_params = val_loss, [p.copy() for p in params]
            if log is not None:
                log.write(record.csv() + "\n")
            if progress is not None:
                progress(record)
    if best_params is not None:
        for p, best in zip(params, best_params):
            p[...] = best
    return result


def predict_mm(net: MobiusNetwork, stats: NormalizationStats, joints2d, calibrate: bool = True) -> np.ndarray:
    """Root-relative millimetre predictions for (B, N, 2) pixel inputs."""
    x = stats.normalize_input(joints2d)
    pred = network_forward(net, x) * stats.output_scale
    pred = center_on_root(pred, net.topology.root_index)
    if calibrate:
        pred = calibrate_bone_scale(pred, stats.bone_lengths, net.topology)
    return pred


def evaluate_model(net, stats, samples, calibrate: bool = True) -> EvalReport:
    j2, j3 = stack_samples(samples)
    pred = predict_mm(net, stats, j2, calibrate=calibrate)
    return evaluate(pred, j3, net.topology.root_index)


def mean_pose_baseline(train_samples, test_samples, root_index: int) -> EvalReport:
    """Predict the mean root-relative training pose for every test sample."""
    _, j3_tr = stack_samples(train_samples)
    _, j3_te = stack_samples(test_samples)
    mean_pose = center_on_root(j3_tr, root_index).mean(axis=0)
    return evaluate(np.broadcast_to(mean_pose, j3_te.shape), j3_te, root_index)
