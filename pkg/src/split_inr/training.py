"""Losses, Adam, PSNR and the generic training loop."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .core_math import Prng
from .network import NetworkParams, NetworkSpec, backward, forward, init_network

PSNR_CAP = 99.0
BCE_EPS = 1e-7


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def bce_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("bce targets must be 0 or 1")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    loss = -np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p))
    inside = (pred >= BCE_EPS) & (pred <= 1.0 - BCE_EPS)
    grad = (-(target / p) + (1.0 - target) / (1.0 - p)) / p.size
    return float(loss), np.where(inside, grad, 0.0)


def psnr(pred, gt, peak: float = 1.0, clip: bool = False) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if clip:
        pred = np.clip(pred, 0.0, 1.0)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


@dataclass
class AdamState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list, grads: list) -> list:
    """Update ``params`` (a list of arrays) in place and return it."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at Adam step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.learning_rate == 0.0:
            continue
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 1e-3
    batch_size: int = 0
    seed: int = 0
    lr_schedule: str = "constant"  # "constant" | "exponential"
    final_ratio: float = 0.1
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.lr_schedule not in ("constant", "exponential"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, it: int) -> float:
        if self.lr_schedule == "constant" or self.iterations == 1:
            return self.learning_rate
        return self.learning_rate * self.final_ratio ** (it / (self.iterations - 1))


@dataclass
class MetricRecord:
    iteration: int
    loss: float
    metric: float
    wall_ms: float


class TaskBinding(Protocol):
    """What :func:`train` needs from a task.

    ``batch(it, prng)`` returns ``(coords, target)`` for one iteration; ``target``
    may be ``None`` when the loss is defined over the full grid. ``loss(pred,
    target)`` returns ``(loss, d_pred)``; ``metric(spec, params)`` scores a
    snapshot (PSNR, chamfer, ...).
    """

    def batch(self, it: int, prng: Prng): ...

    def loss(self, pred, target): ...

    def metric(self, spec: NetworkSpec, params: NetworkParams) -> float: ...


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, last_finite: int):
        super().__init__(f"loss became non-finite at iteration {iteration}; last finite iteration {last_finite}")
        self.iteration = iteration
        self.last_finite = last_finite


def train(task: TaskBinding, spec: NetworkSpec, cfg: TrainConfig,
          params: NetworkParams | None = None,
          callback: Callable[[MetricRecord], None] | None = None):
    """Fit ``spec`` to ``task`` with Adam; returns ``(params, history)``.

    Weights come from ``seed``, batch sampling from ``seed + 1``.
    """
    if params is None:
        params = init_network(spec, cfg.seed)
    prng = Prng(cfg.seed + 1)
    state = AdamState(cfg.learning_rate)
    history: list[MetricRecord] = []
    start = time.perf_counter()
    last_finite = -1
    arrays = params.arrays()
    for it in range(cfg.iterations):
        coords, target = task.batch(it, prng)
        pred, cache = forward(spec, params, coords)
        loss, d_pred = task.loss(pred, target)
        if not math.isfinite(loss):
            raise TrainingDiverged(it, last_finite)
        last_finite = it
        grads, _ = backward(spec, params, cache, d_pred)
        state.learning_rate = cfg.lr_at(it)
        adam_step(state, arrays, grads.arrays())
        last = it == cfg.iterations - 1
        if last or (cfg.log_every and it % cfg.log_every == 0):
            rec = MetricRecord(it, loss, task.metric(spec, params), (time.perf_counter() - start) * 1e3)
            history.append(rec)
            if callback:
                callback(rec)
    return params, history


def write_history_csv(path, history: list[MetricRecord], include_wall: bool = True) -> None:
    """CSV ``iteration,loss,metric,wall_ms``; floats use 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "metric", "wall_ms"])
        for r in history:
            w.writerow([r.iteration, f"{r.loss:.17g}", f"{r.metric:.17g}",
                        f"{r.wall_ms:.3f}" if include_wall else ""])
