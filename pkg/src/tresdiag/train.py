"""Minibatch Adam training with a windowed relative-change stopping rule.

One *iteration* is one pass over the whole training split, which is the
unit the convergence comparison counts.  The loss logged per iteration is
the mean over that epoch's minibatches of the summed minibatch loss
(classification cross-entropy plus squared size error).
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .datagen import Dataset, TransientCase
from .errors import ConfigError, NumericError, ValidationError
from .model import (TrainedModel, forward_batch, loss_classification, loss_regression,
                    loss_total, one_hot, stack_cases)
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    batch_size: int = 16
    max_iterations: int = 2000
    window: int = 10
    threshold: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.batch_size < 1 or self.max_iterations < 1 or self.window < 1:
            raise ConfigError("batch_size, max_iterations and window must be >= 1")
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def to_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        return cls({k: np.array(a, dtype=float) for k, a in d["m"].items()},
                   {k: np.array(a, dtype=float) for k, a in d["v"].items()}, int(d["t"]))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    new_params, m_new, v_new = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = theta - config.alpha * m_hat / (np.sqrt(v_hat) + config.epsilon)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(m_new, v_new, t)


def should_terminate(loss_history: Sequence[float], window: int = 10, threshold: float = 0.05) -> bool:
    """True once every one of the last ``window`` losses lies within ``threshold``
    relative distance of the most recent one."""
    if len(loss_history) == 0:
        raise ValueError("loss history is empty")
    if len(loss_history) < window:
        return False
    last = float(loss_history[-1])
    if last == 0.0:
        return True
    recent = np.asarray(loss_history[-window:], dtype=float)
    return bool(np.max(np.abs(recent - last)) / abs(last) < threshold)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    loss_cl: float
    loss_re: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[IterationRecord] = field(default_factory=list)
    final_iteration: int = 0
    termination: str = ""

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def to_jsonl(self) -> str:
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"final_iteration": self.final_iteration,
                                 "termination": self.termination}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_jsonl())
        return path

    @classmethod
    def load(cls, path) -> TrainLog:
        out = cls()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                if "iteration" in d:
                    out.records.append(IterationRecord(**d))
                else:
                    out.final_iteration = int(d["final_iteration"])
                    out.termination = d["termination"]
        if not out.final_iteration:
            out.final_iteration = len(out.records)
        return out


def normalization_stats(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population std over (cases, time) of an (N, P, T) array."""
    mean = values.mean(axis=(0, 2))
    std = values.std(axis=(0, 2))
    return mean, np.maximum(std, 1e-8)


def batch_loss(model: TrainedModel, values: np.ndarray, labels: np.ndarray, sizes: np.ndarray,
               training: bool, rng: Rng | None = None):
    """Taped loss of one minibatch; returns (graph, total, cl, re)."""
    res = forward_batch(model, values, training=training, rng=rng, record=True)
    cl = loss_classification(res.logits, one_hot(labels, model.arch.num_classes))
    re = loss_regression(res.size, sizes)
    return res.graph, loss_total(cl, re), cl, re


def _targets(cases: Sequence[TransientCase]) -> tuple[np.ndarray, np.ndarray]:
    labels = np.array([c.label.class_index for c in cases], dtype=int)
    sizes = np.array([c.label.diameter for c in cases], dtype=float)
    return labels, sizes


def epoch_batches(n: int, batch_size: int, rng: Rng) -> list[np.ndarray]:
    """Shuffled minibatch index sets covering 0..n-1 exactly once (last one may be short)."""
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


class Trainer:
    """Stateful training loop; ``step`` and ``run_epoch`` are exposed for resumption tests."""

    def __init__(self, model: TrainedModel, cases: Sequence[TransientCase], config: TrainConfig,
                 state: AdamState | None = None):
        config.validate()
        self.model = model
        self.config = config
        self.values = stack_cases(model, cases)
        self.labels, self.sizes = _targets(cases)
        self.state = state or AdamState.zeros_like(model.weights)
        root = Rng(config.seed)
        self.shuffle_rng = root.child("shuffle")
        self.dropout_rng = root.child("dropout")

    def step(self, idx: np.ndarray, dropout_rng: Rng) -> tuple[float, float, float]:
        graph, total, cl, re = batch_loss(self.model, self.values[idx], self.labels[idx],
                                          self.sizes[idx], True, dropout_rng)
        if not math.isfinite(total.item()):
            raise NumericError(f"loss became {total.item()} at Adam step {self.state.t + 1}",
                               last_good=self.model.copy())
        grads = nx.backward(graph, total)
        weights, self.state = adam_step(self.model.weights, grads, self.state, self.config)
        self.model.weights = weights
        return total.item(), cl.item(), re.item()

    def run_epoch(self, epoch: int) -> tuple[float, float, float]:
        batches = epoch_batches(len(self.values), self.config.batch_size, self.shuffle_rng.child(epoch))
        drop = self.dropout_rng.child(epoch)
        acc = np.zeros(3)
        for b, idx in enumerate(batches):
            acc += self.step(idx, drop.child(b))
        acc /= len(batches)
        return float(acc[0]), float(acc[1]), float(acc[2])


def train(model: TrainedModel, dataset: Dataset | Sequence[TransientCase], config: TrainConfig,
          progress: bool = False) -> tuple[TrainedModel, TrainLog]:
    """Fit ``model`` on the training split; normalization stats come from that split."""
    config.validate()
    cases = dataset.train_cases if isinstance(dataset, Dataset) else list(dataset)
    if not cases:
        raise ValidationError("no training cases")
    missing = [c for c in model.channels if c not in cases[0].names]
    if missing:
        raise ValidationError(f"dataset lacks model channels {missing}")
    model = model.copy()
    mean, std = normalization_stats(stack_cases(model, cases))
    model = model.with_norm_stats(mean, std)
    trainer = Trainer(model, cases, config)
    tlog = TrainLog()
    start = time.perf_counter()
    reason = "max_iterations"
    for it in range(1, config.max_iterations + 1):
        loss, cl, re = trainer.run_epoch(it)
        tlog.records.append(IterationRecord(it, loss, cl, re, time.perf_counter() - start))
        if progress:
            log.info("iteration %d loss %.5f (cl %.5f, re %.5f)", it, loss, cl, re)
        if should_terminate(tlog.losses, config.window, config.threshold):
            reason = "converged"
            break
    tlog.final_iteration = len(tlog.records)
    tlog.termination = reason
    out = trainer.model
    out.metadata.update({"train_seed": config.seed, "iterations": tlog.final_iteration,
                         "termination": reason, "n_train": len(cases)})
    return out, tlog
