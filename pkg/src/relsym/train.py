"""Training loop, effect-prediction metrics and autoregressive rollouts."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .neural import (ALL_ONES, HARD, RELATIONAL, SOFT, STRAIGHT, ModelConfig,
                     RelationalDeepSym, action_vectors, batch_loss)
from .sim import Transition

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_good: RelationalDeepSym | None, history: list):
        super().__init__(message)
        self.last_good = last_good
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    batch_size: int = 128
    learning_rate: float = 1e-4
    grad_clip_norm: float = 10.0
    pre_gs_norm: float = 3.0
    seed: int = 0
    temperature: float = 1.0
    gs_mode: str = STRAIGHT
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training configuration {self}")


DESK_TRAIN = TrainConfig(epochs=200)


class Batches:
    """Transitions packed into same-object-count buckets."""

    def __init__(self, transitions: Sequence[Transition], dtype=np.float32):
        by_n: dict[int, list[Transition]] = {}
        for t in transitions:
            by_n.setdefault(len(t), []).append(t)
        self.buckets = {}
        for n in sorted(by_n):
            ts = by_n[n]
            self.buckets[n] = (
                np.stack([t.pre for t in ts]).astype(dtype),
                np.stack([action_vectors(t.ids, t.action) for t in ts]).astype(dtype),
                np.stack([t.effects for t in ts]).astype(dtype),
            )
        self.size = len(transitions)

    def __len__(self):
        return self.size

    def epoch(self, rng: np.random.Generator, batch_size: int):
        plan = []
        for n, (X, _, _) in self.buckets.items():
            order = rng.permutation(len(X))
            plan.extend((n, order[i:i + batch_size]) for i in range(0, len(X), batch_size))
        for j in rng.permutation(len(plan)):
            n, idx = plan[j]
            X, A, E = self.buckets[n]
            yield X[idx], A[idx], E[idx]


def feature_statistics(transitions: Sequence[Transition]) -> tuple[np.ndarray, np.ndarray]:
    feats = np.concatenate([t.pre for t in transitions])
    mean = feats.mean(0)
    scale = feats.std(0)
    scale[scale < 1e-6] = 1.0
    return mean, scale


def mse(model: RelationalDeepSym, data: Batches | Sequence[Transition]) -> float:
    """Mean over samples of the summed squared effect error (hard symbols)."""
    if not isinstance(data, Batches):
        data = Batches(data, model.dtype)
    total, count = 0.0, 0
    for X, A, E in data.buckets.values():
        for i in range(0, len(X), 1024):
            y = model.predict(X[i:i + 1024], A[i:i + 1024])
            total += float(((y.astype(np.float64) - E[i:i + 1024]) ** 2).sum())
            count += len(y)
    return total / max(count, 1)


class Adam:
    """Adam over a dict of tensors; moments are kept in one flat buffer."""

    def __init__(self, params: dict, lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.slices = {}
        offset = 0
        for k, v in params.items():
            self.slices[k] = (slice(offset, offset + v.size), v.shape)
            offset += v.size
        dtype = next(iter(params.values())).dtype if params else np.float64
        self.m = np.zeros(offset, dtype)
        self.v = np.zeros(offset, dtype)
        # scratch buffers, reused every step to avoid fresh large allocations
        self._g = np.empty(offset, dtype)
        self._u = np.empty(offset, dtype)
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        g, u = self._g, self._u
        for k, (sl, _) in self.slices.items():
            g[sl] = grads[k].reshape(-1)
        self.m *= self.b1
        np.multiply(g, 1 - self.b1, out=u)
        self.m += u
        self.v *= self.b2
        np.multiply(g, g, out=g)
        g *= 1 - self.b2
        self.v += g
        np.multiply(self.v, 1 / c2, out=u)
        np.sqrt(u, out=u)
        u += self.eps
        np.divide(self.m, u, out=u)
        u *= self.lr / c1
        for k, (sl, shape) in self.slices.items():
            params[k] -= u[sl].reshape(shape)


def clip_gradients(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.dot(g.reshape(-1), g.reshape(-1))) for g in grads.values())))
    if not np.isfinite(norm):
        return norm
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


@dataclass
class TrainResult:
    model: RelationalDeepSym
    history: list[dict] = field(default_factory=list)

    @property
    def final_val_mse(self) -> float:
        return self.history[-1]["val_mse"]


def train(train_set: Sequence[Transition], cfg: TrainConfig = DESK_TRAIN,
          ablation: str = RELATIONAL, val_set: Sequence[Transition] | None = None,
          model_cfg: ModelConfig | None = None, metrics_path=None,
          log_every: int = 10) -> TrainResult:
    """Adam on the summed squared effect error, one model per call."""
    if not train_set:
        raise ValueError("empty training set")
    dtype = np.dtype(cfg.dtype)
    model_cfg = model_cfg or ModelConfig()
    model_cfg = replace(model_cfg, ablation=ablation, weight_norm=cfg.pre_gs_norm,
                        temperature=cfg.temperature)
    model = RelationalDeepSym.create(model_cfg, seed=cfg.seed, dtype=dtype)
    mean, scale = feature_statistics(train_set)
    model.in_mean, model.in_scale = mean.astype(dtype), scale.astype(dtype)

    batches = Batches(train_set, dtype)
    val = Batches(val_set if val_set else train_set, dtype)
    rng = np.random.default_rng(cfg.seed + 7919)
    opt = Adam(model.params, cfg.learning_rate)
    history: list[dict] = []
    out = open(metrics_path, "w") if metrics_path else None

    def record(epoch, train_mse, seconds):
        row = {"epoch": epoch, "train_mse": train_mse, "val_mse": mse(model, val),
               "seconds": round(seconds, 3)}
        history.append(row)
        if out:
            out.write(json.dumps(row) + "\n")
            out.flush()
        if log_every and epoch % log_every == 0:
            log.info("%s epoch %d train %.4f val %.4f", ablation, epoch, train_mse, row["val_mse"])
        return row

    start = time.time()
    try:
        record(0, mse(model, batches), 0.0)
        last_good = model.copy()
        for epoch in range(1, cfg.epochs + 1):
            total, count = 0.0, 0
            for X, A, E in batches.epoch(rng, cfg.batch_size):
                noise = model.sample_noise(rng, X.shape[0], X.shape[1]) if cfg.gs_mode != HARD else None
                value, grads = batch_loss(model, X, A, E, mode=cfg.gs_mode, noise=noise)
                gnorm = clip_gradients(grads, cfg.grad_clip_norm)
                if not (np.isfinite(value) and np.isfinite(gnorm)):
                    raise TrainingDiverged(
                        f"non-finite loss/gradient at epoch {epoch} (loss={value}, |g|={gnorm})",
                        last_good, history)
                opt.step(model.params, grads)
                total += value * len(X)
                count += len(X)
            record(epoch, total / count, time.time() - start)
            last_good = model.copy()
    finally:
        if out:
            out.close()
    return TrainResult(model, history)


def _windows(transitions: Sequence[Transition], horizon: int):
    for s in range(len(transitions) - horizon + 1):
        first = transitions[s]
        ok = all(transitions[s + t].episode == first.episode
                 and transitions[s + t].step == first.step + t for t in range(horizon))
        if ok:
            yield transitions[s:s + horizon]


def rollout_error(model: RelationalDeepSym, transitions: Sequence[Transition],
                  horizon: int) -> np.ndarray:
    """Cumulative squared error when predictions are fed back for ``horizon`` steps.

    Along a window of consecutive episode steps every object carries a drift
    (predicted minus true features). Step ``t`` feeds ``true + drift`` to the
    model, adds ``predicted - observed`` effect to the drift of the recorded
    objects, and scores the summed squared drift over those objects. Entry
    ``t - 1`` of the result is the mean over windows of the scores summed up to
    step ``t``; for ``horizon=1`` it equals the per-sample test MSE.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    per_step = np.zeros(horizon)
    n_windows = 0
    for window in _windows(transitions, horizon):
        drift: dict[int, np.ndarray] = {}
        for t, tr in enumerate(window):
            X = tr.pre + np.stack([drift.get(i, np.zeros(tr.pre.shape[1])) for i in tr.ids])
            A = action_vectors(tr.ids, tr.action)
            pred = model.predict(X[None], A[None])[0].astype(np.float64)
            score = 0.0
            for r, i in enumerate(tr.ids):
                d = drift.get(i, np.zeros(tr.pre.shape[1])) + pred[r] - tr.effects[r]
                drift[i] = d
                score += float(d @ d)
            per_step[t] += score
        n_windows += 1
    if n_windows == 0:
        raise ValueError(f"no episode window of length {horizon}")
    return np.cumsum(per_step / n_windows)
