"""Relational DeepSym network with hand-written reverse-mode gradients.

Four blocks, all per-object MLPs with two hidden layers:

* encoder: object features -> ``d_k`` unary bits (Gumbel-Sigmoid bottleneck)
* attention: object features -> per-head query/key vectors; the relation bit
  for an ordered pair is a Gumbel-Sigmoid of the query/key dot product
* aggregation: ``z_j = MLP([bits_j; action_j])``, ``h_i^k = sum_j alpha^k_ij z_j``
* decoder: ``[h_i^1; ...; h_i^K]`` -> predicted effect

Layers feeding a Gumbel-Sigmoid see their input vector and weight columns
rescaled to a fixed L2 norm (3 by default); for attention this applies to the
query and key vectors.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .sim import FEATURE_DIM, OFFSETS, POSITIONS, ActionSpec

ACTION_DIM = 8
CHECKPOINT_FORMAT = "relsym-checkpoint"
CHECKPOINT_VERSION = 1

SOFT = "soft"          # sampled, relaxed
HARD = "hard"          # deterministic threshold at 0, inference
STRAIGHT = "st"        # sampled hard forward, relaxed backward

RELATIONAL = "relational"
ALL_ONES = "all_ones"

_NORM_EPS = 1e-8


@dataclass(frozen=True)
class GSConfig:
    temperature: float = 1.0
    mode: str = SOFT

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.mode not in (SOFT, HARD, STRAIGHT):
            raise ValueError(f"unknown Gumbel-Sigmoid mode {self.mode!r}")


def logistic_noise(rng: np.random.Generator, shape, dtype=np.float64) -> np.ndarray:
    u = rng.uniform(1e-10, 1.0 - 1e-10, size=shape)
    return (np.log(u) - np.log1p(-u)).astype(dtype)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gumbel_sigmoid(logit, cfg: GSConfig = GSConfig(), noise_seed: int | None = None,
                   noise=None):
    """Sample of the binary concrete distribution with location ``logit``.

    ``noise`` (logistic) overrides ``noise_seed``; hard mode ignores both.
    """
    logit = np.asarray(logit, dtype=float)
    if cfg.mode == HARD:
        out = (logit > 0).astype(float)
    else:
        if noise is None:
            noise = logistic_noise(np.random.default_rng(noise_seed), logit.shape)
        shifted = logit + noise
        out = (shifted > 0).astype(float) if cfg.mode == STRAIGHT \
            else sigmoid(shifted / cfg.temperature)
    return out.item() if out.ndim == 0 else out


def action_vectors(ids: Sequence[int], action: ActionSpec) -> np.ndarray:
    """Per-object action encoding: role flags, then the shared grasp/release one-hots."""
    a = np.zeros((len(ids), ACTION_DIM))
    for r, obj in enumerate(ids):
        a[r, 0] = obj == action.pick
        a[r, 1] = obj == action.place
    a[:, 2 + POSITIONS.index(action.grasp)] = 1.0
    a[:, 5 + POSITIONS.index(action.release)] = 1.0
    return a


@dataclass(frozen=True)
class ModelConfig:
    d_o: int = FEATURE_DIM
    d_k: int = 1
    heads: int = 3
    d_att: int = 32
    d_z: int = 32
    d_a: int = ACTION_DIM
    hidden: int = 128
    weight_norm: float = 3.0
    temperature: float = 1.0
    ablation: str = RELATIONAL
    aggregate_self: bool = False   # sum alpha_ij * z_i instead of z_j

    def __post_init__(self):
        if self.ablation not in (RELATIONAL, ALL_ONES):
            raise ValueError(f"unknown ablation {self.ablation!r}")


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    H = cfg.hidden
    shapes = {}
    for prefix, d_in, d_out in (
        ("enc", cfg.d_o, cfg.d_k),
        ("att", cfg.d_o, 2 * cfg.heads * cfg.d_att),
        ("agg", cfg.d_k + cfg.d_a, cfg.d_z),
        ("dec", cfg.heads * cfg.d_z, cfg.d_o),
    ):
        shapes[f"{prefix}.W1"] = (d_in, H)
        shapes[f"{prefix}.b1"] = (H,)
        shapes[f"{prefix}.W2"] = (H, H)
        shapes[f"{prefix}.b2"] = (H,)
        shapes[f"{prefix}.W3"] = (H, d_out)
        shapes[f"{prefix}.b3"] = (d_out,)
    return shapes


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.split(".")[1].startswith("W"):
            bound = np.sqrt(6.0 / shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def _relu(x):
    return np.maximum(x, 0)


def _mlp_forward(p, prefix, x):
    """Two ReLU hidden layers then a linear output; returns output and cache."""
    x2 = x.reshape(-1, x.shape[-1])
    a1 = _bias_relu(x2 @ p[prefix + ".W1"], p[prefix + ".b1"])
    a2 = _bias_relu(a1 @ p[prefix + ".W2"], p[prefix + ".b2"])
    return a2, (x2, a1, a2)


def _mlp_backward(p, prefix, cache, d_a2, grads, need_input=False):
    """Backward through ``_mlp_forward``; overwrites ``d_a2``."""
    x2, a1, a2 = cache
    d_a2, grads[prefix + ".b2"] = _relu_grad_colsum(d_a2, a2)
    grads[prefix + ".W2"] = a1.T @ d_a2
    d_a1, grads[prefix + ".b1"] = _relu_grad_colsum(d_a2 @ p[prefix + ".W2"].T, a1)
    grads[prefix + ".W1"] = x2.T @ d_a1
    if need_input:
        return d_a1 @ p[prefix + ".W1"].T
    return None


def _bias_relu(a, b):
    """In place ``max(a + b, 0)`` on a fresh 2-D array."""
    a += b
    return np.maximum(a, 0, out=a)


def _relu_grad_colsum(d, a):
    """Zero ``d`` (in place) where ``a`` is not positive; also return its column sums."""
    np.multiply(d, a > 0, out=d)
    return d, _colsum(d)


def _colsum(d):
    # a BLAS row-vector product beats d.sum(0) on tall float32 arrays
    return np.ones(d.shape[0], d.dtype) @ d


def _dot(a, b, axis):
    # einsum is much faster than (a * b).sum(-1) for short float32 rows
    if axis == 0:
        return np.einsum("i...,i...->...", a, b)[None]
    return np.einsum("...i,...i->...", a, b)[..., None]


def _rescale(v, c, axis=-1):
    n = np.sqrt(_dot(v, v, axis)) + _NORM_EPS
    return v * (c / n), n


def _rescale_backward(v, n, c, g, axis=-1):
    """Gradient of ``c * v / ||v||`` given upstream ``g``: ``(c/n) g - c (v.g)/n^3 v``."""
    a = c / n
    b = _dot(v, g, axis) * (a / (n * n))
    out = g * a
    out -= v * b
    return out


def _gs_forward(logits, mode, temperature, noise):
    if mode == HARD:
        return (logits > 0).astype(logits.dtype), None
    shifted = logits + noise
    soft = sigmoid(shifted / temperature).astype(logits.dtype)
    if mode == STRAIGHT:
        return (shifted > 0).astype(logits.dtype), soft
    return soft, soft


class RelationalDeepSym:
    """Parameters plus forward/backward passes over same-size object sets.

    Batched inputs: features ``X`` of shape ``(B, n, d_o)`` and action encodings
    ``A`` of shape ``(B, n, d_a)``.
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, np.ndarray],
                 in_mean=None, in_scale=None):
        self.cfg = cfg
        self.params = params
        dtype = next(iter(params.values())).dtype
        self.in_mean = np.zeros(cfg.d_o, dtype) if in_mean is None else np.asarray(in_mean, dtype)
        self.in_scale = np.ones(cfg.d_o, dtype) if in_scale is None else np.asarray(in_scale, dtype)
        shapes = param_shapes(cfg)
        if set(shapes) != set(params):
            raise ValueError("parameter names do not match the configuration")
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")

    @classmethod
    def create(cls, cfg: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32):
        return cls(cfg, init_params(cfg, seed, dtype))

    @property
    def dtype(self):
        return self.params["enc.W1"].dtype

    def copy(self) -> "RelationalDeepSym":
        return RelationalDeepSym(self.cfg, {k: v.copy() for k, v in self.params.items()},
                                 self.in_mean.copy(), self.in_scale.copy())

    def astype(self, dtype) -> "RelationalDeepSym":
        return RelationalDeepSym(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()},
                                 self.in_mean.astype(dtype), self.in_scale.astype(dtype))

    # -- noise ----------------------------------------------------------------

    def sample_noise(self, rng: np.random.Generator, B: int, n: int) -> dict:
        c = self.cfg
        return {"unary": logistic_noise(rng, (B, n, c.d_k), self.dtype),
                "relation": logistic_noise(rng, (B, c.heads, n, n), self.dtype)}

    # -- pieces -----------------------------------------------------------------

    def _normalize(self, X):
        return (np.asarray(X, self.dtype) - self.in_mean) / self.in_scale

    def _unary_logits(self, xs):
        p, c = self.params, self.cfg
        B, n, _ = xs.shape
        a2, mlp_cache = _mlp_forward(p, "enc", xs)
        u, u_norm = _rescale(a2, c.weight_norm)
        V = p["enc.W3"]
        w, w_norm = _rescale(V, c.weight_norm, axis=0)
        logits = (u @ w + p["enc.b3"]).reshape(B, n, c.d_k)
        return logits, (mlp_cache, u, u_norm, w, w_norm)

    def _relation_logits(self, xs):
        p, c = self.params, self.cfg
        B, n, _ = xs.shape
        a2, mlp_cache = _mlp_forward(p, "att", xs)
        o = (a2 @ p["att.W3"] + p["att.b3"]).reshape(B, n, c.heads, 2, c.d_att)
        oh, o_norm = _rescale(o, c.weight_norm)                    # queries and keys together
        qh = oh[:, :, :, 0].transpose(0, 2, 1, 3)                  # (B, K, n, d)
        kh = oh[:, :, :, 1].transpose(0, 2, 1, 3)
        logits = qh @ kh.transpose(0, 1, 3, 2)                     # (B, K, n, n)
        return logits, (mlp_cache, o, oh, o_norm)

    def unary_bits(self, X, mode=HARD, noise=None):
        xs = self._normalize(X)
        logits, _ = self._unary_logits(xs)
        out, _ = _gs_forward(logits, mode, self.cfg.temperature, noise)
        return out

    def relation_bits(self, X, mode=HARD, noise=None):
        xs = self._normalize(X)
        logits, _ = self._relation_logits(xs)
        out, _ = _gs_forward(logits, mode, self.cfg.temperature, noise)
        return out

    def aggregate(self, sigma_p, alpha, A):
        """``h_i = [sum_j alpha^k_ij z_j]_k`` with ``z_j = MLP([sigma_p_j; a_j])``."""
        h, _ = self._aggregate(np.asarray(sigma_p, self.dtype), np.asarray(alpha, self.dtype),
                               np.asarray(A, self.dtype))
        return h

    def _aggregate(self, sp, alpha, A):
        p, c = self.params, self.cfg
        B, n, _ = sp.shape
        zin = np.concatenate([sp, A], axis=-1)
        a2, mlp_cache = _mlp_forward(p, "agg", zin)
        z = (a2 @ p["agg.W3"] + p["agg.b3"]).reshape(B, n, c.d_z)
        if c.aggregate_self:
            rs = alpha.sum(-1)                                   # (B, K, n)
            h4 = rs[..., None] * z[:, None]                      # (B, K, n, dz)
        else:
            h4 = alpha @ z[:, None]                              # (B, K, n, dz)
        h = h4.transpose(0, 2, 1, 3).reshape(B, n, c.heads * c.d_z)
        return h, (mlp_cache, a2, z, zin)

    def decode(self, h):
        p = self.params
        h = np.asarray(h, self.dtype)
        a2, _ = _mlp_forward(p, "dec", h)
        return (a2 @ p["dec.W3"] + p["dec.b3"]).reshape(*h.shape[:-1], self.cfg.d_o)

    # -- full passes ---------------------------------------------------------------

    def forward(self, X, A, mode=HARD, noise=None, keep_cache=False):
        c, p = self.cfg, self.params
        X = np.asarray(X, self.dtype)
        A = np.asarray(A, self.dtype)
        B, n, _ = X.shape
        if mode != HARD and noise is None:
            raise ValueError("sampled Gumbel-Sigmoid modes need explicit noise")
        xs = self._normalize(X)
        lp, enc_cache = self._unary_logits(xs)
        sp, sp_soft = _gs_forward(lp, mode, c.temperature, None if noise is None else noise["unary"])
        if c.ablation == ALL_ONES:
            alpha = np.ones((B, c.heads, n, n), self.dtype)
            la = att_cache = alpha_soft = None
        else:
            la, att_cache = self._relation_logits(xs)
            alpha, alpha_soft = _gs_forward(la, mode, c.temperature,
                                            None if noise is None else noise["relation"])
        h, agg_cache = self._aggregate(sp, alpha, A)
        a2, dec_cache = _mlp_forward(p, "dec", h)
        y = (a2 @ p["dec.W3"] + p["dec.b3"]).reshape(B, n, c.d_o)
        if not keep_cache:
            return y, None
        cache = dict(enc=enc_cache, att=att_cache, agg=agg_cache, dec=dec_cache,
                     sp=sp, sp_soft=sp_soft, alpha=alpha, alpha_soft=alpha_soft,
                     h=h, dec_a2=a2, shape=(B, n))
        return y, cache

    def backward(self, cache, dy) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dy * y)`` for every parameter."""
        c, p = self.cfg, self.params
        B, n = cache["shape"]
        T = c.temperature
        grads: dict[str, np.ndarray] = {}
        dy2 = np.asarray(dy, self.dtype).reshape(-1, c.d_o)

        # decoder
        a2 = cache["dec_a2"]
        grads["dec.W3"] = a2.T @ dy2
        grads["dec.b3"] = _colsum(dy2)
        dh = _mlp_backward(p, "dec", cache["dec"], dy2 @ p["dec.W3"].T, grads, need_input=True)
        dh4 = dh.reshape(B, n, c.heads, c.d_z).transpose(0, 2, 1, 3)   # (B, K, n, dz)

        # aggregation
        agg_cache, agg_a2, z, _ = cache["agg"]
        alpha = cache["alpha"]
        if c.aggregate_self:
            rs = alpha.sum(-1)
            d_rs = (dh4 * z[:, None]).sum(-1)                       # (B, K, n)
            d_alpha = np.broadcast_to(d_rs[..., None], alpha.shape)
            dz = (rs[..., None] * dh4).sum(1)                      # (B, n, dz)
        else:
            d_alpha = dh4 @ z[:, None].transpose(0, 1, 3, 2)        # (B, K, n, n)
            dz = (alpha.transpose(0, 1, 3, 2) @ dh4).sum(1)         # (B, n, dz)
        dz2 = dz.reshape(-1, c.d_z)
        grads["agg.W3"] = agg_a2.T @ dz2
        grads["agg.b3"] = _colsum(dz2)
        dzin = _mlp_backward(p, "agg", agg_cache, dz2 @ p["agg.W3"].T, grads, need_input=True)
        d_sp = dzin[:, :c.d_k].reshape(B, n, c.d_k)

        # attention
        if c.ablation == ALL_ONES:
            for name in ("att.W1", "att.b1", "att.W2", "att.b2", "att.W3", "att.b3"):
                grads[name] = np.zeros_like(p[name])
        else:
            s = cache["alpha_soft"]
            d_la = d_alpha * s * (1 - s) / T
            att_cache, o, oh, o_norm = cache["att"]
            qh = oh[:, :, :, 0].transpose(0, 2, 1, 3)
            kh = oh[:, :, :, 1].transpose(0, 2, 1, 3)
            d_oh = np.empty_like(oh)
            d_oh[:, :, :, 0] = (d_la @ kh).transpose(0, 2, 1, 3)
            d_oh[:, :, :, 1] = (d_la.transpose(0, 1, 3, 2) @ qh).transpose(0, 2, 1, 3)
            do2 = _rescale_backward(o, o_norm, c.weight_norm, d_oh).reshape(-1, 2 * c.heads * c.d_att)
            att_a2 = att_cache[2]
            grads["att.W3"] = att_a2.T @ do2
            grads["att.b3"] = _colsum(do2)
            _mlp_backward(p, "att", att_cache, do2 @ p["att.W3"].T, grads)

        # encoder
        s = cache["sp_soft"]
        d_lp = (d_sp * s * (1 - s) / T).reshape(-1, c.d_k)
        enc_cache, u, u_norm, w, w_norm = cache["enc"]
        grads["enc.b3"] = _colsum(d_lp)
        d_w = u.T @ d_lp
        grads["enc.W3"] = _rescale_backward(p["enc.W3"], w_norm, c.weight_norm, d_w, axis=0)
        d_u = d_lp @ w.T
        d_a2 = _rescale_backward(enc_cache[2], u_norm, c.weight_norm, d_u)
        _mlp_backward(p, "enc", enc_cache, d_a2, grads)
        return grads

    # -- inference helpers -------------------------------------------------------

    def predict(self, X, A):
        y, _ = self.forward(X, A, mode=HARD)
        return y

    def symbols(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Hard unary bits ``(n, d_k)`` and relation bits ``(K, n, n)`` for one object set."""
        X = np.asarray(X)[None]
        return (self.unary_bits(X)[0].astype(np.uint8),
                self.relation_bits(X)[0].astype(np.uint8))


def loss(predicted, observed) -> float:
    """Summed squared effect error over the objects of one sample."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if predicted.shape != observed.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {observed.shape}")
    return float(((predicted - observed) ** 2).sum())


def batch_loss(model: RelationalDeepSym, X, A, E, mode=SOFT, noise=None):
    """Mean per-sample loss over a batch and its gradients."""
    y, cache = model.forward(X, A, mode=mode, noise=noise, keep_cache=True)
    diff = y - np.asarray(E, model.dtype)
    B = diff.shape[0]
    value = float((diff.astype(np.float64) ** 2).sum() / B)
    grads = model.backward(cache, 2.0 * diff / B)
    return value, grads


# -- checkpoints --------------------------------------------------------------------

def save_checkpoint(path, model: RelationalDeepSym, extra: dict | None = None) -> None:
    cfg = model.cfg
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "d_o": cfg.d_o, "d_k": cfg.d_k, "K": cfg.heads, "d_att": cfg.d_att,
              "d_z": cfg.d_z, "d_a": cfg.d_a, "config": asdict(cfg),
              "params": list(param_shapes(cfg)), "extra": extra or {}}
    arrays = {"header": np.array(json.dumps(header, sort_keys=True)),
              "in_mean": model.in_mean, "in_scale": model.in_scale}
    for name in param_shapes(cfg):
        arrays[name] = model.params[name]
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> RelationalDeepSym:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint header")
        cfg = ModelConfig(**header["config"])
        for key, value in (("d_o", cfg.d_o), ("d_k", cfg.d_k), ("K", cfg.heads),
                           ("d_att", cfg.d_att), ("d_z", cfg.d_z), ("d_a", cfg.d_a)):
            if header[key] != value:
                raise ValueError(f"{path}: header {key}={header[key]} disagrees with config")
        params = {name: data[name].copy() for name in header["params"]}
        for name, v in params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{path}: non-finite values in {name}")
        return RelationalDeepSym(cfg, params, data["in_mean"].copy(), data["in_scale"].copy())
