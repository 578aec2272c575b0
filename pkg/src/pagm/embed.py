"""Position-aware embedding network with an exact reverse pass."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .assignment import (
    DEFAULT_SINKHORN_ITERS,
    as_permutation,
    permutation_loss,
    score_matrix,
    sinkhorn_backward,
    sinkhorn_forward,
)
from .errors import InvalidDepth, KinkProximity, ShapeMismatch, StaleIntermediates

DEFAULT_HIDDEN = (64, 64)


class Activation(str, enum.Enum):
    RELU = "relu"


class Aggregator(str, enum.Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class ModelParams:
    """Per-layer weights ``W`` of shape ``(2 * F_in, F_out)``."""

    layers: tuple
    activation: Activation = Activation.RELU
    aggregator: Aggregator = Aggregator.SUM

    def __post_init__(self):
        layers = tuple(np.asarray(w, dtype=np.float64) for w in self.layers)
        if not layers:
            raise InvalidDepth("a model needs at least one layer")
        for k, w in enumerate(layers):
            if w.ndim != 2 or w.shape[0] % 2:
                raise ShapeMismatch(f"layer {k} weight has shape {w.shape}; rows must be 2*F_in")
            if k and w.shape[0] != 2 * layers[k - 1].shape[1]:
                raise ShapeMismatch(
                    f"layer {k} expects input width {w.shape[0] // 2} "
                    f"but layer {k - 1} outputs {layers[k - 1].shape[1]}"
                )
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "activation", Activation(self.activation))
        object.__setattr__(self, "aggregator", Aggregator(self.aggregator))

    @property
    def in_width(self) -> int:
        return self.layers[0].shape[0] // 2

    @property
    def out_width(self) -> int:
        return self.layers[-1].shape[1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [w.shape for w in self.layers]

    def replace_layers(self, layers) -> ModelParams:
        return ModelParams(tuple(layers), self.activation, self.aggregator)


def init_params(
    f_in: int,
    hidden_widths=DEFAULT_HIDDEN,
    seed: int = 0,
    activation=Activation.RELU,
    aggregator=Aggregator.SUM,
) -> ModelParams:
    """Glorot-uniform weights, bound ``sqrt(6 / (2*F_in + F_out))`` per layer."""
    widths = list(hidden_widths)
    if not widths:
        raise InvalidDepth("hidden_widths must name at least one layer")
    if f_in < 1 or min(widths) < 1:
        raise ValueError("all widths must be >= 1")
    rng = np.random.default_rng(seed)
    layers = []
    prev = f_in
    for w in widths:
        bound = np.sqrt(6.0 / (2 * prev + w))
        layers.append(rng.uniform(-bound, bound, size=(2 * prev, w)))
        prev = w
    return ModelParams(tuple(layers), activation, aggregator)


def params_to_vector(params: ModelParams) -> np.ndarray:
    """Flatten layer-major, row-major."""
    return np.concatenate([w.reshape(-1) for w in params.layers])


def vector_to_params(vec, shapes, activation=Activation.RELU, aggregator=Aggregator.SUM) -> ModelParams:
    vec = np.asarray(vec, dtype=np.float64)
    total = sum(r * c for r, c in shapes)
    if vec.shape != (total,):
        raise ShapeMismatch(f"vector of length {vec.size} does not fill shapes {list(shapes)}")
    layers, at = [], 0
    for r, c in shapes:
        layers.append(vec[at : at + r * c].reshape(r, c).copy())
        at += r * c
    return ModelParams(tuple(layers), activation, aggregator)


def _aggregate(h: np.ndarray, q: np.ndarray, aggregator: Aggregator) -> np.ndarray:
    # sum_u q[v,u] * concat(h[v], h[u]) == concat(rowsum(q)[v] * h[v], (q @ h)[v])
    z = np.concatenate([q.sum(axis=1, keepdims=True) * h, q @ h], axis=1)
    if aggregator is Aggregator.MEAN:
        z /= q.shape[1]
    return z


def _check_q(h: np.ndarray, q: np.ndarray):
    n = h.shape[0]
    if q.shape != (n, n):
        raise ShapeMismatch(f"coefficients have shape {q.shape} for {n} nodes")


def layer_forward(h_prev, q, layer, activation=Activation.RELU, aggregator=Aggregator.SUM) -> np.ndarray:
    """One propagation step: aggregate weighted node/anchor pairs, project, rectify."""
    h_prev = np.asarray(h_prev, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    layer = np.asarray(layer, dtype=np.float64)
    _check_q(h_prev, q)
    if layer.shape[0] != 2 * h_prev.shape[1]:
        raise ShapeMismatch(f"weight has {layer.shape[0]} rows for input width {h_prev.shape[1]}")
    z = _aggregate(h_prev, q, Aggregator(aggregator))
    return np.maximum(z @ layer, 0.0)


@dataclass
class EmbedTrace:
    """Intermediates of one :func:`embed_forward` call."""

    q: np.ndarray
    inputs: list = field(default_factory=list)
    aggregated: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    output: np.ndarray | None = None


def embed_forward(features, q, params: ModelParams) -> tuple[np.ndarray, EmbedTrace]:
    """Run every layer; return the final embeddings and the retained trace.

    ``features`` may be a :class:`~pagm.graph.Graph` or an ``n x F`` array.
    """
    x = getattr(features, "features", features)
    h = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_q(h, q)
    if h.shape[1] != params.in_width:
        raise ShapeMismatch(f"features have width {h.shape[1]} but the model expects {params.in_width}")
    trace = EmbedTrace(q)
    for w in params.layers:
        z = _aggregate(h, q, params.aggregator)
        pre = z @ w
        trace.inputs.append(h)
        trace.aggregated.append(z)
        trace.pre.append(pre)
        h = np.maximum(pre, 0.0)
    trace.output = h
    return h, trace


@dataclass
class GradientSet:
    grads: list
    loss: float = 0.0

    def __add__(self, other: GradientSet) -> GradientSet:
        return GradientSet([a + b for a, b in zip(self.grads, other.grads)], self.loss + other.loss)

    def scaled(self, c: float) -> GradientSet:
        return GradientSet([g * c for g in self.grads], self.loss * c)

    def flat(self) -> np.ndarray:
        return np.concatenate([g.reshape(-1) for g in self.grads])


def _backward_one(trace: EmbedTrace, d_out, params: ModelParams, grads: list):
    if trace.output is None or len(trace.pre) != len(params.layers):
        raise StaleIntermediates("trace does not come from a forward pass of this model")
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape != trace.output.shape:
        raise StaleIntermediates(f"gradient shape {d_out.shape} does not match embeddings {trace.output.shape}")
    q = trace.q
    rowsum = q.sum(axis=1, keepdims=True)
    scale = 1.0 / q.shape[1] if params.aggregator is Aggregator.MEAN else 1.0
    g = d_out
    for k in reversed(range(len(params.layers))):
        w = params.layers[k]
        if trace.pre[k].shape[1] != w.shape[1] or trace.aggregated[k].shape[1] != w.shape[0]:
            raise StaleIntermediates(f"layer {k} intermediates disagree with weight shape {w.shape}")
        d_pre = g * (trace.pre[k] > 0)
        grads[k] += trace.aggregated[k].T @ d_pre
        if k == 0:
            break
        d_z = (d_pre @ w.T) * scale
        f = d_z.shape[1] // 2
        g = rowsum * d_z[:, :f] + q.T @ d_z[:, f:]


def embed_backward(trace_s: EmbedTrace, trace_t: EmbedTrace, d_hs, d_ht, params: ModelParams) -> GradientSet:
    """Exact weight gradients, accumulated over both (weight-shared) towers."""
    grads = [np.zeros_like(w) for w in params.layers]
    _backward_one(trace_s, d_hs, params, grads)
    _backward_one(trace_t, d_ht, params, grads)
    return GradientSet(grads)


@dataclass
class PairResult:
    loss: float
    s: np.ndarray
    gradients: GradientSet | None
    pre_activations: list


def pair_forward_backward(
    params: ModelParams,
    xs,
    qs,
    xt,
    qt,
    gt,
    sinkhorn_iters: int = DEFAULT_SINKHORN_ITERS,
    temperature: float = 1.0,
    need_grad: bool = True,
) -> PairResult:
    """Full pipeline for one graph pair: embeddings, scores, Sinkhorn, loss."""
    hs, tr_s = embed_forward(xs, qs, params)
    ht, tr_t = embed_forward(xt, qt, params)
    s, sk = sinkhorn_forward(score_matrix(hs, ht), sinkhorn_iters, temperature)
    loss, d_s = permutation_loss(s, gt)
    grads = None
    if need_grad:
        d_scores = sinkhorn_backward(sk, d_s)
        grads = embed_backward(tr_s, tr_t, d_scores @ ht, d_scores.T @ hs, params)
        grads.loss = loss
    return PairResult(loss, s, grads, tr_s.pre + tr_t.pre)


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    passed: bool
    worst_index: int


def grad_check(
    pair,
    params: ModelParams,
    h: float = 1e-5,
    tol: float = 1e-4,
    r: int = 3,
    sinkhorn_iters: int = DEFAULT_SINKHORN_ITERS,
    temperature: float = 1.0,
    abs_tol: float = 1e-7,
    kink_margin: float = 1e-3,
    analytic: np.ndarray | None = None,
) -> GradCheckReport:
    """Compare the analytic gradient with central differences of the full loss.

    An entry agrees when its relative error is below ``tol`` or its absolute
    error is below ``abs_tol``. ``analytic`` overrides the computed gradient,
    which lets callers feed a corrupted vector as a negative control.
    """
    from .graph import bfs_distances, position_coefficients

    gt = as_permutation(pair.gt, pair.target.n)
    qs = position_coefficients(bfs_distances(pair.source, r))
    qt = position_coefficients(bfs_distances(pair.target, r))
    xs, xt = pair.source.features, pair.target.features

    res = pair_forward_backward(params, xs, qs, xt, qt, gt, sinkhorn_iters, temperature)
    closest = min(float(np.abs(p).min()) for p in res.pre_activations)
    if closest < kink_margin:
        raise KinkProximity(f"a pre-activation has magnitude {closest:.2e} < {kink_margin:g}; resample")

    shapes = params.shapes
    theta = params_to_vector(params)
    grad = res.gradients.flat() if analytic is None else np.asarray(analytic, dtype=np.float64)

    def loss_at(vec):
        p = vector_to_params(vec, shapes, params.activation, params.aggregator)
        return pair_forward_backward(p, xs, qs, xt, qt, gt, sinkhorn_iters, temperature, need_grad=False).loss

    numeric = np.empty_like(theta)
    for k in range(theta.size):
        step = theta.copy()
        step[k] += h
        up = loss_at(step)
        step[k] -= 2 * h
        down = loss_at(step)
        numeric[k] = (up - down) / (2 * h)

    abs_err = np.abs(grad - numeric)
    rel_err = abs_err / np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-300)
    rel_err = np.where(abs_err == 0, 0.0, rel_err)
    ok = (rel_err < tol) | (abs_err < abs_tol)
    scale = np.maximum(np.abs(grad), np.abs(numeric))
    counted = np.where(scale < abs_tol, 0.0, rel_err)
    worst = int(np.argmax(counted))
    return GradCheckReport(float(counted.max()), float(abs_err.max()), bool(ok.all()), worst)
