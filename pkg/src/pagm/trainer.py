"""Adam training loop, checkpoints, evaluation and the cross-category harness."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .assignment import hungarian_decode, matching_accuracy, score_matrix, sinkhorn
from .embed import (
    Activation,
    Aggregator,
    GradientSet,
    ModelParams,
    embed_forward,
    init_params,
    pair_forward_backward,
    params_to_vector,
    vector_to_params,
)
from .errors import EmptyDataset, FormatError, IoError, ShapeMismatch, VersionMismatch, WidthMismatch
from .graph import bfs_distances, position_coefficients, uniform_coefficients

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    max_steps: int = 2000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    sinkhorn_iters: int = 50
    temperature: float = 1.0
    r: int = 3
    hidden_widths: tuple = (64, 64)
    seed: int = 0
    activation: str = "relu"
    aggregator: str = "sum"
    coefficients: str = "position"  # "uniform" is the position-blind ablation

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1 or self.max_steps < 0 or self.sinkhorn_iters < 1 or self.r < 1:
            raise ValueError("batch_size, sinkhorn_iters and r must be >= 1; max_steps >= 0")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if self.coefficients not in ("position", "uniform"):
            raise ValueError(f"coefficients must be 'position' or 'uniform', got {self.coefficients!r}")
        Activation(self.activation)
        Aggregator(self.aggregator)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


@dataclass(frozen=True)
class OptimizerState:
    m: tuple
    v: tuple
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> OptimizerState:
        return cls(tuple(np.zeros_like(w) for w in params.layers), tuple(np.zeros_like(w) for w in params.layers), 0)


@dataclass(frozen=True)
class StepReport:
    step: int
    loss: float
    accuracy: float


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ModelParams
    optimizer: OptimizerState
    rng_state: dict
    format_version: int = CHECKPOINT_VERSION

    @property
    def step(self) -> int:
        return self.optimizer.step


def adam_step(params: ModelParams, grads: GradientSet, state: OptimizerState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns ``(params, state)``."""
    if len(grads.grads) != len(params.layers) or any(
        g.shape != w.shape for g, w in zip(grads.grads, params.layers)
    ):
        raise ShapeMismatch("gradient shapes do not match the parameters")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = state.step + 1
    new_w, new_m, new_v = [], [], []
    for w, g, m, v in zip(params.layers, grads.grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_w.append(w - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return params.replace_layers(new_w), OptimizerState(tuple(new_m), tuple(new_v), t)


def pair_coefficients(pair, r: int, mode: str = "position"):
    if mode == "uniform":
        return uniform_coefficients(pair.source.n), uniform_coefficients(pair.target.n)
    return (
        position_coefficients(bfs_distances(pair.source, r)),
        position_coefficients(bfs_distances(pair.target, r)),
    )


def _check_widths(ds, f_in: int | None = None) -> int:
    if not ds:
        raise EmptyDataset("dataset has no pairs")
    widths = {p.source.feature_dim for p in ds} | {p.target.feature_dim for p in ds}
    if len(widths) != 1:
        raise WidthMismatch(f"dataset mixes feature widths {sorted(widths)}")
    (w,) = widths
    if f_in is not None and w != f_in:
        raise WidthMismatch(f"dataset feature width {w} but model expects {f_in}")
    return w


def _map(fn, items, workers: int | None):
    if workers is None or workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def new_checkpoint(f_in: int, cfg: TrainConfig) -> Checkpoint:
    params = init_params(f_in, cfg.hidden_widths, cfg.seed, cfg.activation, cfg.aggregator)
    rng = np.random.default_rng([cfg.seed, 1])
    return Checkpoint(cfg, params, OptimizerState.zeros_like(params), rng.bit_generator.state)


def train(ds, cfg: TrainConfig, resume: Checkpoint | None = None, workers: int | None = None):
    """Train until ``cfg.max_steps`` optimizer steps; returns ``(checkpoint, reports)``.

    Each step draws ``batch_size`` distinct pairs with the checkpointed RNG,
    averages loss and gradients over them in draw order and applies one Adam
    update. Passing ``resume`` continues from that checkpoint's step.
    """
    f_in = _check_widths(ds)
    ckpt = resume if resume is not None else new_checkpoint(f_in, cfg)
    if resume is not None:
        if replace(resume.config, max_steps=cfg.max_steps) != cfg:
            raise ValueError("resume checkpoint was trained with a different configuration")
        _check_widths(ds, resume.params.in_width)

    coeffs = [pair_coefficients(p, cfg.r, cfg.coefficients) for p in ds]
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    params, state = ckpt.params, ckpt.optimizer
    batch = min(cfg.batch_size, len(ds))
    reports = []

    def run(k):
        pair = ds[k]
        qs, qt = coeffs[k]
        res = pair_forward_backward(
            params, pair.source.features, qs, pair.target.features, qt, pair.gt, cfg.sinkhorn_iters, cfg.temperature
        )
        return res.gradients, matching_accuracy(hungarian_decode(res.s), pair.gt)

    while state.step < cfg.max_steps:
        idx = rng.choice(len(ds), size=batch, replace=False)
        results = _map(run, idx, workers)
        total = results[0][0]
        for g, _ in results[1:]:
            total = total + g
        mean = total.scaled(1.0 / batch)
        acc = float(np.mean([a for _, a in results]))
        params, state = adam_step(params, mean, state, cfg)
        reports.append(StepReport(state.step, mean.loss, acc))

    return Checkpoint(cfg, params, state, rng.bit_generator.state), reports


@dataclass
class EvalResult:
    mean_accuracy: float
    per_category: dict = field(default_factory=dict)
    per_pair: list = field(default_factory=list)


def predict(pair, params: ModelParams, cfg: TrainConfig, coeffs=None):
    """Decoded assignment and soft matrix for one pair."""
    qs, qt = coeffs if coeffs is not None else pair_coefficients(pair, cfg.r, cfg.coefficients)
    hs, _ = embed_forward(pair.source.features, qs, params)
    ht, _ = embed_forward(pair.target.features, qt, params)
    s = sinkhorn(score_matrix(hs, ht), cfg.sinkhorn_iters, cfg.temperature)
    return hungarian_decode(s), s


def evaluate(ds, ckpt: Checkpoint, workers: int | None = None) -> EvalResult:
    """Unweighted mean matching accuracy overall and per category."""
    _check_widths(ds, ckpt.params.in_width)

    def one(pair):
        pred, _ = predict(pair, ckpt.params, ckpt.config)
        return matching_accuracy(pred, pair.gt)

    accs = _map(one, ds, workers)
    per_cat: dict[str, list] = {}
    for pair, a in zip(ds, accs):
        per_cat.setdefault(pair.category, []).append(a)
    return EvalResult(
        float(np.mean(accs)),
        {label: float(np.mean(v)) for label, v in per_cat.items()},
        accs,
    )


def cross_category(train_test: dict, cfg: TrainConfig, workers: int | None = None):
    """Accuracy matrix: row = training category, column = test category."""
    labels = list(train_test)
    if len(labels) < 2:
        raise ValueError("cross-category study needs at least two categories")
    out = np.zeros((len(labels), len(labels)))
    for a, la in enumerate(labels):
        ckpt, _ = train(train_test[la][0], cfg, workers=workers)
        for b, lb in enumerate(labels):
            out[a, b] = evaluate(train_test[lb][1], ckpt, workers).mean_accuracy
    return labels, out


def split_by_category(ds) -> dict:
    out: dict[str, list] = {}
    for p in ds:
        out.setdefault(p.category, []).append(p)
    return out


# ---- file formats ----------------------------------------------------------


def checkpoint_to_dict(ckpt: Checkpoint) -> dict:
    return {
        "format_version": ckpt.format_version,
        "config": ckpt.config.to_dict(),
        "shapes": [list(s) for s in ckpt.params.shapes],
        "activation": ckpt.params.activation.value,
        "aggregator": ckpt.params.aggregator.value,
        "params": params_to_vector(ckpt.params).tolist(),
        "adam": {
            "step": ckpt.optimizer.step,
            "m": np.concatenate([a.reshape(-1) for a in ckpt.optimizer.m]).tolist(),
            "v": np.concatenate([a.reshape(-1) for a in ckpt.optimizer.v]).tolist(),
        },
        "rng_state": ckpt.rng_state,
    }


def checkpoint_from_dict(d: dict) -> Checkpoint:
    if d.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint format_version {d.get('format_version')!r}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = TrainConfig.from_dict(d["config"])
        shapes = [tuple(s) for s in d["shapes"]]
        params = vector_to_params(d["params"], shapes, d["activation"], d["aggregator"])
        m = vector_to_params(d["adam"]["m"], shapes).layers
        v = vector_to_params(d["adam"]["v"], shapes).layers
        state = OptimizerState(m, v, int(d["adam"]["step"]))
        return Checkpoint(cfg, params, state, d["rng_state"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed checkpoint ({exc})") from exc


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(checkpoint_to_dict(ckpt), fh)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint is not valid JSON ({exc.msg})", exc.lineno) from exc
    return checkpoint_from_dict(d)


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss", "accuracy"])
        for r in reports:
            w.writerow([r.step, repr(r.loss), repr(r.accuracy)])


def write_eval_csv(result: EvalResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "accuracy"])
        for label, acc in result.per_category.items():
            w.writerow([label, repr(acc)])
        w.writerow(["mean", repr(result.mean_accuracy)])


def write_matrix_csv(labels, matrix, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["train\\test", *labels])
        for label, row in zip(labels, matrix):
            w.writerow([label, *(repr(float(x)) for x in row)])


def read_matrix_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    labels = rows[0][1:]
    if [r[0] for r in rows[1:]] != labels:
        raise FormatError("row labels do not match column labels")
    return labels, np.array([[float(x) for x in r[1:]] for r in rows[1:]])
