"""Soft assignment, permutation loss, discrete decoding and the QAP objective.

Pair ``(i, j)`` (source node ``i`` matched to target node ``j``) is flattened
to index ``i * m + j`` everywhere an ``nm``-vector or ``nm x nm`` matrix
appears.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    IndexMismatch,
    InvalidGroundTruth,
    NonFinite,
    ShapeMismatch,
    TooLarge,
    WidthMismatch,
)
from .graph import Graph

LOSS_CLAMP = 1e-7
DEFAULT_SINKHORN_ITERS = 50
MAX_ENUMERATION = 10**6


@dataclass(frozen=True)
class PermutationMatrix:
    """Injective map from ``n`` source nodes into ``m`` target nodes."""

    mapping: tuple[int, ...]
    m: int

    def __post_init__(self):
        mapping = tuple(int(j) for j in self.mapping)
        object.__setattr__(self, "mapping", mapping)
        if len(mapping) > self.m:
            raise InvalidGroundTruth(f"{len(mapping)} source nodes cannot map injectively into {self.m}")
        if any(not 0 <= j < self.m for j in mapping):
            raise InvalidGroundTruth(f"mapping {mapping} leaves the target range 0..{self.m - 1}")
        if len(set(mapping)) != len(mapping):
            raise InvalidGroundTruth(f"mapping {mapping} is not injective")

    @property
    def n(self) -> int:
        return len(self.mapping)

    def to_matrix(self) -> np.ndarray:
        out = np.zeros((self.n, self.m))
        out[np.arange(self.n), list(self.mapping)] = 1.0
        return out

    def to_vector(self) -> np.ndarray:
        return self.to_matrix().reshape(-1)

    @classmethod
    def from_matrix(cls, mat) -> PermutationMatrix:
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2:
            raise InvalidGroundTruth("ground truth must be a 2-d matrix")
        if not np.isin(mat, (0.0, 1.0)).all():
            raise InvalidGroundTruth("ground truth entries must be exactly 0 or 1")
        if not (mat.sum(axis=1) == 1).all():
            raise InvalidGroundTruth("every source row must be matched exactly once")
        if (mat.sum(axis=0) > 1).any():
            raise InvalidGroundTruth("a target column is matched more than once")
        return cls(tuple(np.argmax(mat, axis=1)), mat.shape[1])


def as_permutation(gt, m: int | None = None) -> PermutationMatrix:
    if isinstance(gt, PermutationMatrix):
        return gt
    arr = np.asarray(gt)
    if arr.ndim == 2:
        return PermutationMatrix.from_matrix(arr)
    if m is None:
        raise InvalidGroundTruth("a mapping list needs the target size m")
    return PermutationMatrix(tuple(arr), m)


def score_matrix(hs: np.ndarray, ht: np.ndarray) -> np.ndarray:
    """Inner products of every source embedding with every target embedding."""
    hs = np.asarray(hs, dtype=float)
    ht = np.asarray(ht, dtype=float)
    if hs.shape[1] != ht.shape[1]:
        raise WidthMismatch(f"embedding widths differ: {hs.shape[1]} vs {ht.shape[1]}")
    return hs @ ht.T


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    top = x.max(axis=axis, keepdims=True)
    return top + np.log(np.exp(x - top).sum(axis=axis, keepdims=True))


@dataclass
class SinkhornTrace:
    """States retained by :func:`sinkhorn_forward` for the reverse pass."""

    n: int
    temperature: float
    states: list  # log-matrix after each normalisation, in order
    axes: list


def sinkhorn_forward(scores, iters: int = DEFAULT_SINKHORN_ITERS, temperature: float = 1.0):
    """Log-domain Sinkhorn returning ``(S, trace)``.

    Rectangular inputs (n < m) are padded with zero-score dummy rows to a
    square matrix and cropped afterwards. Each iteration normalises columns
    and then rows, so rows are exactly stochastic on exit.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ShapeMismatch(f"scores must be 2-d, got shape {scores.shape}")
    n, m = scores.shape
    if n > m:
        raise ShapeMismatch(f"need n <= m, got {n} x {m}")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not np.isfinite(scores).all():
        raise NonFinite("scores contain non-finite entries")

    x = np.zeros((m, m))
    x[:n] = scores / temperature
    states, axes = [], []
    for _ in range(iters):
        for axis in (0, 1):
            x = x - _logsumexp(x, axis)
            states.append(x)
            axes.append(axis)
    s = np.exp(x[:n])
    return s, SinkhornTrace(n, temperature, states, axes)


def sinkhorn(scores, iters: int = DEFAULT_SINKHORN_ITERS, temperature: float = 1.0) -> np.ndarray:
    return sinkhorn_forward(scores, iters, temperature)[0]


def sinkhorn_backward(trace: SinkhornTrace, d_s: np.ndarray) -> np.ndarray:
    """Gradient with respect to the raw scores given ``dL/dS``."""
    n = trace.n
    last = trace.states[-1]
    g = np.zeros_like(last)
    g[:n] = d_s * np.exp(last[:n])
    # y = x - lse(x)  =>  dx = dy - softmax(x) * sum(dy)
    for y, axis in zip(reversed(trace.states), reversed(trace.axes)):
        g = g - np.exp(y) * g.sum(axis=axis, keepdims=True)
    return g[:n] / trace.temperature


def permutation_loss(s, gt) -> tuple[float, np.ndarray]:
    """Summed binary cross-entropy between ``s`` and a 0/1 ground truth.

    Returns ``(loss, dloss/ds)``. ``s`` is clamped to
    ``[LOSS_CLAMP, 1 - LOSS_CLAMP]``; the gradient is zero wherever the clamp
    is active.
    """
    s = np.asarray(s, dtype=float)
    target = as_permutation(gt, s.shape[1] if s.ndim == 2 else None).to_matrix()
    if target.shape != s.shape:
        raise ShapeMismatch(f"S has shape {s.shape} but ground truth is {target.shape}")
    c = np.clip(s, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    loss = -float(np.sum(target * np.log(c) + (1.0 - target) * np.log1p(-c)))
    grad = -target / c + (1.0 - target) / (1.0 - c)
    grad[(s < LOSS_CLAMP) | (s > 1.0 - LOSS_CLAMP)] = 0.0
    return loss, grad


def _lsa_value(w: np.ndarray) -> float:
    if w.shape[0] == 0:
        return 0.0
    r, c = linear_sum_assignment(w, maximize=True)
    return float(w[r, c].sum())


def hungarian_decode(s) -> PermutationMatrix:
    """Maximum-weight injective assignment of rows to columns.

    Among optimal assignments the lexicographically smallest mapping is
    returned: rows are fixed in order to the lowest column that still admits
    an optimal completion.
    """
    s = np.asarray(s, dtype=float)
    n, m = s.shape
    if n > m:
        raise ShapeMismatch(f"need n <= m, got {n} x {m}")
    rows, cols = linear_sum_assignment(s, maximize=True)
    mapping = list(cols[np.argsort(rows)])
    best = float(s[np.arange(n), mapping].sum())
    tol = 1e-12 * max(1.0, abs(best))

    fixed_sum = 0.0
    used: list[int] = []
    for i in range(n):
        rest = np.arange(i + 1, n)
        for j in range(mapping[i]):
            if j in used:
                continue
            free = np.array([c for c in range(m) if c != j and c not in used], dtype=int)
            sub = s[np.ix_(rest, free)]
            if fixed_sum + s[i, j] + _lsa_value(sub) >= best - tol:
                r, c = linear_sum_assignment(sub, maximize=True)
                tail = free[c[np.argsort(r)]]
                mapping = mapping[:i] + [j] + list(tail)
                break
        fixed_sum += s[i, mapping[i]]
        used.append(mapping[i])
    return PermutationMatrix(tuple(mapping), m)


def matching_accuracy(pred, gt) -> float:
    """Fraction of source nodes whose predicted partner is the true one."""
    if not isinstance(pred, PermutationMatrix) or not isinstance(gt, PermutationMatrix):
        raise TypeError("matching_accuracy expects PermutationMatrix arguments")
    if pred.n != gt.n or pred.m != gt.m:
        raise ShapeMismatch(f"prediction is {pred.n}x{pred.m} but ground truth is {gt.n}x{gt.m}")
    if pred.n == 0:
        return 1.0
    hits = sum(a == b for a, b in zip(pred.mapping, gt.mapping))
    return hits / pred.n


def build_affinity(gs: Graph, gt: Graph) -> np.ndarray:
    """Koopmans-Beckmann style ``nm x nm`` affinity.

    Diagonal: ``max(0, <x_i, x_j>)``. Off-diagonal
    ``[(i, j), (a, b)]``: ``A_s[i, a] * A_t[j, b]``.
    """
    if gs.feature_dim != gt.feature_dim:
        raise WidthMismatch(f"feature widths differ: {gs.feature_dim} vs {gt.feature_dim}")
    m_mat = np.kron(gs.adjacency.astype(float), gt.adjacency.astype(float))
    node = np.maximum(0.0, gs.features @ gt.features.T)
    m_mat[np.diag_indices_from(m_mat)] += node.reshape(-1)
    return m_mat


def qap_objective(m_mat: np.ndarray, p: PermutationMatrix) -> float:
    """``v^T M v`` for the 0/1 vector encoding ``p``."""
    m_mat = np.asarray(m_mat)
    if m_mat.shape != (p.n * p.m, p.n * p.m):
        raise IndexMismatch(f"affinity is {m_mat.shape} but the assignment is {p.n}x{p.m}")
    idx = np.arange(p.n) * p.m + np.asarray(p.mapping, dtype=int)
    return float(m_mat[np.ix_(idx, idx)].sum())


def brute_force_qap(m_mat: np.ndarray, n: int, m: int) -> PermutationMatrix:
    """Exact QAP maximiser by enumerating every injection in lexicographic order."""
    m_mat = np.asarray(m_mat, dtype=float)
    if m_mat.shape != (n * m, n * m):
        raise IndexMismatch(f"affinity is {m_mat.shape}, expected {(n * m, n * m)}")
    if n > m:
        raise ShapeMismatch(f"need n <= m, got {n} x {m}")
    count = math.perm(m, n)
    if count > MAX_ENUMERATION:
        raise TooLarge(f"{count} injections exceed the enumeration limit of {MAX_ENUMERATION}")

    if n == 0:
        return PermutationMatrix((), m)
    offsets = np.arange(n) * m
    best_val, best_map = -np.inf, None
    perms = itertools.permutations(range(m), n)
    while True:
        chunk = np.array(list(itertools.islice(perms, 20000)), dtype=int).reshape(-1, n)
        if len(chunk) == 0:
            break
        idx = chunk + offsets
        vals = m_mat[idx[:, :, None], idx[:, None, :]].sum(axis=(1, 2))
        k = int(np.argmax(vals))
        if vals[k] > best_val:
            best_val, best_map = vals[k], chunk[k]
    return PermutationMatrix(tuple(best_map), m)
