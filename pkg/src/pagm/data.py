"""Synthetic graph pairs with planted correspondences, and their JSONL format."""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .assignment import PermutationMatrix
from .errors import ConnectivityRetryExceeded, FormatError, IoError, VersionMismatch
from .graph import Graph, bfs_distances, validate_graph

FORMAT_VERSION = 1
MAX_CONNECTIVITY_RETRIES = 100


@dataclass(frozen=True, eq=False)
class GraphPair:
    source: Graph
    target: Graph
    gt: PermutationMatrix
    category: str = "default"

    def __post_init__(self):
        if self.gt.n != self.source.n or self.gt.m != self.target.n:
            raise ValueError(
                f"ground truth is {self.gt.n}x{self.gt.m} for graphs of size {self.source.n} and {self.target.n}"
            )

    def __eq__(self, other):
        if not isinstance(other, GraphPair):
            return NotImplemented
        return (
            self.source == other.source
            and self.target == other.target
            and self.gt == other.gt
            and self.category == other.category
        )

    __hash__ = None


Dataset = list  # list[GraphPair]


class EdgeModel(str, enum.Enum):
    ERDOS_RENYI = "erdos_renyi"
    RANDOM_GEOMETRIC = "random_geometric"


@dataclass(frozen=True)
class PairGenConfig:
    n: int = 10
    m: int | None = None
    edge_model: EdgeModel = EdgeModel.ERDOS_RENYI
    p: float = 0.3
    radius: float = 0.4
    feature_dim: int = 16
    feature_noise_sigma: float = 0.0
    edge_flip_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "edge_model", EdgeModel(self.edge_model))
        if self.m is None:
            object.__setattr__(self, "m", self.n)
        if self.n < 1 or self.m < self.n:
            raise ValueError(f"need 1 <= n <= m, got n={self.n}, m={self.m}")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_noise_sigma < 0:
            raise ValueError("feature_noise_sigma must be >= 0")
        if not 0 <= self.edge_flip_prob < 1:
            raise ValueError("edge_flip_prob must lie in [0, 1)")

    @property
    def outlier_count(self) -> int:
        return self.m - self.n


def is_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return True
    seen = {0}
    todo = deque([0])
    while todo:
        v = todo.popleft()
        for u in np.flatnonzero(adj[v]):
            if u not in seen:
                seen.add(int(u))
                todo.append(u)
    return len(seen) == n


def _sym(upper: np.ndarray) -> np.ndarray:
    a = np.triu(upper, k=1).astype(np.int8)
    return a + a.T


def _sample_source(cfg: PairGenConfig, rng: np.random.Generator):
    n = cfg.n
    for _ in range(MAX_CONNECTIVITY_RETRIES):
        if cfg.edge_model is EdgeModel.ERDOS_RENYI:
            adj = _sym(rng.random((n, n)) < cfg.p)
            pos = None
        else:
            pos = rng.random((n, 2))
            dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
            adj = _sym(dist <= cfg.radius)
        if is_connected(adj):
            return adj, pos
    raise ConnectivityRetryExceeded(
        f"no connected {cfg.edge_model.value} graph with n={n} after {MAX_CONNECTIVITY_RETRIES} tries"
    )


def gen_pair(cfg: PairGenConfig, category: str = "default") -> GraphPair:
    """Sample a source graph and a noisy, relabelled, outlier-padded target."""
    rng = np.random.default_rng(cfg.seed)
    n, m = cfg.n, cfg.m
    adj_s, pos = _sample_source(cfg, rng)
    x_s = rng.standard_normal((n, cfg.feature_dim))

    # planted injection: source i -> target gt[i]; the remaining targets are outliers
    order = rng.permutation(m)
    gt = order[:n]
    outliers = order[n:]

    adj_t = np.zeros((m, m), dtype=np.int8)
    adj_t[np.ix_(gt, gt)] = adj_s
    x_t = np.empty((m, cfg.feature_dim))
    x_t[gt] = x_s + cfg.feature_noise_sigma * rng.standard_normal((n, cfg.feature_dim))

    if cfg.edge_flip_prob > 0:
        flips = _sym(rng.random((n, n)) < cfg.edge_flip_prob)
        adj_t[np.ix_(gt, gt)] ^= flips

    if len(outliers):
        x_t[outliers] = rng.standard_normal((len(outliers), cfg.feature_dim))
        if cfg.edge_model is EdgeModel.ERDOS_RENYI:
            links = rng.random((m, m)) < cfg.p
        else:
            pos_t = np.empty((m, 2))
            pos_t[gt] = pos
            pos_t[outliers] = rng.random((len(outliers), 2))
            links = np.linalg.norm(pos_t[:, None] - pos_t[None], axis=-1) <= cfg.radius
        touches = np.zeros((m, m), dtype=bool)
        touches[outliers, :] = True
        touches[:, outliers] = True
        adj_t = np.where(touches, 0, adj_t) | (_sym(links) * touches).astype(np.int8)

    np.fill_diagonal(adj_t, 0)
    source = validate_graph(Graph(adj_s, x_s))
    target = validate_graph(Graph(adj_t, x_t))
    return GraphPair(source, target, PermutationMatrix(tuple(gt), m), category)


def gen_ambiguous_pair(n: int = 12, seed: int = 0, feature_dim: int = 16) -> GraphPair:
    """A caterpillar whose leaves all carry the same feature vector.

    A path of ``n/2`` spine nodes with distinct features, each spine node
    carrying one leaf. All leaves share one feature vector and one degree,
    so they differ only in where they hang along the spine. The target is a
    noiseless relabelled copy.
    """
    if n < 6 or n % 2:
        raise ValueError(f"n must be even and >= 6, got {n}")
    rng = np.random.default_rng(seed)
    k = n // 2
    edges = [(i, i + 1) for i in range(k - 1)] + [(i, k + i) for i in range(k)]
    x = np.empty((n, feature_dim))
    x[:k] = rng.standard_normal((k, feature_dim))
    x[k:] = rng.standard_normal(feature_dim)
    adj = np.zeros((n, n), dtype=np.int8)
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1
    base = Graph(adj, x)

    source = base.permuted(rng.permutation(n))
    gt = rng.permutation(n)
    target = source.permuted(gt)
    return GraphPair(source, target, PermutationMatrix(tuple(gt), n), "ambiguous")


def find_twins(g: Graph) -> list[tuple[int, int]]:
    """Node pairs with identical features and degree but different distance profiles."""
    deg = g.degrees()
    prof = np.sort(bfs_distances(g, max(g.n, 1)), axis=1)
    out = []
    for u in range(g.n):
        for w in range(u + 1, g.n):
            if (
                deg[u] == deg[w]
                and np.array_equal(g.features[u], g.features[w])
                and not np.array_equal(prof[u], prof[w])
            ):
                out.append((u, w))
    return out


def default_categories(k: int = 5, feature_dim: int = 16) -> list[tuple[str, PairGenConfig]]:
    """Structurally distinct families standing in for object classes."""
    base = PairGenConfig(feature_dim=feature_dim, feature_noise_sigma=1.0, edge_flip_prob=0.05)
    presets = [
        ("sparse", replace(base, n=10, p=0.2)),
        ("dense", replace(base, n=10, p=0.6)),
        ("geometric", replace(base, n=10, edge_model=EdgeModel.RANDOM_GEOMETRIC, radius=0.45)),
        ("small", replace(base, n=7, p=0.4)),
        ("outliers", replace(base, n=8, m=10, p=0.3)),
    ]
    if not 2 <= k <= len(presets):
        raise ValueError(f"between 2 and {len(presets)} preset categories are available, asked for {k}")
    return presets[:k]


def gen_category_dataset(category_specs, pairs_per_category: int, seed: int = 0) -> Dataset:
    """``pairs_per_category`` pairs per labelled config.

    Category ``c`` uses base seed ``seed + c``; pair ``i`` within it is drawn
    with a seed derived from that base and ``i``.
    """
    specs = list(category_specs)
    if len(specs) < 2:
        raise ValueError("need at least two categories")
    out = []
    for c, (label, cfg) in enumerate(specs):
        out.extend(
            gen_pair(replace(cfg, seed=_sample_seed(seed + c, i)), label) for i in range(pairs_per_category)
        )
    return out


def _sample_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def gen_dataset(cfg: PairGenConfig, count: int, category: str = "default") -> Dataset:
    return [gen_pair(replace(cfg, seed=_sample_seed(cfg.seed, i)), category) for i in range(count)]


def gen_ambiguous_dataset(n: int, count: int, seed: int = 0, feature_dim: int = 16) -> Dataset:
    return [gen_ambiguous_pair(n, _sample_seed(seed, i), feature_dim) for i in range(count)]


def pair_to_record(pair: GraphPair) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "category": pair.category,
        "n": pair.source.n,
        "m": pair.target.n,
        "edges_s": [list(e) for e in pair.source.edges()],
        "edges_t": [list(e) for e in pair.target.edges()],
        "x_s": pair.source.features.tolist(),
        "x_t": pair.target.features.tolist(),
        "gt": list(pair.gt.mapping),
    }


def _graph_from_record(n, edges, x, line: int, side: str) -> Graph:
    adj = np.zeros((n, n), dtype=np.int8)
    for e in edges:
        if len(e) != 2:
            raise FormatError(f"edges_{side} entry {e!r} is not a pair", line)
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < j < n):
            raise FormatError(f"edges_{side} entry {e!r} must satisfy 0 <= i < j < {n}", line)
        adj[i, j] = adj[j, i] = 1
    feats = np.asarray(x, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] != n:
        raise FormatError(f"x_{side} must be a list of {n} equal-length feature rows", line)
    return Graph(adj, feats)


def pair_from_record(rec: dict, line: int | None = None) -> GraphPair:
    version = rec.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"line {line}: format_version {version!r}, this build reads {FORMAT_VERSION}")
    try:
        n, m = int(rec["n"]), int(rec["m"])
        source = _graph_from_record(n, rec["edges_s"], rec["x_s"], line, "s")
        target = _graph_from_record(m, rec["edges_t"], rec["x_t"], line, "t")
        gt = PermutationMatrix(tuple(rec["gt"]), m)
        return GraphPair(source, target, gt, str(rec["category"]))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed pair record ({exc})", line) from exc


def save_dataset(ds, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for pair in ds:
                fh.write(json.dumps(pair_to_record(pair), separators=(",", ":")))
                fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read dataset {path}: {exc}") from exc
    out = []
    for no, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", no) from exc
        if not isinstance(rec, dict):
            raise FormatError("record is not a JSON object", no)
        out.append(pair_from_record(rec, no))
    return out
