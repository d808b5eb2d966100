"""Graph containers, text-format loaders, and synthetic generators.

On-disk layout is four plain-text files: an edge list ("src dst" per line,
'#' comments), a headerless feature CSV whose row count defines the node
count, an optional integer label per line, and an optional mask file with
one of train/val/test/none per line.  Node ids are dense and 0-based.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphConsistencyError, GraphParseError, ParameterError

TASKS = ("node_classification", "link_prediction", "graph_classification")

EDGE_FILE = "edges.txt"
FEATURE_FILE = "features.csv"
LABEL_FILE = "labels.txt"
MASK_FILE = "masks.txt"

_MASK_TOKENS = ("train", "val", "test", "none")


@dataclass
class Graph:
    num_nodes: int
    edges: np.ndarray  # (E, 2) int64, directed, no duplicates
    features: np.ndarray  # (N, F) float64
    labels: np.ndarray | None = None  # (N,) int64 or float64
    train_mask: np.ndarray | None = None  # (N,) bool
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    graph_label: float | int | None = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.num_nodes:
            raise GraphConsistencyError(
                f"features shape {self.features.shape} does not match {self.num_nodes} nodes"
            )
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= self.num_nodes:
                raise GraphConsistencyError("edge endpoint outside [0, num_nodes)")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.num_nodes,):
                raise GraphConsistencyError(
                    f"labels shape {self.labels.shape} does not match {self.num_nodes} nodes"
                )
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            if m is not None:
                m = np.asarray(m, dtype=bool)
                if m.shape != (self.num_nodes,):
                    raise GraphConsistencyError(f"{name} has wrong length")
                setattr(self, name, m)
        masks = [self.train_mask, self.val_mask, self.test_mask]
        if all(m is not None for m in masks):
            overlap = (masks[0].astype(int) + masks[1] + masks[2]) > 1
            if overlap.any():
                raise GraphConsistencyError("train/val/test masks overlap")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        if self.num_nodes != other.num_nodes or self.graph_label != other.graph_label:
            return False
        if not np.array_equal(self.edges, other.edges):
            return False
        if not np.array_equal(self.features, other.features):
            return False
        for name in ("labels", "train_mask", "val_mask", "test_mask"):
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


@dataclass
class GraphCollection:
    graphs: list[Graph]
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if not self.graphs:
            raise ParameterError("collection must hold at least one graph")


def _dedupe_edges(edges: np.ndarray) -> np.ndarray:
    """Drop duplicate directed edges, keeping first occurrence order."""
    if edges.shape[0] == 0:
        return edges
    _, first = np.unique(edges, axis=0, return_index=True)
    return edges[np.sort(first)]


def _split_masks(n: int, rng: np.random.Generator, subset: np.ndarray | None = None):
    """Seeded 60/20/20 split over `subset` (default: all nodes)."""
    idx = np.arange(n) if subset is None else np.asarray(subset)
    perm = rng.permutation(idx)
    n_train = int(round(0.6 * perm.size))
    n_val = int(round(0.2 * perm.size))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[perm[:n_train]] = True
    val[perm[n_train : n_train + n_val]] = True
    test[perm[n_train + n_val :]] = True
    return train, val, test


# ---------------------------------------------------------------------------
# text formats


def _parse_edges(path: str, num_nodes: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphParseError(f"expected 'src dst', got {line!r}", path=path, line=lineno)
            try:
                src, dst = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphParseError(f"non-integer endpoint in {line!r}", path=path, line=lineno) from None
            if src < 0 or dst < 0:
                raise GraphParseError(f"negative node id in {line!r}", path=path, line=lineno)
            if src >= num_nodes or dst >= num_nodes:
                raise GraphConsistencyError(
                    f"edge ({src}, {dst}) at {path}:{lineno} references a node "
                    f">= the {num_nodes} feature rows"
                )
            rows.append((src, dst))
    edges = np.asarray(rows, dtype=np.int64).reshape(-1, 2)
    return _dedupe_edges(edges)


def _parse_features(path: str) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            try:
                values = [float(p) for p in parts]
            except ValueError:
                raise GraphParseError(f"non-numeric feature in {line!r}", path=path, line=lineno) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise GraphParseError(
                    f"row has {len(values)} columns, expected {width}", path=path, line=lineno
                )
            rows.append(values)
    if not rows:
        raise GraphParseError("feature file is empty", path=path, line=1)
    return np.asarray(rows, dtype=np.float64)


def _parse_labels(path: str, num_nodes: int) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError:
                raise GraphParseError(f"non-integer label {line!r}", path=path, line=lineno) from None
    if len(values) != num_nodes:
        raise GraphConsistencyError(f"{len(values)} labels for {num_nodes} nodes ({path})")
    return np.asarray(values, dtype=np.int64)


def _parse_masks(path: str, num_nodes: int):
    tokens = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            tok = raw.strip()
            if not tok:
                continue
            if tok not in _MASK_TOKENS:
                raise GraphParseError(f"unknown mask token {tok!r}", path=path, line=lineno)
            tokens.append(tok)
    if len(tokens) != num_nodes:
        raise GraphConsistencyError(f"{len(tokens)} mask rows for {num_nodes} nodes ({path})")
    arr = np.asarray(tokens)
    return arr == "train", arr == "val", arr == "test"


def load_graph(
    edges_path: str,
    features_path: str,
    labels_path: str | None = None,
    masks_path: str | None = None,
    seed: int = 0,
    undirected: bool = False,
) -> Graph:
    """Assemble a Graph from text files; absent masks get a seeded 60/20/20 split.

    With undirected=True every parsed edge is also added in reverse (then
    deduplicated), so a file listing each edge once yields both directions.
    """
    features = _parse_features(features_path)
    n = features.shape[0]
    edges = _parse_edges(edges_path, n)
    if undirected:
        edges = _dedupe_edges(np.concatenate([edges, edges[:, ::-1]], axis=0))
    labels = _parse_labels(labels_path, n) if labels_path is not None else None
    if masks_path is not None:
        train, val, test = _parse_masks(masks_path, n)
    else:
        train, val, test = _split_masks(n, np.random.default_rng(seed))
    return Graph(
        num_nodes=n,
        edges=edges,
        features=features,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
    )


def load_graph_dir(directory: str, seed: int = 0, undirected: bool = False) -> Graph:
    """load_graph over the canonical file names inside a directory."""
    edges = os.path.join(directory, EDGE_FILE)
    feats = os.path.join(directory, FEATURE_FILE)
    labels = os.path.join(directory, LABEL_FILE)
    masks = os.path.join(directory, MASK_FILE)
    return load_graph(
        edges,
        feats,
        labels if os.path.exists(labels) else None,
        masks if os.path.exists(masks) else None,
        seed=seed,
        undirected=undirected,
    )


def write_graph(graph: Graph, directory: str) -> None:
    """Inverse of load_graph_dir for integer-labeled graphs."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, EDGE_FILE), "w") as fh:
        for src, dst in graph.edges:
            fh.write(f"{src} {dst}\n")
    with open(os.path.join(directory, FEATURE_FILE), "w") as fh:
        for row in graph.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if graph.labels is not None:
        if not np.issubdtype(graph.labels.dtype, np.integer):
            raise ParameterError("text format stores integer labels only")
        with open(os.path.join(directory, LABEL_FILE), "w") as fh:
            for v in graph.labels:
                fh.write(f"{int(v)}\n")
    if graph.train_mask is not None:
        tokens = np.full(graph.num_nodes, "none", dtype=object)
        tokens[graph.train_mask] = "train"
        tokens[graph.val_mask] = "val"
        tokens[graph.test_mask] = "test"
        with open(os.path.join(directory, MASK_FILE), "w") as fh:
            fh.write("\n".join(tokens) + "\n")


def add_self_loops(graph: Graph) -> Graph:
    """Return a graph with (i, i) present for every node; idempotent."""
    loops = np.stack([np.arange(graph.num_nodes)] * 2, axis=1)
    combined = np.concatenate([graph.edges, loops], axis=0)
    return Graph(
        num_nodes=graph.num_nodes,
        edges=_dedupe_edges(combined),
        features=graph.features,
        labels=graph.labels,
        train_mask=graph.train_mask,
        val_mask=graph.val_mask,
        test_mask=graph.test_mask,
        graph_label=graph.graph_label,
    )


# ---------------------------------------------------------------------------
# generators


LOOKUP_INSTANCES = 90


def _one_lookup_graph(k: int, rng: np.random.Generator) -> Graph:
    designated = rng.permutation(k)
    # distinct value classes: every key is identified by its value, so a
    # query answered by the wrong key is actually wrong
    value_class = rng.permutation(k)
    n = 2 * k
    feats = np.zeros((n, 2 * k))
    labels = np.zeros(n, dtype=np.int64)
    for q in range(k):
        feats[q, designated[q]] = 1.0
        labels[q] = value_class[designated[q]]
    for j in range(k):
        node = k + j
        feats[node, j] = 1.0
        feats[node, k + value_class[j]] = 1.0
        labels[node] = value_class[j]
    pairs = []
    for q in range(k):
        for j in range(k):
            pairs.append((q, k + j))
            pairs.append((k + j, q))
    edges = np.asarray(pairs, dtype=np.int64)
    train, val, test = _split_masks(n, rng, subset=np.arange(k))
    return Graph(
        num_nodes=n,
        edges=edges,
        features=feats,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
    )


def gen_dictionary_lookup(k: int, seed: int = 0, n_instances: int = LOOKUP_INSTANCES) -> GraphCollection:
    """Collection of complete bipartite lookup instances, k queries + k keys.

    In each instance key j carries a one-hot id and a one-hot value class;
    query q carries the one-hot id of its designated key and must be
    classified by that key's value class.  Solvable exactly by attending to
    the designated key.  The designated and value assignments are drawn
    fresh per instance, so identical query features carry different labels
    across instances: a model can only generalize by actually reading its
    designated key, and only query-dependent (dynamic) attention can point
    different queries at different keys.
    """
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    if n_instances < 1:
        raise ParameterError(f"n_instances must be >= 1, got {n_instances}")
    rng = np.random.default_rng(seed)
    graphs = [_one_lookup_graph(k, rng) for _ in range(n_instances)]
    return GraphCollection(graphs=graphs, task="node_classification")


def disjoint_union(graphs: list[Graph]) -> Graph:
    """Relabel nodes of each graph into one block graph with no cross edges.

    Labels and masks are concatenated when every graph carries them and
    dropped otherwise; graph_label does not survive the union.
    """
    if not graphs:
        raise ParameterError("cannot union zero graphs")
    width = graphs[0].features.shape[1]
    if any(g.features.shape[1] != width for g in graphs):
        raise GraphConsistencyError("feature widths differ across graphs")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)])
    feats = np.concatenate([g.features for g in graphs])

    def _cat(name):
        parts = [getattr(g, name) for g in graphs]
        if any(p is None for p in parts):
            return None
        return np.concatenate(parts)

    return Graph(
        num_nodes=int(sum(g.num_nodes for g in graphs)),
        edges=edges,
        features=feats,
        labels=_cat("labels"),
        train_mask=_cat("train_mask"),
        val_mask=_cat("val_mask"),
        test_mask=_cat("test_mask"),
    )


def gen_sbm(
    blocks: int,
    per_block: int,
    p_in: float,
    p_out: float,
    seed: int = 0,
    noise: float = 0.3,
) -> Graph:
    """Stochastic block model with noisy one-hot block features.

    Each unordered pair is sampled once (p_in within a block, p_out across)
    and emitted in both directions.  Labels are block ids; masks are a
    seeded 60/20/20 split.
    """
    if blocks < 2 or per_block < 1:
        raise ParameterError(f"need >= 2 blocks of >= 1 node, got {blocks}x{per_block}")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ParameterError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    rng = np.random.default_rng(seed)
    n = blocks * per_block
    labels = np.repeat(np.arange(blocks), per_block)
    feats = np.eye(blocks)[labels] + noise * rng.standard_normal((n, blocks))
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(iu.size) < p
    src = iu[hit]
    dst = ju[hit]
    edges = np.concatenate(
        [np.stack([src, dst], axis=1), np.stack([dst, src], axis=1)], axis=0
    ).astype(np.int64)
    train, val, test = _split_masks(n, rng)
    return Graph(
        num_nodes=n,
        edges=_dedupe_edges(edges),
        features=feats,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
    )


def expected_sbm_edges(blocks: int, per_block: int, p_in: float, p_out: float) -> float:
    """Expected undirected edge count for gen_sbm's sampling scheme."""
    within = blocks * per_block * (per_block - 1) / 2.0
    n = blocks * per_block
    across = n * (n - 1) / 2.0 - within
    return within * p_in + across * p_out
