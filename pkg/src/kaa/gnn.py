"""Attentive message-passing networks and their training loops.

A model is a stack of attention layers.  Hidden layers run `heads` parallel
attention heads, concatenate the aggregated messages and push them through a
dense ELU update; the final layer runs a single head with an identity update.
Scoring parameters live next to each layer's value weights in one flat
name -> array dict, so the whole model serializes as plain arrays.

Edges follow the (source, target) convention: the target aggregates, so the
target endpoint is the query of the score function and the source endpoint
the key.  Training always adds self loops first; without them an isolated
node would have an empty softmax segment.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import BACKBONES, VARIANTS, ScoringConfig, init_scoring_params, normalize, score_pairs_head
from .errors import ParameterError, TrainingDivergenceError
from .graph import Graph, GraphCollection, _split_masks, add_self_loops, disjoint_union
from .tensor import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    add,
    add_rowvec,
    backward,
    bce_with_logits,
    concat_cols,
    dropout,
    elu,
    gather_rows,
    masked_cross_entropy,
    masked_mse,
    matmul,
    mul_rows,
    reshape,
    rowwise_dot,
    scale,
    segment_sum,
)

TASK_HEADS = (
    "node_softmax",
    "link_dot",
    "graph_meanpool_softmax",
    "graph_meanpool_mae",
)

_LAYER_CHOICES = (2, 3, 4, 5)
_HIDDEN_CHOICES = (8, 16, 32, 64, 128, 256)
_HEAD_CHOICES = (1, 2, 4, 8)
_DROPOUT_CHOICES = (0.0, 0.1, 0.3, 0.5, 0.8)
_KAN_DEPTH_CHOICES = (1, 2, 3, 4)
_KAN_GRID_CHOICES = (1, 2, 4, 8)
_KAN_ORDER_CHOICES = (1, 2, 3)


@dataclass(frozen=True)
class ModelConfig:
    backbone: str
    variant: str
    task_head: str
    num_layers: int = 2
    hidden_dim: int = 32
    heads: int = 1
    dropout: float = 0.0
    gamma: float = 1.0
    value_transform: bool = True
    attention_dropout: bool = False
    kan_depth: int = 2
    kan_hidden: int | None = None
    kan_grid_size: int = 2
    kan_order: int = 1
    kan_range: tuple[float, float] = (-2.0, 2.0)
    kan_residual: bool = True
    kan_input_tanh: bool = False

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ParameterError(f"unknown backbone {self.backbone!r}")
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.backbone == "gat_modified" and self.variant == "kaa":
            raise ParameterError("gat_modified exists only in its original form")
        if self.task_head not in TASK_HEADS:
            raise ParameterError(f"unknown task_head {self.task_head!r}")
        for name, choices in (
            ("num_layers", _LAYER_CHOICES),
            ("hidden_dim", _HIDDEN_CHOICES),
            ("heads", _HEAD_CHOICES),
            ("dropout", _DROPOUT_CHOICES),
            ("kan_depth", _KAN_DEPTH_CHOICES),
            ("kan_grid_size", _KAN_GRID_CHOICES),
            ("kan_order", _KAN_ORDER_CHOICES),
        ):
            if getattr(self, name) not in choices:
                raise ParameterError(f"{name} must be one of {choices}, got {getattr(self, name)}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if self.kan_hidden is not None and self.kan_hidden < 1:
            raise ParameterError(f"kan_hidden must be >= 1, got {self.kan_hidden}")

    def scoring(self, layer_in: int, heads: int) -> ScoringConfig:
        return ScoringConfig(
            backbone=self.backbone,
            variant=self.variant,
            in_dim=layer_in,
            proj_dim=self.hidden_dim,
            heads=heads,
            gamma=self.gamma,
            kan_depth=self.kan_depth,
            kan_hidden=self.kan_hidden,
            kan_grid_size=self.kan_grid_size,
            kan_order=self.kan_order,
            kan_range=self.kan_range,
            kan_residual=self.kan_residual,
            kan_input_tanh=self.kan_input_tanh,
        )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    weight_decay: float = 0.0
    epochs: int = 200
    seed: int = 0
    patience: int = 100

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.patience < 1:
            raise ParameterError(f"patience must be >= 1, got {self.patience}")


@dataclass
class Metrics:
    accuracy: float | None = None
    roc_auc: float | None = None
    mae: float | None = None
    loss: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    metrics: Metrics  # on the test split
    report: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parameters and forward pass


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=shape)


def _layer_dims(cfg: ModelConfig, in_dim: int, out_dim: int) -> list[int]:
    return [in_dim] + [cfg.heads * cfg.hidden_dim] * (cfg.num_layers - 1) + [out_dim]


def init_model_params(
    cfg: ModelConfig,
    in_dim: int,
    out_dim: int,
    rng: np.random.Generator,
    readout_dim: int | None = None,
) -> dict[str, np.ndarray]:
    """All model arrays, flat.  `readout_dim` adds a pooled-graph head."""
    if in_dim < 1 or out_dim < 1:
        raise ParameterError("in_dim and out_dim must be positive")
    params: dict[str, np.ndarray] = {}
    dims = _layer_dims(cfg, in_dim, out_dim)
    for layer in range(cfg.num_layers):
        last = layer == cfg.num_layers - 1
        d_in = dims[layer]
        heads = 1 if last else cfg.heads
        pre = f"layer{layer}."
        for k, v in init_scoring_params(cfg.scoring(d_in, heads), rng).items():
            params[pre + k] = v
        if last:
            params[pre + "h0.W_v"] = _glorot(rng, d_in, out_dim, (d_in, out_dim))
            continue
        if cfg.value_transform:
            for i in range(heads):
                params[f"{pre}h{i}.W_v"] = _glorot(rng, d_in, cfg.hidden_dim, (d_in, cfg.hidden_dim))
            cat_w = heads * cfg.hidden_dim
        else:
            cat_w = heads * d_in
        out_w = heads * cfg.hidden_dim
        params[pre + "W_u"] = _glorot(rng, cat_w, out_w, (cat_w, out_w))
        params[pre + "b_u"] = np.zeros(out_w)
    if readout_dim is not None:
        params["readout.W"] = _glorot(rng, out_dim, readout_dim, (out_dim, readout_dim))
        params["readout.b"] = np.zeros(readout_dim)
    if not params:
        raise ParameterError("model has no parameters")
    return params


def model_forward(
    cfg: ModelConfig,
    params: dict[str, Tensor],
    x: Tensor,
    edges: np.ndarray,
    num_nodes: int,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> Tensor:
    """Node representations (num_nodes, out_dim).  Dropout only fires when
    `training` is true, in which case `rng` must be supplied."""
    if training and cfg.dropout > 0 and rng is None:
        raise ParameterError("training forward with dropout needs an rng")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    h = x
    for layer in range(cfg.num_layers):
        last = layer == cfg.num_layers - 1
        heads = 1 if last else cfg.heads
        pre = f"layer{layer}."
        lp = {k[len(pre):]: v for k, v in params.items() if k.startswith(pre)}
        if training and cfg.dropout > 0:
            h = dropout(h, cfg.dropout, rng, training=True)
        sc = cfg.scoring(h.data.shape[1], heads)
        h_q = gather_rows(h, dst)
        h_k = gather_rows(h, src)
        outs = []
        for i in range(heads):
            alpha = normalize(score_pairs_head(sc, lp, h_q, h_k, head=i), dst, num_nodes)
            if training and cfg.attention_dropout and cfg.dropout > 0:
                alpha = dropout(alpha, cfg.dropout, rng, training=True)
            if last or cfg.value_transform:
                hv = matmul(h, lp[f"h{i}.W_v"])
            else:
                hv = h
            outs.append(segment_sum(mul_rows(gather_rows(hv, src), alpha), dst, num_nodes))
        cat = outs[0]
        for extra in outs[1:]:
            cat = concat_cols(cat, extra)
        if last:
            h = cat
        else:
            h = elu(add_rowvec(matmul(cat, lp["W_u"]), lp["b_u"]))
    return h


def _forward_numpy(cfg: ModelConfig, params_np: dict[str, np.ndarray], graph: Graph) -> np.ndarray:
    params = {k: Tensor(v) for k, v in params_np.items()}
    out = model_forward(cfg, params, Tensor(graph.features), graph.edges, graph.num_nodes)
    return out.data


# ---------------------------------------------------------------------------
# metrics


def roc_auc(pos: np.ndarray, neg: np.ndarray) -> float:
    """Area under the ROC curve from score samples (rank statistic form).

    Ties contribute half weight, so identical score lists give exactly 0.5.
    """
    pos = np.asarray(pos, dtype=np.float64).ravel()
    neg = np.asarray(neg, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ParameterError("roc_auc needs at least one score on each side")
    merged = np.sort(np.concatenate([pos, neg]))
    lo = np.searchsorted(merged, pos, side="left")
    hi = np.searchsorted(merged, pos, side="right")
    ranks = (lo + hi + 1) / 2.0
    u = ranks.sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def _masked_accuracy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        raise ParameterError("accuracy over an empty mask is undefined")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


def evaluate_node(
    cfg: ModelConfig, params_np: dict[str, np.ndarray], graph: Graph, mask: np.ndarray
) -> Metrics:
    """Deterministic accuracy + cross entropy over `mask` (no dropout)."""
    logits = _forward_numpy(cfg, params_np, graph)
    loss = masked_cross_entropy(Tensor(logits), graph.labels, mask)
    return Metrics(accuracy=_masked_accuracy(logits, graph.labels, mask), loss=float(loss.data))


# ---------------------------------------------------------------------------
# training loops


def _leaf_params(tape: Tape, params_np: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: tape.leaf(v) for k, v in params_np.items()}


def _named_grads(tape: Tape, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: tape.gradients[t.tape_id] for k, t in params.items() if t.tape_id in tape.gradients}


def _improved(metric: float, loss: float, best: tuple | None, mode: str) -> bool:
    if best is None:
        return True
    sign = 1.0 if mode == "max" else -1.0
    if sign * metric > sign * best[0]:
        return True
    return metric == best[0] and loss < best[1]


def _single_graph(data, expected_task: str) -> Graph:
    if isinstance(data, Graph):
        return data
    if isinstance(data, GraphCollection):
        if data.task != expected_task:
            raise ParameterError(f"collection task {data.task!r}, need {expected_task!r}")
        if len(data.graphs) != 1:
            raise ParameterError("this task head expects a single graph")
        return data.graphs[0]
    raise ParameterError(f"cannot train on {type(data).__name__}")


def _node_graph(data) -> Graph:
    """Node-task input: one graph, or a collection merged into disconnected
    blocks (one forward pass instead of one per graph; the math is the same
    because attention never crosses components)."""
    if isinstance(data, Graph):
        return data
    if isinstance(data, GraphCollection):
        if data.task != "node_classification":
            raise ParameterError(f"collection task {data.task!r}, need 'node_classification'")
        if len(data.graphs) == 1:
            return data.graphs[0]
        return disjoint_union(data.graphs)
    raise ParameterError(f"cannot train on {type(data).__name__}")


def _check_finite(loss_value: float, epoch: int):
    if not np.isfinite(loss_value):
        raise TrainingDivergenceError(f"loss became non-finite ({loss_value})", epoch=epoch)


def _base_report(cfg: ModelConfig, tcfg: TrainConfig, task: str) -> dict:
    cfg_d = asdict(cfg)
    cfg_d["kan_range"] = list(cfg_d["kan_range"])
    return {"config": cfg_d, "train": asdict(tcfg), "task": task, "seed": tcfg.seed}


def train(data, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    """Fit a model on a graph or collection; dispatches on cfg.task_head."""
    if cfg.task_head == "node_softmax":
        return _train_node(_node_graph(data), cfg, tcfg)
    if cfg.task_head == "link_dot":
        return _train_link(_single_graph(data, "link_prediction"), cfg, tcfg)
    if not isinstance(data, GraphCollection):
        raise ParameterError("graph-level heads need a GraphCollection")
    return _train_graphs(data, cfg, tcfg)


def _train_node(graph: Graph, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    if graph.labels is None:
        raise ParameterError("node task needs labels")
    for name in ("train_mask", "val_mask", "test_mask"):
        m = getattr(graph, name)
        if m is None or not m.any():
            raise ParameterError(f"node task needs a non-empty {name}")
    started = time.perf_counter()
    graph = add_self_loops(graph)
    labels = np.asarray(graph.labels, dtype=np.int64)
    n_classes = int(labels[graph.train_mask | graph.val_mask | graph.test_mask].max()) + 1
    rng = np.random.default_rng(tcfg.seed)
    params_np = init_model_params(cfg, graph.features.shape[1], n_classes, rng)
    opt = AdamState.for_params(params_np)
    loss_curve: list[float] = []
    best = None  # (val metric, train loss, params, epoch)
    stale = 0
    for epoch in range(tcfg.epochs):
        tape = Tape()
        params = _leaf_params(tape, params_np)
        logits = model_forward(cfg, params, Tensor(graph.features), graph.edges, graph.num_nodes, rng, training=True)
        loss = masked_cross_entropy(logits, labels, graph.train_mask)
        lval = float(loss.data)
        _check_finite(lval, epoch)
        backward(tape, loss)
        params_np = adam_step(params_np, _named_grads(tape, params), opt, tcfg.lr, tcfg.weight_decay)
        tape.release()
        loss_curve.append(lval)
        val = evaluate_node(cfg, params_np, graph, graph.val_mask)
        if _improved(val.accuracy, lval, best, "max"):
            best = (val.accuracy, lval, params_np, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    params_np = best[2]
    test = evaluate_node(cfg, params_np, graph, graph.test_mask)
    report = _base_report(cfg, tcfg, "node_classification")
    report.update(
        loss_curve=loss_curve,
        n_epochs_run=len(loss_curve),
        best_epoch=best[3],
        val_metric=best[0],
        test_metrics=test.to_dict(),
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
    )
    return TrainResult(params_np, test, report)


def _undirected_pairs(edges: np.ndarray) -> np.ndarray:
    """Canonical (lo, hi) pairs, self loops dropped, duplicates collapsed."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = e[e[:, 0] != e[:, 1]]
    lo = np.minimum(e[:, 0], e[:, 1])
    hi = np.maximum(e[:, 0], e[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def _sample_negative_pairs(
    rng: np.random.Generator, num_nodes: int, forbidden: set, count: int
) -> np.ndarray:
    """`count` node pairs that are neither self loops nor in `forbidden`
    (canonical lo*N+hi codes).  Rejection sampling with a hard cap."""
    out = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 1000 * count:
            raise ParameterError("graph too dense to sample negative pairs")
        u, v = rng.integers(0, num_nodes, size=2)
        if u == v:
            continue
        code = min(u, v) * num_nodes + max(u, v)
        if code in forbidden:
            continue
        out.append((u, v))
    return np.array(out, dtype=np.int64)


def _pair_scores_np(emb: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->i", emb[pairs[:, 0]], emb[pairs[:, 1]])


def _train_link(graph: Graph, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    started = time.perf_counter()
    pairs = _undirected_pairs(graph.edges)
    n_pairs = pairs.shape[0]
    if n_pairs < 3:
        raise ParameterError(f"link task needs at least 3 undirected pairs, got {n_pairs}")
    rng = np.random.default_rng(tcfg.seed)
    perm = rng.permutation(n_pairs)
    n_val = max(1, int(round(0.1 * n_pairs)))
    n_test = max(1, int(round(0.1 * n_pairs)))
    val_pairs = pairs[perm[:n_val]]
    test_pairs = pairs[perm[n_val : n_val + n_test]]
    train_pairs = pairs[perm[n_val + n_test :]]
    if train_pairs.shape[0] == 0:
        raise ParameterError("link split left no training pairs")
    loops = np.stack([np.arange(graph.num_nodes)] * 2, axis=1)
    mp_edges = np.concatenate([train_pairs, train_pairs[:, ::-1], loops])
    mp_graph = Graph(graph.num_nodes, mp_edges, graph.features)
    forbidden = {int(u) * graph.num_nodes + int(v) for u, v in pairs}
    params_np = init_model_params(cfg, graph.features.shape[1], cfg.hidden_dim, rng)
    # fixed negatives so validation and test scores are comparable across epochs
    val_neg = _sample_negative_pairs(rng, graph.num_nodes, forbidden, n_val)
    test_neg = _sample_negative_pairs(rng, graph.num_nodes, forbidden, n_test)
    opt = AdamState.for_params(params_np)
    loss_curve: list[float] = []
    best = None
    stale = 0
    for epoch in range(tcfg.epochs):
        epoch_neg = _sample_negative_pairs(rng, graph.num_nodes, forbidden, train_pairs.shape[0])
        tape = Tape()
        params = _leaf_params(tape, params_np)
        emb = model_forward(cfg, params, Tensor(mp_graph.features), mp_graph.edges, mp_graph.num_nodes, rng, training=True)
        pos = rowwise_dot(gather_rows(emb, train_pairs[:, 0]), gather_rows(emb, train_pairs[:, 1]))
        neg = rowwise_dot(gather_rows(emb, epoch_neg[:, 0]), gather_rows(emb, epoch_neg[:, 1]))
        loss = scale(
            add(
                bce_with_logits(pos, np.ones(pos.data.shape[0])),
                bce_with_logits(neg, np.zeros(neg.data.shape[0])),
            ),
            0.5,
        )
        lval = float(loss.data)
        _check_finite(lval, epoch)
        backward(tape, loss)
        params_np = adam_step(params_np, _named_grads(tape, params), opt, tcfg.lr, tcfg.weight_decay)
        tape.release()
        loss_curve.append(lval)
        emb_np = _forward_numpy(cfg, params_np, mp_graph)
        val_auc = roc_auc(_pair_scores_np(emb_np, val_pairs), _pair_scores_np(emb_np, val_neg))
        if _improved(val_auc, lval, best, "max"):
            best = (val_auc, lval, params_np, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    params_np = best[2]
    emb_np = _forward_numpy(cfg, params_np, mp_graph)
    test_auc = roc_auc(_pair_scores_np(emb_np, test_pairs), _pair_scores_np(emb_np, test_neg))
    test = Metrics(roc_auc=test_auc)
    report = _base_report(cfg, tcfg, "link_prediction")
    report.update(
        loss_curve=loss_curve,
        n_epochs_run=len(loss_curve),
        best_epoch=best[3],
        val_metric=best[0],
        test_metrics=test.to_dict(),
        n_train_pairs=int(train_pairs.shape[0]),
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
    )
    return TrainResult(params_np, test, report)


def _pooled_output(
    cfg: ModelConfig,
    params: dict[str, Tensor],
    graph: Graph,
    rng: np.random.Generator | None,
    training: bool,
) -> Tensor:
    emb = model_forward(cfg, params, Tensor(graph.features), graph.edges, graph.num_nodes, rng, training)
    pool = Tensor(np.full((1, graph.num_nodes), 1.0 / graph.num_nodes))
    pooled = matmul(pool, emb)
    return add_rowvec(matmul(pooled, params["readout.W"]), params["readout.b"])


def _train_graphs(coll: GraphCollection, cfg: ModelConfig, tcfg: TrainConfig) -> TrainResult:
    if coll.task != "graph_classification":
        raise ParameterError(f"collection task {coll.task!r}, need 'graph_classification'")
    if any(g.graph_label is None for g in coll.graphs):
        raise ParameterError("every graph needs a graph_label")
    started = time.perf_counter()
    graphs = [add_self_loops(g) for g in coll.graphs]
    mae_head = cfg.task_head == "graph_meanpool_mae"
    targets = np.array([float(g.graph_label) for g in graphs])
    if mae_head:
        out_w = 1
    else:
        labels = np.array([int(g.graph_label) for g in graphs], dtype=np.int64)
        if (labels < 0).any():
            raise ParameterError("classification labels must be non-negative")
        out_w = int(labels.max()) + 1
    rng = np.random.default_rng(tcfg.seed)
    tr_m, va_m, te_m = _split_masks(len(graphs), rng)
    if not (tr_m.any() and va_m.any() and te_m.any()):
        raise ParameterError(f"{len(graphs)} graphs cannot fill a 60/20/20 split")
    tr_idx, va_idx, te_idx = (np.flatnonzero(m) for m in (tr_m, va_m, te_m))
    width = graphs[0].features.shape[1]
    if any(g.features.shape[1] != width for g in graphs):
        raise ParameterError("graphs in a collection must share feature width")
    params_np = init_model_params(cfg, width, cfg.hidden_dim, rng, readout_dim=out_w)
    opt = AdamState.for_params(params_np)
    loss_curve: list[float] = []
    best = None
    stale = 0

    def split_metrics(p_np: dict, idx: np.ndarray) -> Metrics:
        outs = np.concatenate(
            [_pooled_output(cfg, {k: Tensor(v) for k, v in p_np.items()}, graphs[i], None, False).data for i in idx]
        )
        if mae_head:
            return Metrics(mae=float(np.mean(np.abs(outs[:, 0] - targets[idx]))))
        return Metrics(accuracy=float(np.mean(np.argmax(outs, axis=1) == labels[idx])))

    for epoch in range(tcfg.epochs):
        tape = Tape()
        params = _leaf_params(tape, params_np)
        total = None
        for i in tr_idx:
            out = _pooled_output(cfg, params, graphs[i], rng, training=True)
            if mae_head:
                term = masked_mse(reshape(out, (1,)), targets[i : i + 1])
            else:
                term = masked_cross_entropy(out, labels[i : i + 1], np.array([True]))
            total = term if total is None else add(total, term)
        loss = scale(total, 1.0 / tr_idx.size)
        lval = float(loss.data)
        _check_finite(lval, epoch)
        backward(tape, loss)
        params_np = adam_step(params_np, _named_grads(tape, params), opt, tcfg.lr, tcfg.weight_decay)
        tape.release()
        loss_curve.append(lval)
        val = split_metrics(params_np, va_idx)
        metric = val.mae if mae_head else val.accuracy
        if _improved(metric, lval, best, "min" if mae_head else "max"):
            best = (metric, lval, params_np, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    params_np = best[2]
    test = split_metrics(params_np, te_idx)
    report = _base_report(cfg, tcfg, "graph_classification")
    report.update(
        loss_curve=loss_curve,
        n_epochs_run=len(loss_curve),
        best_epoch=best[3],
        val_metric=best[0],
        test_metrics=test.to_dict(),
        n_train_graphs=int(tr_idx.size),
        elapsed_ms=(time.perf_counter() - started) * 1000.0,
    )
    return TrainResult(params_np, test, report)
