"""Pairwise attention scoring: classic forms and their KAN replacements.

Every score is s(h_i, h_j) where h_i is the aggregating (query) endpoint and
h_j the neighbor (key).  The classic backbones keep their published forms;
the KAN variants swap the score mapping for a spline stack applied to the
same alignment of the endpoint features:

    backbone   original                              kan variant
    gat        leaky_relu(a . [W h_i | W h_j])       kan([h_i | h_j])
    gat_mod    -leaky_relu(|a . [W h_i | W h_j]|)    (no kan form)
    glcn       relu(a . |h_i - h_j|)                 kan(|h_i - h_j|)
    cfgat      leaky_relu(cos(W h_i, W h_j))         cos(kan(h_i), kan(h_j))
    gt         (Wq h_i . Wk h_j) / sqrt(p)           (kan(h_i) . h_j) / sqrt(d)
    san        gt form scaled by 1 / (gamma + 1)     same scaling

The scale factor always uses the key dimension after its mapping: the
projection width p for the classic forms, the raw width d for the KAN ones
(whose keys stay unmapped).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError, ShapeError
from .kan import BSplineGrid, KanLayer, init_kan_layer, kan_stack_forward
from .tensor import (
    LEAKY_SLOPE,
    Tensor,
    absval,
    concat_cols,
    cosine_rows,
    leaky_relu,
    matmul,
    neg,
    relu,
    reshape,
    rowwise_dot,
    scale,
    segment_softmax,
    sub,
    tanh,
)

BACKBONES = ("gat", "gat_modified", "glcn", "cfgat", "gt", "san")
VARIANTS = ("original", "kaa")


@dataclass(frozen=True)
class ScoringConfig:
    backbone: str
    variant: str
    in_dim: int
    proj_dim: int
    heads: int = 1
    gamma: float = 1.0
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
        if self.in_dim < 1 or self.proj_dim < 1:
            raise ParameterError("in_dim and proj_dim must be positive")
        if self.heads < 1:
            raise ParameterError(f"heads must be >= 1, got {self.heads}")
        if self.gamma < 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if self.kan_depth < 1:
            raise ParameterError(f"kan_depth must be >= 1, got {self.kan_depth}")
        if self.kan_hidden is not None and self.kan_hidden < 1:
            raise ParameterError(f"kan_hidden must be >= 1, got {self.kan_hidden}")
        if not 0 <= self.kan_order <= 3:
            raise ParameterError(f"kan_order must be in [0, 3], got {self.kan_order}")
        if not 1 <= self.kan_grid_size <= 8:
            raise ParameterError(f"kan_grid_size must be in [1, 8], got {self.kan_grid_size}")

    def kan_grid(self) -> BSplineGrid:
        lo, hi = self.kan_range
        return BSplineGrid(range_min=lo, range_max=hi, grid_size=self.kan_grid_size, order=self.kan_order)

    def kan_widths(self) -> list[tuple[int, int]]:
        """(n_in, n_out) per stacked layer; inner width defaults to the input width."""
        w_in = 2 * self.in_dim if self.backbone in ("gat",) else self.in_dim
        w_out = self.in_dim if self.backbone in ("cfgat", "gt", "san") else 1
        inner = self.kan_hidden if self.kan_hidden is not None else w_in
        dims = [w_in] + [inner] * (self.kan_depth - 1) + [w_out]
        return [(dims[i], dims[i + 1]) for i in range(self.kan_depth)]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


def init_scoring_params(cfg: ScoringConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameter arrays for all heads, keyed 'h{i}.<name>'."""
    params: dict[str, np.ndarray] = {}
    d, p = cfg.in_dim, cfg.proj_dim
    for i in range(cfg.heads):
        pre = f"h{i}."
        if cfg.variant == "original":
            if cfg.backbone in ("gat", "gat_modified"):
                params[pre + "W"] = _glorot(rng, d, p, (d, p))
                params[pre + "a"] = _glorot(rng, 2 * p, 1, (2 * p, 1))
            elif cfg.backbone == "glcn":
                params[pre + "a"] = _glorot(rng, d, 1, (d, 1))
            elif cfg.backbone == "cfgat":
                params[pre + "W"] = _glorot(rng, d, p, (d, p))
            else:  # gt / san
                params[pre + "Wq"] = _glorot(rng, d, p, (d, p))
                params[pre + "Wk"] = _glorot(rng, d, p, (d, p))
        else:
            grid = cfg.kan_grid()
            for j, (n_in, n_out) in enumerate(cfg.kan_widths()):
                layer = init_kan_layer(n_in, n_out, grid, rng, residual=cfg.kan_residual)
                params[f"{pre}kan{j}.coef"] = layer.coefficients.data
                if cfg.kan_residual:
                    params[f"{pre}kan{j}.res"] = layer.residual_weight.data
    return params


def _as_tensors(params: dict) -> dict[str, Tensor]:
    return {k: (v if isinstance(v, Tensor) else Tensor(v)) for k, v in params.items()}


def _kan_stack(cfg: ScoringConfig, params: dict[str, Tensor], head: int) -> list[KanLayer]:
    grid = cfg.kan_grid()
    layers = []
    for j, (n_in, n_out) in enumerate(cfg.kan_widths()):
        coef = params[f"h{head}.kan{j}.coef"]
        res = params.get(f"h{head}.kan{j}.res")
        layers.append(KanLayer(n_in, n_out, grid, coef, res))
    return layers


def _kan_apply(cfg: ScoringConfig, params: dict[str, Tensor], head: int, x: Tensor) -> Tensor:
    if cfg.kan_input_tanh:
        x = tanh(x)
    return kan_stack_forward(_kan_stack(cfg, params, head), x)


def score_pairs_head(
    cfg: ScoringConfig,
    params: dict,
    h_src: Tensor,
    h_dst: Tensor,
    head: int = 0,
) -> Tensor:
    """Scores for one head; h_src are the query rows, h_dst the key rows."""
    if h_src.data.shape != h_dst.data.shape:
        raise ShapeError(f"endpoint shapes differ: {h_src.data.shape} vs {h_dst.data.shape}")
    if h_src.data.ndim != 2 or h_src.data.shape[1] != cfg.in_dim:
        raise ShapeError(f"endpoints must be (E, {cfg.in_dim}), got {h_src.data.shape}")
    if not 0 <= head < cfg.heads:
        raise ParameterError(f"head {head} outside [0, {cfg.heads})")
    params = _as_tensors(params)
    pre = f"h{head}."
    e = h_src.data.shape[0]

    if cfg.variant == "original":
        if cfg.backbone in ("gat", "gat_modified"):
            W, a = params[pre + "W"], params[pre + "a"]
            z = matmul(concat_cols(matmul(h_src, W), matmul(h_dst, W)), a)
            z = reshape(z, (e,))
            if cfg.backbone == "gat":
                return leaky_relu(z, LEAKY_SLOPE)
            return neg(leaky_relu(absval(z), LEAKY_SLOPE))
        if cfg.backbone == "glcn":
            a = params[pre + "a"]
            return relu(reshape(matmul(absval(sub(h_src, h_dst)), a), (e,)))
        if cfg.backbone == "cfgat":
            W = params[pre + "W"]
            return leaky_relu(cosine_rows(matmul(h_src, W), matmul(h_dst, W)), LEAKY_SLOPE)
        dot = rowwise_dot(matmul(h_src, params[pre + "Wq"]), matmul(h_dst, params[pre + "Wk"]))
        factor = 1.0 / np.sqrt(cfg.proj_dim)
        if cfg.backbone == "san":
            factor /= cfg.gamma + 1.0
        return scale(dot, factor)

    # kan variants
    if cfg.backbone == "gat":
        return reshape(_kan_apply(cfg, params, head, concat_cols(h_src, h_dst)), (e,))
    if cfg.backbone == "glcn":
        return reshape(_kan_apply(cfg, params, head, absval(sub(h_src, h_dst))), (e,))
    if cfg.backbone == "cfgat":
        # one shared stack maps both endpoints
        return cosine_rows(
            _kan_apply(cfg, params, head, h_src), _kan_apply(cfg, params, head, h_dst)
        )
    dot = rowwise_dot(_kan_apply(cfg, params, head, h_src), h_dst)
    factor = 1.0 / np.sqrt(cfg.in_dim)
    if cfg.backbone == "san":
        factor /= cfg.gamma + 1.0
    return scale(dot, factor)


def score_pairs(cfg: ScoringConfig, params: dict, h_src: Tensor, h_dst: Tensor) -> Tensor:
    return score_pairs_head(cfg, params, h_src, h_dst, head=0)


def normalize(scores: Tensor, segments: np.ndarray, num_segments: int | None = None) -> Tensor:
    """Per-query softmax of raw scores (segment = query id)."""
    return segment_softmax(scores, segments, num_segments)


def multi_head(
    cfg: ScoringConfig,
    params: dict,
    h_src: Tensor,
    h_dst: Tensor,
    segments: np.ndarray,
    num_segments: int | None = None,
) -> list[Tensor]:
    """Normalized attention weights for every head, in head order."""
    return [
        normalize(score_pairs_head(cfg, params, h_src, h_dst, head=i), segments, num_segments)
        for i in range(cfg.heads)
    ]


def static_attention_probe(
    cfg: ScoringConfig,
    queries: np.ndarray,
    keys: np.ndarray,
    n_param_samples: int = 200,
    seed: int = 0,
) -> float:
    """Fraction of random parameterizations whose argmax key is the same for
    every query.  Ties resolve to the lowest key index, so the probe is
    deterministic given (inputs, seed)."""
    queries = np.asarray(queries, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if queries.ndim != 2 or keys.ndim != 2 or queries.shape[1] != keys.shape[1]:
        raise ShapeError("queries and keys must be 2-D with equal width")
    if queries.shape[1] != cfg.in_dim:
        raise ShapeError(f"probe inputs have width {queries.shape[1]}, config says {cfg.in_dim}")
    if n_param_samples < 1:
        raise ParameterError("n_param_samples must be >= 1")
    m, n = queries.shape[0], keys.shape[0]
    probe_cfg = cfg if cfg.heads == 1 else replace(cfg, heads=1)
    h_src = Tensor(np.repeat(queries, n, axis=0))
    h_dst = Tensor(np.tile(keys, (m, 1)))
    rng = np.random.default_rng(seed)
    static = 0
    for _ in range(n_param_samples):
        params = init_scoring_params(probe_cfg, rng)
        s = score_pairs(probe_cfg, params, h_src, h_dst).data.reshape(m, n)
        winners = np.argmax(s, axis=1)  # first maximum = lowest key index
        if np.all(winners == winners[0]):
            static += 1
    return static / n_param_samples
