"""Kolmogorov-Arnold layers on uniform B-spline grids.

A layer holds one learnable univariate spline per (input, output) pair;
its output is the sum of the splines applied to each input coordinate.
Stacking layers composes them directly, with no activation in between.

The module also carries the zero-order "selector" splines used by the
ranking lab: indicator bumps on the half-open cells (l*d - 1, l*d], and the
closed-form coefficient assignment that reproduces any target score vector
on the circulant alignment matrix exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .tensor import Tensor, _shared_tape, _sigmoid


@dataclass(frozen=True)
class BSplineGrid:
    """Uniform knot grid: `grid_size` cells on [range_min, range_max],
    extended `order` knots past each end (order + grid_size basis functions).
    """

    range_min: float = -1.0
    range_max: float = 1.0
    grid_size: int = 4
    order: int = 1

    def __post_init__(self):
        if self.range_min >= self.range_max:
            raise ParameterError(f"empty grid range [{self.range_min}, {self.range_max}]")
        if self.grid_size < 1:
            raise ParameterError(f"grid_size must be >= 1, got {self.grid_size}")
        if not 0 <= self.order:
            raise ParameterError(f"order must be >= 0, got {self.order}")

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    @property
    def knots(self) -> np.ndarray:
        h = (self.range_max - self.range_min) / self.grid_size
        k = self.order
        return self.range_min + h * (np.arange(self.grid_size + 2 * k + 1) - k)


def _basis_and_deriv(x: np.ndarray, grid: BSplineGrid, with_deriv: bool):
    """Cox-de Boor over half-open cells (a, b]; inputs clamped to the range.

    Returns (basis, deriv) with trailing axis n_basis; deriv is None unless
    requested and is the derivative of the clamped evaluation, i.e. zero for
    points outside the range.
    """
    t = grid.knots
    k = grid.order
    flat = x.reshape(-1)
    xc = np.clip(flat, grid.range_min, grid.range_max)
    X = xc[:, None]
    B = ((t[None, :-1] < X) & (X <= t[None, 1:])).astype(np.float64)
    if k == 0:
        # (a, b] leaves the left endpoint uncovered; close it into cell 0
        B[xc <= grid.range_min, 0] = 1.0
        basis = B.reshape(*x.shape, grid.n_basis)
        return basis, (np.zeros_like(basis) if with_deriv else None)
    prev = None
    for m in range(1, k + 1):
        if m == k:
            prev = B
        cols = B.shape[1] - 1
        left = (X - t[None, :cols]) / (t[m : m + cols] - t[:cols])
        right = (t[None, m + 1 : m + 1 + cols] - X) / (t[m + 1 : m + 1 + cols] - t[1 : 1 + cols])
        B = left * B[:, :-1] + right * B[:, 1:]
    deriv = None
    if with_deriv:
        cols = B.shape[1]
        d_left = k / (t[k : k + cols] - t[:cols]) * prev[:, :-1]
        d_right = k / (t[k + 1 : k + 1 + cols] - t[1 : 1 + cols]) * prev[:, 1:]
        D = d_left - d_right
        D *= ((flat >= grid.range_min) & (flat <= grid.range_max))[:, None]
        deriv = D.reshape(*x.shape, grid.n_basis)
    return B.reshape(*x.shape, grid.n_basis), deriv


def bspline_basis(x, grid: BSplineGrid) -> np.ndarray:
    """Evaluate all basis functions of the grid at x (array or scalar)."""
    arr = np.asarray(x, dtype=np.float64)
    basis, _ = _basis_and_deriv(arr, grid, with_deriv=False)
    return basis


@dataclass
class KanLayer:
    """coefficients: (n_in, n_out, n_basis); optional silu residual mix."""

    n_in: int
    n_out: int
    grid: BSplineGrid
    coefficients: Tensor
    residual_weight: Tensor | None = None

    def __post_init__(self):
        want = (self.n_in, self.n_out, self.grid.n_basis)
        if tuple(self.coefficients.shape) != want:
            raise ShapeError(f"coefficients shape {self.coefficients.shape}, expected {want}")
        if self.residual_weight is not None and tuple(self.residual_weight.shape) != (self.n_in, self.n_out):
            raise ShapeError(
                f"residual_weight shape {self.residual_weight.shape}, expected {(self.n_in, self.n_out)}"
            )


def init_kan_layer(
    n_in: int,
    n_out: int,
    grid: BSplineGrid,
    rng: np.random.Generator,
    residual: bool = False,
) -> KanLayer:
    """Coefficients uniform in [-0.1, 0.1] scaled by 1/sqrt(n_in)."""
    if n_in < 1 or n_out < 1:
        raise ParameterError(f"layer dims must be positive, got {n_in}x{n_out}")
    coef = rng.uniform(-0.1, 0.1, size=(n_in, n_out, grid.n_basis)) / np.sqrt(n_in)
    rw = None
    if residual:
        rw = Tensor(rng.uniform(-0.1, 0.1, size=(n_in, n_out)) / np.sqrt(n_in))
    return KanLayer(n_in, n_out, grid, Tensor(coef), rw)


def kan_forward(layer: KanLayer, x: Tensor) -> Tensor:
    """Apply one layer to a (batch, n_in) input; differentiable w.r.t. the
    coefficients everywhere and w.r.t. the inputs except at knots for order 0.
    """
    if x.data.ndim != 2 or x.data.shape[1] != layer.n_in:
        raise ShapeError(f"kan_forward: input {x.data.shape}, layer expects (*, {layer.n_in})")
    coef = layer.coefficients
    rw = layer.residual_weight
    tape = _shared_tape(*(t for t in (x, coef, rw) if t is not None))
    need_dx = tape is not None and x.tape is not None
    basis, dbasis = _basis_and_deriv(x.data, layer.grid, with_deriv=need_dx)
    out = np.einsum("bip,iop->bo", basis, coef.data)
    if rw is not None:
        sig = _sigmoid(x.data)
        sx = x.data * sig
        out = out + sx @ rw.data
    if tape is None:
        return Tensor(out)

    xd = x.data

    def vjp(g):
        gx = None
        if need_dx:
            gx = np.einsum("bip,iop,bo->bi", dbasis, coef.data, g)
            if rw is not None:
                gx = gx + (g @ rw.data.T) * (sig * (1.0 + xd * (1.0 - sig)))
        gcoef = np.einsum("bip,bo->iop", basis, g)
        if rw is None:
            return gx, gcoef
        return gx, gcoef, sx.T @ g

    parents = (x, coef) if rw is None else (x, coef, rw)
    return tape.record(out, parents, vjp)


def kan_stack_forward(layers: list[KanLayer], x: Tensor) -> Tensor:
    """Sequential composition; no activation between layers."""
    if not layers:
        raise ParameterError("empty layer stack")
    h = x
    for i, layer in enumerate(layers):
        if h.data.shape[1] != layer.n_in:
            raise ShapeError(
                f"stack layer {i}: incoming width {h.data.shape[1]} != n_in {layer.n_in}"
            )
        h = kan_forward(layer, h)
    return h


# ---------------------------------------------------------------------------
# zero-order selector splines and the exact-fit construction


def bstar_eval(l: int, d: int, x) -> np.ndarray | float:
    """Indicator of the half-open cell (l*d - 1, l*d] for l in [1, d].

    On integer inputs in [1, d*d] this is 1 exactly when x == l*d, which is
    what makes one coefficient per row of the alignment matrix addressable.
    """
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    if not 1 <= l <= d:
        raise ParameterError(f"l must be in [1, {d}], got {l}")
    arr = np.asarray(x, dtype=np.float64)
    out = np.where((arr > l * d - 1) & (arr <= l * d), 1.0, 0.0)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def bstar_scores(c: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Score every row of P under the selector-spline KAN with coefficients c.

    s_j = sum_k sum_l c[k, l-1] * B*_l(P[j, k]); with P circulant each row
    activates exactly one coefficient.
    """
    c = np.asarray(c, dtype=np.float64)
    d = c.shape[0]
    if c.shape != (d, d):
        raise ShapeError(f"coefficient matrix must be square, got {c.shape}")
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != d:
        raise ShapeError(f"P must be (N, {d}), got {P.shape}")
    s = np.zeros(P.shape[0])
    for k in range(d):
        x = P[:, k]
        for l in range(1, d + 1):
            s += c[k, l - 1] * ((x > l * d - 1) & (x <= l * d))
    return s


def kaa_exact_fit(d: int, target_ranks) -> np.ndarray:
    """Coefficients (d x d) whose selector-KAN scores on the circulant
    alignment matrix equal target_ranks exactly.

    Row j (1-based) decomposes as j = alpha*d + beta + 1; its unique active
    coefficient is c[d - beta, alpha + 1] (1-based), which we simply set to
    the target.  The construction has d*d parameters and zero residual.
    """
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    t = np.asarray(target_ranks, dtype=np.float64)
    n = d * d
    if t.shape != (n,):
        raise ParameterError(f"target must have length {n}, got shape {t.shape}")
    if not np.array_equal(np.sort(t), np.arange(1, n + 1, dtype=np.float64)):
        raise ParameterError("target must be a permutation of 1..d*d")
    c = np.zeros((d, d))
    for j0 in range(n):
        alpha, beta = divmod(j0, d)
        c[d - beta - 1, alpha] = t[j0]
    return c
