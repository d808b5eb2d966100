"""Spline bases, KAN layers, selector splines and the exact-fit constructor."""
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kaa.errors import ParameterError, ShapeError
from kaa.kan import (
    BSplineGrid,
    KanLayer,
    bspline_basis,
    bstar_eval,
    bstar_scores,
    init_kan_layer,
    kaa_exact_fit,
    kan_forward,
    kan_stack_forward,
)
from kaa.mrd import build_circulant_P
from kaa.tensor import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    backward,
    finite_diff_check,
    masked_mse,
    reshape,
    sum_all,
)


def test_grid_validation():
    with pytest.raises(ParameterError):
        BSplineGrid(range_min=1.0, range_max=1.0)
    with pytest.raises(ParameterError):
        BSplineGrid(grid_size=0)
    with pytest.raises(ParameterError):
        BSplineGrid(order=-1)


def test_grid_knot_layout():
    g = BSplineGrid(range_min=0.0, range_max=2.0, grid_size=2, order=1)
    np.testing.assert_allclose(g.knots, [-1.0, 0.0, 1.0, 2.0, 3.0])
    assert g.n_basis == 3


def test_order0_indicator_cells():
    g = BSplineGrid(range_min=0.0, range_max=2.0, grid_size=2, order=0)
    np.testing.assert_array_equal(bspline_basis(np.array([0.5]), g)[0], [1.0, 0.0])
    np.testing.assert_array_equal(bspline_basis(np.array([1.5]), g)[0], [0.0, 1.0])
    # half-open cells (a, b]: the knot itself belongs to the left cell
    np.testing.assert_array_equal(bspline_basis(np.array([1.0]), g)[0], [1.0, 0.0])
    # the left boundary has no left cell; it closes into the first one
    np.testing.assert_array_equal(bspline_basis(np.array([0.0]), g)[0], [1.0, 0.0])


def test_order1_hat_at_interior_knot():
    g = BSplineGrid(range_min=-1.0, range_max=1.0, grid_size=4, order=1)
    b = bspline_basis(np.array([0.0]), g)[0]
    center = np.argmax(b)
    assert b[center] == pytest.approx(1.0, abs=1e-12)
    others = np.delete(b, center)
    np.testing.assert_allclose(others, 0.0, atol=1e-12)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_partition_of_unity(order):
    g = BSplineGrid(range_min=-2.0, range_max=3.0, grid_size=5, order=order)
    x = np.random.default_rng(7).uniform(-2.0, 3.0, size=1000)
    sums = bspline_basis(x, g).sum(axis=1)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


def test_out_of_range_inputs_clamp():
    g = BSplineGrid(range_min=-1.0, range_max=1.0, grid_size=4, order=2)
    low = bspline_basis(np.array([-9.0]), g)
    hi = bspline_basis(np.array([42.0]), g)
    np.testing.assert_array_equal(low, bspline_basis(np.array([-1.0]), g))
    np.testing.assert_array_equal(hi, bspline_basis(np.array([1.0]), g))


def test_kan_forward_zero_coefficients():
    g = BSplineGrid(grid_size=3, order=1)
    layer = KanLayer(2, 3, g, Tensor(np.zeros((2, 3, g.n_basis))))
    out = kan_forward(layer, Tensor(np.random.default_rng(1).normal(size=(5, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((5, 3)))


def test_kan_forward_single_cell_weight():
    g = BSplineGrid(range_min=0.0, range_max=2.0, grid_size=2, order=0)
    coef = np.zeros((1, 1, 2))
    coef[0, 0, 1] = 3.0  # weight the (1, 2] cell
    layer = KanLayer(1, 1, g, Tensor(coef))
    x = Tensor(np.array([[0.5], [1.5], [2.0]]))
    np.testing.assert_array_equal(kan_forward(layer, x).data[:, 0], [0.0, 3.0, 3.0])


def test_kan_forward_width_mismatch():
    g = BSplineGrid()
    layer = KanLayer(2, 1, g, Tensor(np.zeros((2, 1, g.n_basis))))
    with pytest.raises(ShapeError):
        kan_forward(layer, Tensor(np.zeros((4, 3))))


def test_kan_linear_in_coefficients():
    g = BSplineGrid(grid_size=4, order=2)
    rng = np.random.default_rng(3)
    c1 = rng.normal(size=(3, 2, g.n_basis))
    c2 = rng.normal(size=(3, 2, g.n_basis))
    x = Tensor(rng.uniform(-1, 1, size=(10, 3)))
    out1 = kan_forward(KanLayer(3, 2, g, Tensor(c1)), x).data
    out2 = kan_forward(KanLayer(3, 2, g, Tensor(c2)), x).data
    both = kan_forward(KanLayer(3, 2, g, Tensor(c1 + c2)), x).data
    np.testing.assert_allclose(both, out1 + out2, atol=1e-12)


@pytest.mark.parametrize("order,grid_size", [(0, 4), (1, 1), (1, 8), (2, 4), (3, 2)])
def test_coefficient_gradients(order, grid_size):
    g = BSplineGrid(range_min=-1.0, range_max=1.0, grid_size=grid_size, order=order)
    rng = np.random.default_rng(11)
    layer = init_kan_layer(2, 2, g, rng, residual=True)
    x = rng.uniform(-0.95, 0.95, size=(6, 2))
    # keep clear of the knots so order-0 steps cannot fall inside the probe
    x += 2e-3 * (np.abs(x[..., None] - g.knots).min(axis=-1) < 1e-3)

    def f(ct):
        probe = KanLayer(2, 2, g, ct, layer.residual_weight)
        return sum_all(kan_forward(probe, Tensor(x)))

    assert finite_diff_check(f, layer.coefficients.data) < 1e-4


def test_input_gradients_smooth_region():
    g = BSplineGrid(range_min=-1.0, range_max=1.0, grid_size=4, order=3)
    rng = np.random.default_rng(13)
    layer = init_kan_layer(3, 2, g, rng, residual=True)
    x = rng.uniform(-0.9, 0.9, size=(4, 3))
    err = finite_diff_check(lambda xt: sum_all(kan_forward(layer, xt)), x)
    assert err < 1e-5


def test_stack_single_layer_is_forward():
    g = BSplineGrid(grid_size=3, order=1)
    rng = np.random.default_rng(5)
    layer = init_kan_layer(2, 2, g, rng)
    x = Tensor(rng.uniform(-1, 1, size=(7, 2)))
    np.testing.assert_array_equal(
        kan_stack_forward([layer], x).data, kan_forward(layer, x).data
    )


def test_stack_second_layer_zero():
    g = BSplineGrid(grid_size=3, order=1)
    rng = np.random.default_rng(5)
    first = init_kan_layer(2, 2, g, rng)
    second = KanLayer(2, 2, g, Tensor(np.zeros((2, 2, g.n_basis))))
    out = kan_stack_forward([first, second], Tensor(rng.uniform(-1, 1, size=(4, 2))))
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_stack_width_mismatch_names_layer():
    g = BSplineGrid()
    rng = np.random.default_rng(5)
    a = init_kan_layer(2, 3, g, rng)
    b = init_kan_layer(4, 1, g, rng)
    with pytest.raises(ShapeError, match="layer 1"):
        kan_stack_forward([a, b], Tensor(np.zeros((2, 2))))


def test_two_layer_stack_fits_smooth_function():
    """500 Adam steps take a 1->1->1 stack to MSE below 1e-2 on sin(3x)+x^2."""
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 256).reshape(-1, 1)
    y = np.sin(3 * x[:, 0]) + x[:, 0] ** 2
    g_in = BSplineGrid(range_min=-1, range_max=1, grid_size=8, order=3)
    g_out = BSplineGrid(range_min=-3, range_max=3, grid_size=8, order=3)
    l0 = init_kan_layer(1, 1, g_in, rng, residual=True)
    l1 = init_kan_layer(1, 1, g_out, rng, residual=True)
    params = {
        "c0": l0.coefficients.data,
        "r0": l0.residual_weight.data,
        "c1": l1.coefficients.data,
        "r1": l1.residual_weight.data,
    }
    state = AdamState.for_params(params)
    loss_val = np.inf
    for _ in range(500):
        tape = Tape()
        p = {k: tape.leaf(v) for k, v in params.items()}
        stack = [
            KanLayer(1, 1, g_in, p["c0"], p["r0"]),
            KanLayer(1, 1, g_out, p["c1"], p["r1"]),
        ]
        pred = reshape(kan_stack_forward(stack, Tensor(x)), (256,))
        loss = masked_mse(pred, y)
        loss_val = float(loss.data)
        all_grads = backward(tape, loss)
        grads = {k: all_grads[t.tape_id] for k, t in p.items()}
        params = adam_step(params, grads, state, lr=0.05)
    assert loss_val < 1e-2


# ---------------------------------------------------------------------------
# selector splines and the exact fit


def test_bstar_point_values():
    assert bstar_eval(1, 2, 1.5) == 1.0
    assert bstar_eval(1, 2, 0.5) == 0.0
    assert bstar_eval(1, 2, 1.0) == 0.0
    assert bstar_eval(2, 2, 4.0) == 1.0
    assert bstar_eval(2, 2, 3.0) == 0.0


def test_bstar_l_validation():
    with pytest.raises(ParameterError):
        bstar_eval(0, 2, 1.0)
    with pytest.raises(ParameterError):
        bstar_eval(3, 2, 1.0)


@pytest.mark.parametrize("d", range(2, 9))
def test_bstar_integer_activation(d):
    for l in range(1, d + 1):
        for x in range(1, d * d + 1):
            assert bstar_eval(l, d, float(x)) == (1.0 if x == l * d else 0.0)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_one_selector_per_alignment_row(d):
    P = build_circulant_P(d)
    hits = np.zeros(P.values.shape[0], dtype=int)
    for l in range(1, d + 1):
        for j in range(P.values.shape[0]):
            hits[j] += int(sum(bstar_eval(l, d, v) for v in P.values[j]))
    np.testing.assert_array_equal(hits, 1)


def test_exact_fit_named_coefficients():
    c = kaa_exact_fit(2, (2, 4, 1, 3))
    # 1-based: c_{2,1}=2, c_{1,1}=4, c_{2,2}=1, c_{1,2}=3
    assert c[1, 0] == 2 and c[0, 0] == 4 and c[1, 1] == 1 and c[0, 1] == 3
    scores = bstar_scores(c, build_circulant_P(2).values)
    np.testing.assert_array_equal(scores, [2, 4, 1, 3])


def test_exact_fit_identity_target():
    c = kaa_exact_fit(2, (1, 2, 3, 4))
    scores = bstar_scores(c, build_circulant_P(2).values)
    np.testing.assert_array_equal(scores, [1, 2, 3, 4])


def test_exact_fit_all_permutations_d2():
    P = build_circulant_P(2)
    for perm in itertools.permutations(range(1, 5)):
        scores = bstar_scores(kaa_exact_fit(2, perm), P.values)
        assert np.max(np.abs(scores - np.asarray(perm))) == 0.0


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_exact_fit_random_permutations_d3(seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(9) + 1
    scores = bstar_scores(kaa_exact_fit(3, perm), build_circulant_P(3).values)
    np.testing.assert_array_equal(scores, perm)


def test_exact_fit_rejects_non_permutation():
    with pytest.raises(ParameterError):
        kaa_exact_fit(2, (1, 1, 3, 4))
    with pytest.raises(ParameterError):
        kaa_exact_fit(2, (0, 1, 2, 3))


def test_init_kan_layer_scale():
    g = BSplineGrid()
    rng = np.random.default_rng(0)
    layer = init_kan_layer(16, 4, g, rng)
    assert np.abs(layer.coefficients.data).max() <= 0.1 / 4.0
    assert layer.residual_weight is None
