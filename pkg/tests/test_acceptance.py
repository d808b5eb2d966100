"""End-to-end acceptance checklist.

Each test covers one numbered item and prints a single PASS/FAIL line
(visible under ``pytest -s``) so a full run reads as a report.  Tolerances
are stated inline; nothing here is approximate beyond them.

Item 8 trains real models for 500 epochs x 5 seeds x 2 variants and
dominates the runtime of this module.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from kaa.attention import ScoringConfig, static_attention_probe
from kaa.cli import GRADCHECK_TOLERANCE, _iter_gradchecks
from kaa.gnn import ModelConfig, TrainConfig, train
from kaa.graph import gen_dictionary_lookup, gen_sbm
from kaa.kan import bstar_scores, kaa_exact_fit
from kaa.mrd import (
    bound_lt,
    bound_mlp,
    build_circulant_P,
    check_theorem1,
    mrd_bruteforce_lt,
    mrd_mlp_construction,
)
from kaa.tensor import Tensor
from kaa.attention import normalize


def _line(item: int, ok: bool, detail: str) -> None:
    print(f"[{item}] {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# 1. exhaustive linear-family oracle meets its closed-form lower bound


def test_01_linear_oracle_meets_lower_bound():
    rep2 = mrd_bruteforce_lt(build_circulant_P(2))
    rep3 = mrd_bruteforce_lt(build_circulant_P(3))
    ok = (
        rep2.oracle_value >= math.sqrt(5.0) - 1e-9
        and rep3.oracle_value >= math.sqrt(59.5) - 1e-9
        and rep3.mode == "exhaustive"
        and rep3.elapsed_ms < 300_000.0
    )
    _line(
        1,
        ok,
        f"linear oracle d=2 {rep2.oracle_value:.9f} >= sqrt(5)-1e-9, "
        f"d=3 {rep3.oracle_value:.9f} >= sqrt(59.5)-1e-9 "
        f"({rep3.elapsed_ms / 1000.0:.1f}s exhaustive)",
    )
    assert ok


# ---------------------------------------------------------------------------
# 2. selector-spline KAN fits every target ranking exactly


def _exact_fit_residual(d: int, target: np.ndarray) -> float:
    coef = kaa_exact_fit(d, target)
    scores = bstar_scores(coef, build_circulant_P(d).values)
    return float(np.linalg.norm(scores - target))

def test_02_kan_exact_fit_zero_residual():
    from itertools import permutations

    worst = 0.0
    for perm in permutations(range(1, 5)):
        worst = max(worst, _exact_fit_residual(2, np.asarray(perm, dtype=np.float64)))
    rng = np.random.default_rng(0)
    for d in (3, 4):
        n = d * d
        for _ in range(1000):
            target = rng.permutation(n).astype(np.float64) + 1.0
            worst = max(worst, _exact_fit_residual(d, target))
    ok = worst <= 1e-12
    _line(2, ok, f"exact-fit residual worst {worst:.3e} <= 1e-12 "
                 "(all 24 targets at d=2, 1000 sampled at d=3 and d=4)")
    assert ok


# ---------------------------------------------------------------------------
# 3. hidden-layer construction stays under the closed-form bound


def test_03_mlp_construction_respects_bound():
    parts = []
    ok = True
    for d in (2, 3):
        rep = mrd_mlp_construction(build_circulant_P(d))
        cap = bound_lt(d * d, d)
        ok = ok and rep.oracle_value <= cap + 1e-9 and "unverified" in rep.notes
        parts.append(f"d={d} worst {rep.oracle_value:.9f} <= {cap:.9f}+1e-9")
    for d in range(2, 9):
        ok = ok and bound_mlp(d * d, d)[1] == bound_lt(d * d, d)
    _line(3, ok, "; ".join(parts) + "; upper == linear bound exactly for d=2..8; "
                 "lower bound reported analytically (unverified)")
    assert ok


# ---------------------------------------------------------------------------
# 4. the three families order as kan <= construction <= linear


def test_04_family_ordering():
    parts = []
    ok = True
    for d in (2, 3):
        rep = check_theorem1(d)
        kan_v, mlp_v, lt_v = rep.triple
        ok = ok and rep.ordered and kan_v <= mlp_v <= lt_v
        parts.append(f"d={d} ({kan_v:.3e}, {mlp_v:.6f}, {lt_v:.6f})")
    _line(4, ok, "non-decreasing triples: " + "; ".join(parts))
    assert ok


# ---------------------------------------------------------------------------
# 5. argmax-key staticness probe separates the two scoring forms


def test_05_static_attention_probe():
    rng = np.random.default_rng(7)
    queries = rng.normal(size=(6, 5))
    keys = rng.normal(size=(8, 5))
    base = dict(in_dim=5, proj_dim=4, variant="original")
    frac_gat = static_attention_probe(
        ScoringConfig(backbone="gat", **base), queries, keys, n_param_samples=200, seed=11
    )
    frac_mod = static_attention_probe(
        ScoringConfig(backbone="gat_modified", **base), queries, keys, n_param_samples=200, seed=11
    )
    ok = frac_gat == 1.0 and frac_mod < 1.0
    _line(5, ok, f"argmax static fraction over 200 draws: plain {frac_gat:.3f} == 1.0, "
                 f"sign-flipped {frac_mod:.3f} < 1.0")
    assert ok


# ---------------------------------------------------------------------------
# 6. analytic gradients match finite differences everywhere


def test_06_gradient_correctness():
    records = list(_iter_gradchecks(n_points=20, seed=3))
    worst_name, worst = max(records, key=lambda kv: kv[1])
    ok = worst < GRADCHECK_TOLERANCE and len(records) == 11 + 32
    _line(6, ok, f"{len(records)} checks (11 scoring variants, 32 spline layers), "
                 f"worst rel err {worst:.3e} ({worst_name}) < 1e-4")
    assert ok


# ---------------------------------------------------------------------------
# 7. attention weights normalize and are shift-invariant at 1000 nodes


def test_07_normalization_invariants():
    rng = np.random.default_rng(23)
    n = 1000
    # ring guarantees every node has at least one in-edge, extras randomize
    dst = np.concatenate([np.arange(n), rng.integers(0, n, size=4 * n)])
    order = np.argsort(dst, kind="stable")
    dst = dst[order]
    scores = rng.normal(size=dst.shape[0])
    w = normalize(Tensor(scores), dst, n).data
    sums = np.zeros(n)
    np.add.at(sums, dst, w)
    shift = rng.normal(size=n)
    w2 = normalize(Tensor(scores + shift[dst]), dst, n).data
    sum_err = float(np.abs(sums - 1.0).max())
    shift_err = float(np.abs(w2 - w).max())
    ok = sum_err <= 1e-9 and shift_err <= 1e-12
    _line(7, ok, f"{n}-node random graph: per-node weight sums off by {sum_err:.2e} <= 1e-9, "
                 f"per-segment shift moves weights by {shift_err:.2e} <= 1e-12")
    assert ok


# ---------------------------------------------------------------------------
# 8. behavioral separation on the dictionary-lookup benchmark
#
# Both arms share the benchmark recipe (2 layers, hidden 32, lr 5e-3,
# dropout 0.3, 500 epochs); the spline-scoring arm additionally sets its
# scoring-stack shape, which is an architecture choice, not a tuning knob
# of the shared recipe.

LOOKUP_SEEDS = (0, 1, 2, 3, 4)
LOOKUP_EPOCHS = 500
LOOKUP_LR = 5e-3
LOOKUP_SHARED: dict = dict(dropout=0.3)
LOOKUP_KAA_KNOBS: dict = dict(kan_input_tanh=True, kan_grid_size=4, kan_hidden=8)


def _lookup_accuracy(variant: str, seed: int, **knobs) -> float:
    coll = gen_dictionary_lookup(5, seed=seed)
    cfg = ModelConfig(
        backbone="gat",
        variant=variant,
        task_head="node_softmax",
        num_layers=2,
        hidden_dim=32,
        **knobs,
    )
    tcfg = TrainConfig(lr=LOOKUP_LR, epochs=LOOKUP_EPOCHS, seed=seed, patience=LOOKUP_EPOCHS)
    return train(coll, cfg, tcfg).metrics.accuracy


def test_08_lookup_separation():
    kaa = [_lookup_accuracy("kaa", s, **LOOKUP_SHARED, **LOOKUP_KAA_KNOBS) for s in LOOKUP_SEEDS]
    gat = [_lookup_accuracy("original", s, **LOOKUP_SHARED) for s in LOOKUP_SEEDS]
    m_kaa, m_gat = float(np.mean(kaa)), float(np.mean(gat))
    ok = m_kaa >= 0.90 and m_kaa - m_gat >= 0.15
    _line(8, ok, f"5-seed mean test accuracy: spline scoring {m_kaa:.3f} >= 0.90, "
                 f"linear scoring {m_gat:.3f}, margin {m_kaa - m_gat:.3f} >= 0.15")
    assert ok


# ---------------------------------------------------------------------------
# 9. identical configuration and seed reproduce reports exactly


def test_09_determinism():
    g = gen_sbm(2, 10, 0.9, 0.05, seed=5)
    cfg = ModelConfig(backbone="gat", variant="kaa", task_head="node_softmax",
                      num_layers=2, hidden_dim=8)
    tcfg = TrainConfig(lr=0.01, epochs=15, seed=5)
    runs = [train(g, cfg, tcfg) for _ in range(2)]
    reports = []
    for r in runs:
        rep = dict(r.report)
        rep.pop("elapsed_ms")
        reports.append(rep)
    ok = (
        reports[0] == reports[1]
        and runs[0].metrics.accuracy == runs[1].metrics.accuracy
        and all(np.array_equal(runs[0].params[k], runs[1].params[k]) for k in runs[0].params)
    )
    _line(9, ok, "two identical runs: reports, test metrics and parameters byte-equal")
    assert ok
