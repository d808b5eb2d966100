"""Ranking-distance lab: how far can a scoring family be forced from a target
ranking of a fixed neighborhood?

Everything here works on the circulant alignment matrix P (N = d*d rows of d
consecutive integers, wrapping mod N).  Three scoring families are compared:

* linear scores P @ W              -- exhaustive least-squares oracle
* one-hidden-layer ReLU scores     -- an explicit worst-case construction
* selector-spline KAN scores       -- exact fit, residual zero

Targets are rank vectors: t[j] is the rank (1..N) assigned to row j.  The
worst case over targets is found by enumerating all N! rank vectors when
feasible and by seeded sampling otherwise.
"""
from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ContractViolationError,
    DegeneracyError,
    ParameterError,
    ShapeError,
    SizeError,
    TheoremCheckError,
)
from .kan import bstar_scores, kaa_exact_fit

RIDGE = 1e-12
_CHUNK = 40320  # permutations per scan batch


# ---------------------------------------------------------------------------
# rankings


@dataclass(frozen=True)
class Ranking:
    """perm[r] = node holding rank r+1; inverse[i] = rank of node i (1-based)."""

    perm: np.ndarray
    inverse: np.ndarray

    @classmethod
    def from_inverse(cls, inverse) -> "Ranking":
        inv = np.asarray(inverse, dtype=np.int64)
        n = inv.shape[0]
        if not np.array_equal(np.sort(inv), np.arange(1, n + 1)):
            raise ParameterError("inverse must assign each rank 1..N exactly once")
        perm = np.empty(n, dtype=np.int64)
        perm[inv - 1] = np.arange(n)
        return cls(perm=perm, inverse=inv)

    @property
    def n(self) -> int:
        return self.perm.shape[0]


def importance_ranking(scores) -> Ranking:
    """Ascending ranking of scores; ties go to the lower node index."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ParameterError(f"scores must be a non-empty vector, got shape {s.shape}")
    if np.any(np.isnan(s)):
        raise ParameterError("scores contain NaN")
    order = np.argsort(s, kind="stable")
    inverse = np.empty(s.size, dtype=np.int64)
    inverse[order] = np.arange(1, s.size + 1)
    return Ranking(perm=order, inverse=inverse)


def ranking_distance(a: Ranking, b: Ranking) -> float:
    if a.n != b.n:
        raise ParameterError(f"rankings of different sizes: {a.n} vs {b.n}")
    diff = a.inverse.astype(np.float64) - b.inverse.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


# ---------------------------------------------------------------------------
# alignment matrix and least squares


@dataclass(frozen=True)
class AlignmentMatrixP:
    d: int
    n: int
    values: np.ndarray  # (n, d) float64


def build_circulant_P(d: int) -> AlignmentMatrixP:
    """Row j holds the d consecutive integers starting at j+1, wrapping mod N."""
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    n = d * d
    j = np.arange(n)[:, None]
    k = np.arange(d)[None, :]
    values = ((j + k) % n + 1).astype(np.float64)
    return AlignmentMatrixP(d=d, n=n, values=values)


def _as_matrix(P) -> np.ndarray:
    if isinstance(P, AlignmentMatrixP):
        return P.values
    arr = np.asarray(P, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"alignment matrix must be 2-D, got shape {arr.shape}")
    return arr


def _as_target(target, n: int) -> np.ndarray:
    if isinstance(target, Ranking):
        t = target.inverse.astype(np.float64)
    else:
        t = np.asarray(target, dtype=np.float64)
    if t.shape != (n,):
        raise ShapeError(f"target must have length {n}, got shape {t.shape}")
    return t


def ls_min_residual(P, target) -> tuple[float, np.ndarray]:
    """Best least-squares weights for P @ W ~ target via ridge-stabilized
    normal equations; returns (residual norm, W)."""
    A = _as_matrix(P)
    t = _as_target(target, A.shape[0])
    gram = A.T @ A + RIDGE * np.eye(A.shape[1])
    w = np.linalg.solve(gram, A.T @ t)
    return float(np.linalg.norm(A @ w - t)), w


def _residual_projector(A: np.ndarray) -> np.ndarray:
    gram = A.T @ A + RIDGE * np.eye(A.shape[1])
    return np.eye(A.shape[0]) - A @ np.linalg.solve(gram, A.T)


# ---------------------------------------------------------------------------
# worst-case scans over rank vectors


def _worker_count() -> int:
    env = os.environ.get("KAA_WORKERS")
    if env is None:
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise ParameterError(f"KAA_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise ParameterError(f"KAA_WORKERS must be >= 1, got {n}")
    return n


def _perm_chunks(n: int):
    it = itertools.permutations(range(1, n + 1))
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.asarray(block, dtype=np.float64)


def _sampled_chunks(n: int, count: int, seed: int):
    rng = np.random.default_rng(seed)
    done = 0
    while done < count:
        take = min(_CHUNK, count - done)
        block = np.empty((take, n))
        for i in range(take):
            block[i] = rng.permutation(n) + 1
        done += take
        yield block


def _scan_chunk(Q: np.ndarray, chunk: np.ndarray) -> tuple[float, np.ndarray]:
    r = np.linalg.norm(chunk @ Q, axis=1)
    i = int(np.argmax(r))
    return float(r[i]), chunk[i]


def _merge(a: tuple[float, np.ndarray] | None, b: tuple[float, np.ndarray]):
    """Max-reduction; exact ties keep the lexicographically smaller witness."""
    if a is None:
        return b
    if b[0] > a[0]:
        return b
    if b[0] == a[0] and tuple(b[1]) < tuple(a[1]):
        return b
    return a


def _max_residual(A: np.ndarray, chunks) -> tuple[float, np.ndarray]:
    Q = _residual_projector(A)  # symmetric, so chunk @ Q gives row residual vectors
    best = None
    workers = _worker_count()
    if workers == 1:
        for chunk in chunks:
            best = _merge(best, _scan_chunk(Q, chunk))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(lambda c: _scan_chunk(Q, c), chunks):
                best = _merge(best, result)
    if best is None:
        raise ContractViolationError("no rank vectors to scan")
    return best


# ---------------------------------------------------------------------------
# closed-form bounds


def lt_bound_formula(N: int, d: int) -> float:
    """Raw closed form; no constraint between N and d (monotone in N)."""
    return float(np.sqrt((N**3 - N - d**3 + 3 * d**2 - 2 * d) / 12.0))


def bound_lt(N: int, d: int) -> float:
    """Lower bound on the worst linear-scoring residual on the circulant P."""
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    if N != d * d:
        raise ParameterError(f"N must equal d*d, got N={N}, d={d}")
    return lt_bound_formula(N, d)


def bound_mlp(N: int, d: int) -> tuple[float, float]:
    """(lower, upper) for the one-hidden-layer family; the upper coincides
    with bound_lt by construction.  The lower is analytic only: nothing in
    this lab verifies it against an oracle."""
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    if N != d * d:
        raise ParameterError(f"N must equal d*d, got N={N}, d={d}")
    lam = d**3 - 3 * d**2 + 2 * d
    upper = np.sqrt((N**3 - N - lam) / 12.0)
    m = N - d
    lower = np.sqrt((m**3 - m - lam) / 12.0)
    return float(lower), float(upper)


# ---------------------------------------------------------------------------
# reports


@dataclass
class MrdReport:
    family: str
    d: int
    n: int
    oracle_value: float
    lower_bound: float | None
    upper_bound: float | None
    witness: list[int] | None
    elapsed_ms: float
    mode: str  # "exhaustive" | "sampled"
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "d": self.d,
            "N": self.n,
            "oracle": self.oracle_value,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "witness": self.witness,
            "elapsed_ms": self.elapsed_ms,
            "mode": self.mode,
            "notes": self.notes,
        }


def _witness_list(w: np.ndarray) -> list[int]:
    return [int(v) for v in w]


# ---------------------------------------------------------------------------
# family oracles


def mrd_bruteforce_lt(P, sampled: int | None = None, seed: int = 0) -> MrdReport:
    """Worst least-squares residual of the linear family over rank vectors.

    Exhaustive over all N! targets for d <= 3.  Larger d must opt into
    sampling, which only certifies a lower bound on the true worst case.
    """
    A = _as_matrix(P)
    n = A.shape[0]
    d = A.shape[1]
    t0 = time.perf_counter()
    if sampled is None:
        if d > 3:
            raise SizeError(f"exhaustive scan of {n}! targets refused for d={d}; pass sampled=")
        chunks = _perm_chunks(n)
        mode = "exhaustive"
    else:
        if sampled < 1:
            raise ParameterError(f"sampled must be >= 1, got {sampled}")
        chunks = _sampled_chunks(n, sampled, seed)
        mode = "sampled"
    value, witness = _max_residual(A, chunks)
    elapsed = (time.perf_counter() - t0) * 1000.0
    lower = bound_lt(n, d) if n == d * d else None
    report = MrdReport(
        family="lt",
        d=d,
        n=n,
        oracle_value=value,
        lower_bound=lower,
        upper_bound=None,
        witness=_witness_list(witness),
        elapsed_ms=elapsed,
        mode=mode,
        notes="sampled mode certifies only a lower bound on the worst case" if mode == "sampled" else "",
    )
    if mode == "exhaustive" and lower is not None and value < lower - 1e-9:
        raise TheoremCheckError(
            f"linear-family oracle {value:.12f} fell below its lower bound {lower:.12f} (d={d})"
        )
    return report


def lt_rank_mrd_2d(P) -> tuple[float, list[tuple[int, ...]]]:
    """Rank-level worst case for d=2 by sweeping score directions.

    Orderings only change where a direction crosses a hyperplane orthogonal
    to some row difference, so sampling one direction per arc between
    consecutive critical angles enumerates every achievable ordering.
    Returns (worst min distance, sorted census of achievable rank vectors).
    """
    A = _as_matrix(P)
    n = A.shape[0]
    if A.shape[1] != 2:
        raise ParameterError(f"angular sweep is 2-D only, got {A.shape[1]} columns")
    angles = set()
    for i in range(n):
        for j in range(i + 1, n):
            diff = A[i] - A[j]
            if np.allclose(diff, 0.0):
                raise DegeneracyError(f"duplicate rows {i} and {j} in alignment matrix")
            base = float(np.arctan2(diff[1], diff[0]))
            angles.add((base + np.pi / 2) % (2 * np.pi))
            angles.add((base - np.pi / 2) % (2 * np.pi))
    crit = sorted(angles)
    achievable: set[tuple[int, ...]] = set()
    for a, b in zip(crit, crit[1:] + [crit[0] + 2 * np.pi]):
        theta = (a + b) / 2.0
        w = np.array([np.cos(theta), np.sin(theta)])
        achievable.add(tuple(importance_ranking(A @ w).inverse.tolist()))
    census = sorted(achievable)
    ach = np.asarray(census, dtype=np.float64)
    worst = 0.0
    for target in itertools.permutations(range(1, n + 1)):
        t = np.asarray(target, dtype=np.float64)
        dmin = float(np.min(np.linalg.norm(ach - t, axis=1)))
        worst = max(worst, dmin)
    return worst, census


def mlp_construction_matrix(P) -> tuple[np.ndarray, np.ndarray]:
    """Hidden representations H = relu(P @ W1) realizing the column-reduction
    argument: the first N+1-d rows of H are constant, the trailing (d-1) rows
    contain a full-rank block, so one output weight vector pins the tail
    exactly and fits the head by a constant.

    Returns (H, W1); raises if the produced H loses that structure.
    """
    A = _as_matrix(P)
    n, d = A.shape
    if d < 2:
        raise ParameterError(f"d must be >= 2, got {d}")
    # column ops: first differences, then scaled second differences
    T1 = np.eye(d)
    for k in range(1, d):
        T1[k - 1, k] = -1.0
    T2 = np.eye(d)
    for k in range(2, d):
        T2[k, k] = 1.0 / n
        T2[k - 1, k] = -1.0 / n
    U = T1 @ T2
    cols = [U[:, 1]] + [U[:, m] for m in range(2, d)] + [-U[:, d - 1]]
    W1 = np.stack(cols, axis=1)
    H = np.maximum(A @ W1, 0.0)
    head = n + 1 - d
    if not np.allclose(H[:head], H[0], atol=1e-9):
        raise ContractViolationError("construction lost its constant head rows")
    tail_block = H[head:, 1:]
    if np.linalg.matrix_rank(tail_block, tol=1e-9) != d - 1:
        raise ContractViolationError("construction tail block is rank deficient")
    return H, W1


def mlp_upper_construction(P, target) -> float:
    """Residual the explicit hidden-layer construction achieves on one target."""
    A = _as_matrix(P)
    H, _ = mlp_construction_matrix(A)
    t = _as_target(target, A.shape[0])
    residual, _ = ls_min_residual(H, t)
    return residual


def mrd_mlp_construction(P, sampled: int | None = None, seed: int = 0) -> MrdReport:
    """Worst-case residual of the explicit construction over rank vectors.

    This is an achieved value for one member of the hidden-layer family, so
    it upper-bounds nothing and lower-bounds everything: the family's true
    worst case sits at or below it.  The analytic lower bound is reported
    as-is and never oracle-verified.
    """
    A = _as_matrix(P)
    n, d = A.shape
    H, _ = mlp_construction_matrix(A)
    t0 = time.perf_counter()
    if sampled is None:
        if d > 3:
            raise SizeError(f"exhaustive scan of {n}! targets refused for d={d}; pass sampled=")
        chunks = _perm_chunks(n)
        mode = "exhaustive"
    else:
        if sampled < 1:
            raise ParameterError(f"sampled must be >= 1, got {sampled}")
        chunks = _sampled_chunks(n, sampled, seed)
        mode = "sampled"
    value, witness = _max_residual(H, chunks)
    elapsed = (time.perf_counter() - t0) * 1000.0
    lower = upper = None
    if n == d * d:
        lower, upper = bound_mlp(n, d)
        if value > upper + 1e-9:
            raise TheoremCheckError(
                f"construction worst case {value:.12f} exceeded its bound {upper:.12f} (d={d})"
            )
    return MrdReport(
        family="mlp",
        d=d,
        n=n,
        oracle_value=value,
        lower_bound=lower,
        upper_bound=upper,
        witness=_witness_list(witness),
        elapsed_ms=elapsed,
        mode=mode,
        notes="lower bound is analytic, unverified",
    )


def kaa_mrd(P, n_samples: int = 1000, seed: int = 0) -> MrdReport:
    """Max exact-fit residual of the selector-spline KAN over targets.

    d=2 enumerates all 24 rank vectors; larger d samples n_samples of them.
    The construction is exact, so the residual is zero to the last bit; any
    nonzero maximum is a bug worth failing loudly over.
    """
    A = _as_matrix(P)
    n, d = A.shape
    if n != d * d:
        raise ParameterError(f"selector fit needs the circulant layout, got {A.shape}")
    t0 = time.perf_counter()
    if d == 2:
        targets = [np.asarray(p, dtype=np.float64) for p in itertools.permutations((1, 2, 3, 4))]
        mode = "exhaustive"
    else:
        if n_samples < 1:
            raise ParameterError(f"n_samples must be >= 1, got {n_samples}")
        rng = np.random.default_rng(seed)
        targets = [rng.permutation(n) + 1.0 for _ in range(n_samples)]
        mode = "sampled"
    best: tuple[float, np.ndarray] | None = None
    for t in targets:
        c = kaa_exact_fit(d, t)
        residual = float(np.linalg.norm(bstar_scores(c, A) - t))
        best = _merge(best, (residual, t))
    elapsed = (time.perf_counter() - t0) * 1000.0
    value, witness = best
    return MrdReport(
        family="kaa",
        d=d,
        n=n,
        oracle_value=value,
        lower_bound=0.0,
        upper_bound=0.0,
        witness=_witness_list(witness),
        elapsed_ms=elapsed,
        mode=mode,
        notes="exact construction; parameter count d*d",
    )


@dataclass
class Theorem1Report:
    d: int
    triple: tuple[float, float, float]  # (kan, hidden-layer construction, linear)
    ordered: bool
    reports: dict[str, MrdReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "triple": list(self.triple),
            "ordered": self.ordered,
            "reports": {k: v.to_dict() for k, v in self.reports.items()},
        }


def check_theorem1(d: int, seed: int = 0) -> Theorem1Report:
    """Check kan <= hidden-layer <= linear worst cases numerically.

    Exhaustive scans only, hence d in {2, 3}.  Returns the triple and the
    verdict; it never raises on an ordering failure so callers can report it.
    """
    if d not in (2, 3):
        raise ParameterError(f"exhaustive theorem check supports d in {{2, 3}}, got {d}")
    P = build_circulant_P(d)
    r_kaa = kaa_mrd(P, seed=seed)
    r_mlp = mrd_mlp_construction(P)
    r_lt = mrd_bruteforce_lt(P)
    triple = (r_kaa.oracle_value, r_mlp.oracle_value, r_lt.oracle_value)
    ordered = triple[0] <= triple[1] + 1e-9 and triple[1] <= triple[2] + 1e-9
    return Theorem1Report(
        d=d,
        triple=triple,
        ordered=ordered,
        reports={"kaa": r_kaa, "mlp": r_mlp, "lt": r_lt},
    )
