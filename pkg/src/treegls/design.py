"""Tree-aware subsampling design.

Selecting k tips to maximize the scaled effective sample size 1'V^{-1}1 of
the restricted tree (original root retained).  The scaled form is the
objective because the restricted tree's height varies across subsets; the
plain effective sample size is reported alongside using the subset's own
height.

Searches: greedy forward (from the best singleton) and backward stepwise,
exhaustive enumeration under a budget (the small-instance oracle), and
random-subsample quantile bands.  Ties break by canonical tip order (first
wins) so results are reproducible.  Candidate evaluations within one greedy
step and band replicates are independent; executing them on a thread pool
uses an ordered reduction, so the thread count never changes the output.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .covariance import scaled_ess_pruning
from .errors import BudgetExceededError, TreeError
from .tree import PhyloTree

EXHAUSTIVE_BUDGET = 2_000_000


@dataclass(frozen=True)
class DesignResult:
    """Outcome of one subset search."""

    selected: tuple[str, ...]
    score: float
    n_e: float
    method: str
    trajectory: tuple[tuple[int, float], ...]
    evaluations: int

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "score": float(self.score),
            "n_e": float(self.n_e),
            "method": self.method,
            "trajectory": [[int(k), float(s)] for k, s in self.trajectory],
            "evaluations": int(self.evaluations),
        }


@dataclass(frozen=True)
class BandSummary:
    """Quantile band of n_e over uniform random subsets of one size."""

    k: int
    reps: int
    q025: float
    median: float
    q975: float
    mean: float

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "reps": int(self.reps),
            "q025": float(self.q025),
            "median": float(self.median),
            "q975": float(self.q975),
            "mean": float(self.mean),
        }


def _ordered_map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _mask_score(tree: PhyloTree, mask: np.ndarray) -> float:
    return scaled_ess_pruning(tree, mask)


def _subset_n_e(tree: PhyloTree, mask: np.ndarray, score: float) -> float:
    heights = tree.tip_heights
    return float(heights[mask].mean()) * score


def score_subsample(tree: PhyloTree, keep) -> float:
    """Scaled ESS 1'V^{-1}1 of the tree restricted to ``keep`` (O(n))."""
    mask = _labels_to_mask(tree, keep)
    return _mask_score(tree, mask)


def _labels_to_mask(tree: PhyloTree, keep) -> np.ndarray:
    keep = list(keep)
    if not keep:
        raise TreeError("keep must be nonempty")
    index = {lab: i for i, lab in enumerate(tree.tip_labels)}
    mask = np.zeros(tree.n_tips, dtype=bool)
    for lab in keep:
        try:
            mask[index[lab]] = True
        except KeyError:
            raise TreeError(f"unknown tip label {lab!r}") from None
    return mask


def stepwise_design(
    tree: PhyloTree, k: int, direction: str = "forward", threads: int = 1
) -> DesignResult:
    """Greedy stepwise search for the size-k subset maximizing 1'V^{-1}1.

    Forward starts from the best singleton and adds the tip that maximizes
    the score; backward starts from the full set and removes the tip whose
    removal leaves the best score.
    """
    n = tree.n_tips
    if not 1 <= k <= n:
        raise TreeError(f"k must be in 1..{n}, got {k}")
    if direction not in ("forward", "backward"):
        raise TreeError(f"direction must be 'forward' or 'backward', got {direction!r}")

    evaluations = 0
    trajectory: list[tuple[int, float]] = []
    mask = np.zeros(n, dtype=bool)

    def best_candidate(candidates, make_mask):
        nonlocal evaluations
        cands = list(candidates)
        scores = _ordered_map(lambda i: _mask_score(tree, make_mask(i)), cands, threads)
        evaluations += len(cands)
        best_i, best_s = None, -math.inf
        for i, s in zip(cands, scores):
            if s > best_s:
                best_i, best_s = i, s
        return best_i, best_s

    if direction == "forward":
        def singleton(i):
            m = np.zeros(n, dtype=bool)
            m[i] = True
            return m

        i0, s0 = best_candidate(range(n), singleton)
        mask[i0] = True
        trajectory.append((1, s0))
        score = s0
        while int(mask.sum()) < k:
            def add(i, base=mask):
                m = base.copy()
                m[i] = True
                return m

            i_add, score = best_candidate(np.flatnonzero(~mask), add)
            mask[i_add] = True
            trajectory.append((int(mask.sum()), score))
    else:
        mask[:] = True
        score = _mask_score(tree, mask)
        evaluations += 1
        trajectory.append((n, score))
        while int(mask.sum()) > k:
            def drop(i, base=mask):
                m = base.copy()
                m[i] = False
                return m

            i_drop, score = best_candidate(np.flatnonzero(mask), drop)
            mask[i_drop] = False
            trajectory.append((int(mask.sum()), score))

    selected = tuple(lab for lab, m in zip(tree.tip_labels, mask) if m)
    return DesignResult(
        selected=selected,
        score=score,
        n_e=_subset_n_e(tree, mask, score),
        method=direction,
        trajectory=tuple(trajectory),
        evaluations=evaluations,
    )


def exhaustive_design(
    tree: PhyloTree, k: int, budget: int = EXHAUSTIVE_BUDGET, threads: int = 1
) -> DesignResult:
    """True optimum by enumerating all C(n, k) subsets (budget-guarded)."""
    from itertools import combinations, islice

    n = tree.n_tips
    if not 1 <= k <= n:
        raise TreeError(f"k must be in 1..{n}, got {k}")
    total = math.comb(n, k)
    if total > budget:
        raise BudgetExceededError(
            f"C({n},{k}) = {total} exceeds the budget of {budget} evaluations"
        )

    def score_of(combo):
        m = np.zeros(n, dtype=bool)
        m[list(combo)] = True
        return _mask_score(tree, m)

    # Stream in chunks: the full C(n, k) listing can be millions of tuples.
    best_combo, best_score = None, -math.inf
    it = combinations(range(n), k)
    while True:
        chunk = list(islice(it, 16_384))
        if not chunk:
            break
        for combo, s in zip(chunk, _ordered_map(score_of, chunk, threads)):
            if s > best_score:
                best_combo, best_score = combo, s
    mask = np.zeros(n, dtype=bool)
    mask[list(best_combo)] = True
    score = best_score
    selected = tuple(lab for lab, m in zip(tree.tip_labels, mask) if m)
    return DesignResult(
        selected=selected,
        score=score,
        n_e=_subset_n_e(tree, mask, score),
        method="exhaustive",
        trajectory=((k, score),),
        evaluations=total,
    )


def _sample_subset(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Uniform size-k subset via a partial Fisher-Yates shuffle."""
    idx = np.arange(n)
    for i in range(k):
        j = i + int(rng.integers(n - i))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[:k]


def random_design_bands(
    tree: PhyloTree, k: int, reps: int, seed: int, threads: int = 1
) -> BandSummary:
    """Quantile band of n_e over ``reps`` uniform random size-k subsets."""
    n = tree.n_tips
    if not 1 <= k <= n:
        raise TreeError(f"k must be in 1..{n}, got {k}")
    if reps < 1:
        raise TreeError("reps must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    subsets = [_sample_subset(rng, n, k) for _ in range(reps)]

    def n_e_of(subset):
        m = np.zeros(n, dtype=bool)
        m[subset] = True
        return _subset_n_e(tree, m, _mask_score(tree, m))

    values = np.array(_ordered_map(n_e_of, subsets, threads))
    q025, med, q975 = np.quantile(values, [0.025, 0.5, 0.975])
    return BandSummary(
        k=k,
        reps=reps,
        q025=float(q025),
        median=float(med),
        q975=float(q975),
        mean=float(values.mean()),
    )


def band_table(
    tree: PhyloTree,
    reps: int,
    seed: int,
    ks=None,
    threads: int = 1,
) -> list[dict]:
    """Rows (k, q025, median, q975, optimum) for band-vs-optimum plots.

    ``optimum`` is the forward-stepwise n_e at each k.
    """
    n = tree.n_tips
    if ks is None:
        ks = range(1, n + 1)
    rows = []
    for k in ks:
        band = random_design_bands(tree, k, reps, seed + k, threads=threads)
        best = stepwise_design(tree, k, "forward", threads=threads)
        rows.append(
            {
                "k": int(k),
                "q025": band.q025,
                "median": band.median,
                "q975": band.q975,
                "optimum": best.n_e,
            }
        )
    return rows
