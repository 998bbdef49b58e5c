"""Distance- and size-aware assignment of box proposals to ground truth.

The pairwise cost combines overlap, squared centre distance and relative
size discrepancy:

    cost = (1 - IoU) + lambda_centre * ||c_p - c_g||^2
         + lambda_size * (|w_p - w_g| / w_g + |h_p - h_g| / h_g)

Costs are computed in normalized coordinates so the default weights are
resolution independent. The optimal one-to-one assignment is solved as a
rectangular linear sum assignment problem; an exhaustive oracle is
provided for cross-checking on small instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from gvgkit.geometry import BBox, iou

_BRUTEFORCE_MIN_SIDE = 8
_BRUTEFORCE_MAX_SIDE = 10


@dataclass(frozen=True)
class MatchConfig:
    lambda_centre: float = 2.0
    lambda_size: float = 0.5

    def __post_init__(self) -> None:
        if self.lambda_centre < 0 or self.lambda_size < 0:
            raise ValueError("matching weights must be non-negative")


@dataclass
class Assignment:
    """One-to-one pairing of proposal rows to ground-truth columns."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_proposals: list[int] = field(default_factory=list)
    unmatched_gts: list[int] = field(default_factory=list)
    total_cost: float = 0.0


def match_cost(p: BBox, g: BBox, cfg: MatchConfig = MatchConfig()) -> float:
    """Pairwise matching cost; zero iff the boxes coincide."""
    if g.w <= 0.0 or g.h <= 0.0:
        raise ValueError("ground-truth box must have positive width and height")
    centre_sq = (p.cx - g.cx) ** 2 + (p.cy - g.cy) ** 2
    size_term = abs(p.w - g.w) / g.w + abs(p.h - g.h) / g.h
    return (1.0 - iou(p, g)) + cfg.lambda_centre * centre_sq + cfg.lambda_size * size_term


def build_cost_matrix(proposals: list[BBox], gts: list[BBox],
                      cfg: MatchConfig = MatchConfig()) -> np.ndarray:
    """Cost matrix C[i, j] = match_cost(proposals[i], gts[j]).

    An empty ground-truth list yields an (N, 0) matrix, the signal for
    callers to skip the regression stage for this image.
    """
    out = np.zeros((len(proposals), len(gts)), dtype=np.float64)
    for j, g in enumerate(gts):
        for i, p in enumerate(proposals):
            out[i, j] = match_cost(p, g, cfg)
    return out


def _assignment_from_pairs(cost: np.ndarray, pairs: list[tuple[int, int]]) -> Assignment:
    rows = {i for i, _ in pairs}
    cols = {j for _, j in pairs}
    pairs = sorted(pairs)
    return Assignment(
        pairs=pairs,
        unmatched_proposals=[i for i in range(cost.shape[0]) if i not in rows],
        unmatched_gts=[j for j in range(cost.shape[1]) if j not in cols],
        total_cost=math.fsum(cost[i, j] for i, j in pairs),
    )


def assign_optimal(cost: np.ndarray, canonical: bool = True) -> Assignment:
    """Minimum-total-cost assignment of min(rows, cols) pairs.

    With ``canonical=True`` ties between equally cheap assignments are
    broken toward the lexicographically smallest pair list, which keeps
    crafted test cases deterministic. ``canonical=False`` skips that
    refinement and returns the plain solver result; with continuous
    random costs ties have measure zero, so training uses the fast path.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return Assignment(
            unmatched_proposals=list(range(cost.shape[0])),
            unmatched_gts=list(range(cost.shape[1])),
        )
    row_ind, col_ind = linear_sum_assignment(cost)
    base = _assignment_from_pairs(cost, list(zip(row_ind.tolist(), col_ind.tolist())))
    if not canonical:
        return base
    return _lexicographic_refine(cost, base)


def _lexicographic_refine(cost: np.ndarray, base: Assignment) -> Assignment:
    """Rebuild the optimal assignment choosing, row by row, the smallest
    column (and the earliest rows) that still reaches the optimal total."""
    n, m = cost.shape
    target = base.total_cost
    tol = 1e-9 * max(1.0, abs(target))

    incumbent = dict(base.pairs)
    fixed: list[tuple[int, int]] = []
    fixed_total = 0.0
    free_cols = list(range(m))
    rows_left = min(n, m)

    for i in range(n):
        if rows_left == 0:
            break
        later_rows = list(range(i + 1, n))
        chosen = None
        for j in free_cols:
            if incumbent.get(i) == j:
                # the incumbent solution already certifies this pair
                chosen = j
                break
            sub_cols = [c for c in free_cols if c != j]
            rest = _best_total(cost, later_rows, sub_cols, rows_left - 1)
            if rest is None:
                continue
            if fixed_total + cost[i, j] + rest <= target + tol:
                chosen = j
                incumbent = dict(fixed + [(i, j)])
                incumbent.update(_sub_solution(cost, later_rows, sub_cols, rows_left - 1))
                break
        if chosen is None:
            # row i stays unmatched; re-anchor to a solution without it
            rest = _best_total(cost, later_rows, free_cols, rows_left)
            if rest is None or fixed_total + rest > target + tol:
                return base  # defensive: keep the solver's answer
            incumbent = dict(fixed)
            incumbent.update(_sub_solution(cost, later_rows, free_cols, rows_left))
            continue
        fixed.append((i, chosen))
        fixed_total += cost[i, chosen]
        free_cols.remove(chosen)
        rows_left -= 1
    return _assignment_from_pairs(cost, fixed)


def _best_total(cost: np.ndarray, rows: list[int], cols: list[int], k: int):
    """Minimum cost of assigning k pairs within the given submatrix."""
    if k == 0:
        return 0.0
    if len(rows) < k or len(cols) < k:
        return None
    sub = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return math.fsum(sub[a, b] for a, b in zip(r, c))


def _sub_solution(cost: np.ndarray, rows: list[int], cols: list[int], k: int) -> dict[int, int]:
    if k == 0 or len(rows) < 1 or len(cols) < 1:
        return {}
    sub = cost[np.ix_(rows, cols)]
    r, c = linear_sum_assignment(sub)
    return {rows[a]: cols[b] for a, b in zip(r, c)}


def assign_bruteforce(cost: np.ndarray) -> Assignment:
    """Exhaustive minimum over all one-to-one pairings; test oracle.

    Enumeration order guarantees the lexicographically smallest optimal
    pair list. Limited to small instances by design.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if cost.size and not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment(unmatched_proposals=list(range(n)), unmatched_gts=list(range(m)))
    if min(n, m) > _BRUTEFORCE_MIN_SIDE or max(n, m) > _BRUTEFORCE_MAX_SIDE:
        raise ValueError(
            f"oracle bound exceeded: {n}x{m} "
            f"(min side <= {_BRUTEFORCE_MIN_SIDE}, max side <= {_BRUTEFORCE_MAX_SIDE})")
    k = min(n, m)
    best_pairs = None
    best_total = math.inf
    for rows in itertools.combinations(range(n), k):
        for cols in itertools.permutations(range(m), k):
            pairs = list(zip(rows, cols))
            total = math.fsum(cost[r, c] for r, c in pairs)
            if total < best_total or (total == best_total and pairs < best_pairs):
                best_total = total
                best_pairs = pairs
    return _assignment_from_pairs(cost, best_pairs)
