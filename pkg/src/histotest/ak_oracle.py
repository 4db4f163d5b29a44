import itertools
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from histotest.measures import (
    DiscreteMeasure,
    IntervalPartition,
    PiecewiseConstantMeasure,
    capped_discrepancy,
    common_refinement,
    from_weights,
    l1_distance,
    reduce,
    top_k_discrepancy,
)
from utils.config import config
from utils.logger import get_logger

logger = get_logger(__name__)

_TIE_TOLERANCE = 1e-14

@dataclass(frozen=True)
class AkResult:
    value: float
    partition: IntervalPartition
    k_used: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "cuts": list(self.partition.interior_cuts),
            "intervals": [list(interval) for interval in self.partition.intervals],
            "k_used": self.k_used,
        }

def _check_pair(p: DiscreteMeasure, q: DiscreteMeasure, k: int) -> None:
    if p.n != q.n:
        raise ValueError(f"support sizes differ: {p.n} vs {q.n}")
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")

def _difference_runs(p: DiscreteMeasure, q: DiscreteMeasure) -> Tuple[np.ndarray, np.ndarray]:
    """Collapse maximal runs where p - q is constant.

    Each interval sum is linear in a cut position inside such a run, so an
    optimal partition only ever cuts at run boundaries.
    """
    diffs = p.weights - q.weights
    changes = np.flatnonzero(diffs[1:] != diffs[:-1]) + 1
    boundaries = np.concatenate(([0], changes, [p.n]))
    run_sums = np.add.reduceat(diffs, boundaries[:-1])
    return boundaries, np.concatenate(([0.0], np.cumsum(run_sums)))

def _interval_objective(p: DiscreteMeasure, q: DiscreteMeasure, partition: IntervalPartition) -> float:
    return l1_distance(reduce(p, partition), reduce(q, partition))

def ak_distance(p: DiscreteMeasure, q: DiscreteMeasure, k: int) -> AkResult:
    """Exact A_k distance over partitions into at most k intervals.

    best[c][i] is the largest objective for elements i+1..n using at most c
    intervals; the forward pass then picks the smallest admissible next cut,
    which yields the lexicographically smallest optimal cut sequence.
    """
    _check_pair(p, q, k)
    boundaries, prefix = _difference_runs(p, q)
    runs = len(boundaries) - 1
    budget = min(k, runs)

    best = np.full((budget + 1, runs + 1), -np.inf)
    best[:, runs] = 0.0
    for c in range(1, budget + 1):
        for i in range(runs - 1, -1, -1):
            tail = np.abs(prefix[i + 1:] - prefix[i]) + best[c - 1, i + 1:]
            best[c, i] = tail.max()

    cuts: List[int] = [0]
    position, remaining = 0, budget
    while position < runs:
        target = best[remaining, position]
        tail = np.abs(prefix[position + 1:] - prefix[position]) + best[remaining - 1, position + 1:]
        step = int(np.flatnonzero(tail >= target - _TIE_TOLERANCE)[0]) + 1
        position += step
        remaining -= 1
        cuts.append(int(boundaries[position]))

    partition = IntervalPartition(cuts=tuple(cuts))
    value = _interval_objective(p, q, partition)
    logger.debug(f"A_{k} over n={p.n} ({runs} runs): {value:.6g} with {partition.size} intervals")
    return AkResult(value=value, partition=partition, k_used=partition.size)

def ak_bruteforce(p: DiscreteMeasure, q: DiscreteMeasure, k: int) -> float:
    _check_pair(p, q, k)
    if p.n > config.BRUTEFORCE_MAX_N:
        raise ValueError(f"brute force is limited to n <= {config.BRUTEFORCE_MAX_N}, got n={p.n}")

    prefix = [0.0]
    for value in (p.weights - q.weights).tolist():
        prefix.append(prefix[-1] + value)

    best = 0.0
    for interior in range(min(k, p.n)):
        for chosen in itertools.combinations(range(1, p.n), interior):
            cuts = (0,) + chosen + (p.n,)
            total = math.fsum(abs(prefix[right] - prefix[left]) for left, right in zip(cuts, cuts[1:]))
            best = max(best, total)
    return best

def histogram_flatten(pieces: Sequence[Tuple[int, float]]) -> DiscreteMeasure:
    if not pieces:
        raise ValueError("at least one piece is required")
    lengths: List[int] = []
    levels: List[float] = []
    for length, level in pieces:
        if int(length) != length or length < 1:
            raise ValueError(f"piece length must be a positive integer, got {length}")
        if level < 0:
            raise ValueError(f"piece level must be non-negative, got {level}")
        lengths.append(int(length))
        levels.append(float(level))
    return from_weights(np.repeat(levels, lengths))

def count_runs(p: DiscreteMeasure) -> int:
    return 1 + int(np.count_nonzero(p.weights[1:] != p.weights[:-1]))

def continuous_ak_distance(
    a: PiecewiseConstantMeasure,
    b: PiecewiseConstantMeasure,
    k: int
) -> Tuple[AkResult, np.ndarray]:
    """A_k of two piecewise-constant measures; cuts land on refinement breakpoints.

    The returned partition indexes refinement pieces, and the breakpoints
    array translates it back to the real line.
    """
    breakpoints, values_a, values_b = common_refinement(a, b)
    lengths = np.diff(breakpoints)
    result = ak_distance(from_weights(values_a * lengths), from_weights(values_b * lengths), k)
    return result, breakpoints

def _random_cuts(n: int, pieces: int, rng: np.random.Generator) -> np.ndarray:
    interior = np.sort(rng.choice(np.arange(1, n), size=pieces - 1, replace=False))
    return np.concatenate(([0], interior, [n]))

def _random_flat(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    cuts = _random_cuts(n, k, rng)
    lengths = np.diff(cuts)
    masses = rng.dirichlet(np.ones(k))
    return np.repeat(masses / lengths, lengths)

def random_flat_pair(
    n: int,
    k: int,
    rng: np.random.Generator,
    l1_target: Optional[float] = None
) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """Random k-flat pair on [n].

    Without a target both sides are independent k-flat distributions. With a
    target, p is uniform and q moves p up and down on k random pieces with
    alternating signs, so mass is kept and ||p - q||_1 = l1_target.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if l1_target is None:
        return from_weights(_random_flat(n, k, rng)), from_weights(_random_flat(n, k, rng))

    if l1_target < 0:
        raise ValueError(f"l1 target must be non-negative, got {l1_target}")
    p = np.full(n, 1.0 / n)
    if l1_target == 0:
        return from_weights(p), from_weights(p)
    if k < 2:
        raise ValueError("a positive l1 target needs at least two pieces")

    cuts = _random_cuts(n, k, rng)
    lengths = np.diff(cuts)
    signs = np.where(np.arange(k) % 2 == 0, 1.0, -1.0)
    if lengths[signs < 0].sum() < lengths[signs > 0].sum():
        signs = -signs
    # the lowered side is the longer one, so targets up to 1 always fit
    up_length = lengths[signs > 0].sum()
    down_length = lengths[signs < 0].sum()
    shift = np.where(signs > 0, l1_target / 2 / up_length, -l1_target / 2 / down_length)
    if np.any(1.0 / n + shift < -config.EXACT_TOLERANCE):
        raise ValueError(f"l1 target {l1_target} too large for n={n}, k={k}")
    q = p + np.repeat(shift, lengths)
    return from_weights(p), from_weights(np.clip(q, 0.0, None))

def l1k_report(p: DiscreteMeasure, q: DiscreteMeasure, k: int) -> Dict[str, Any]:
    return {
        "k": k,
        "value": top_k_discrepancy(p, q, k),
        "l1": l1_distance(p, q),
    }

def dka_report(p: DiscreteMeasure, q: DiscreteMeasure, k: int, alpha: float) -> Dict[str, Any]:
    return {
        "k": k,
        "alpha": alpha,
        "value": capped_discrepancy(p, q, k, alpha),
        "eligible": int(np.count_nonzero(p.weights <= alpha)),
        "l1": l1_distance(p, q),
    }
