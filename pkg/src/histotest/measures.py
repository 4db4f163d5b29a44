import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.config import config
from utils.helpers import Seed, as_generator
from utils.logger import get_logger

logger = get_logger(__name__)

HISTOGRAM_FORMAT = "histotest-v1"

def _as_readonly(values: Iterable[float], dtype: Any = np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array

@dataclass(frozen=True)
class DiscreteMeasure:
    weights: np.ndarray

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    @property
    def mass(self) -> float:
        return math.fsum(self.weights.tolist())

    @property
    def is_normalized(self) -> bool:
        return abs(self.mass - 1.0) <= config.EXACT_TOLERANCE

    @property
    def l2_norm(self) -> float:
        return math.sqrt(math.fsum((self.weights * self.weights).tolist()))

    def normalized(self) -> "DiscreteMeasure":
        mass = self.mass
        if mass <= 0:
            raise ValueError("cannot normalize a measure of zero mass")
        return from_weights(self.weights / mass)

    def scaled(self, factor: float) -> "DiscreteMeasure":
        if factor < 0:
            raise ValueError(f"scale factor must be non-negative, got {factor}")
        return from_weights(self.weights * factor)

    def to_list(self) -> List[float]:
        return self.weights.tolist()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.weights, other.weights))

    def __hash__(self) -> int:
        return hash(self.weights.tobytes())

def from_weights(weights: Union[Sequence[float], np.ndarray]) -> DiscreteMeasure:
    array = np.asarray(weights, dtype=np.float64).ravel()
    if array.size == 0:
        raise ValueError("a measure needs at least one weight")
    if not np.all(np.isfinite(array)):
        raise ValueError("weights must be finite")
    if np.any(array < 0):
        bad = int(np.argmin(array))
        raise ValueError(f"weight at position {bad + 1} is negative: {array[bad]}")
    return DiscreteMeasure(weights=_as_readonly(array))

@dataclass(frozen=True)
class IntervalPartition:
    """Cuts 0 = c_0 < c_1 < ... < c_l = n; interval j covers elements c_{j-1}+1 .. c_j."""

    cuts: Tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.cuts) < 2 or self.cuts[0] != 0:
            raise ValueError(f"cut sequence must start at 0 and contain an end point, got {self.cuts}")
        for left, right in zip(self.cuts, self.cuts[1:]):
            if right <= left:
                raise ValueError(f"cut sequence must be strictly increasing, got {self.cuts}")

    @property
    def n(self) -> int:
        return self.cuts[-1]

    @property
    def size(self) -> int:
        return len(self.cuts) - 1

    @property
    def intervals(self) -> List[Tuple[int, int]]:
        return [(left + 1, right) for left, right in zip(self.cuts, self.cuts[1:])]

    @property
    def interior_cuts(self) -> Tuple[int, ...]:
        return self.cuts[1:-1]

    def bin_map(self) -> np.ndarray:
        """Position of the interval holding each element (0-based in, 0-based out)."""
        lengths = np.diff(np.asarray(self.cuts))
        return np.repeat(np.arange(self.size), lengths)

    @classmethod
    def from_cuts(cls, cuts: Iterable[int], n: int) -> "IntervalPartition":
        values = sorted(set(int(c) for c in cuts) | {0, int(n)})
        if values[0] < 0 or values[-1] != n:
            raise ValueError(f"cuts must lie in [0, {n}], got {sorted(cuts)}")
        return cls(cuts=tuple(values))

    @classmethod
    def whole(cls, n: int) -> "IntervalPartition":
        return cls(cuts=(0, int(n)))

    @classmethod
    def singletons(cls, n: int) -> "IntervalPartition":
        return cls(cuts=tuple(range(int(n) + 1)))

def pairing_partition(n: int) -> IntervalPartition:
    return IntervalPartition.from_cuts(range(0, n + 1, 2), n)

@dataclass(frozen=True)
class SampleSet:
    counts: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, element: int) -> int:
        if not 1 <= element <= self.n:
            raise ValueError(f"element {element} outside [1, {self.n}]")
        return int(self.counts[element - 1])

    def as_dict(self) -> Dict[int, int]:
        nonzero = np.flatnonzero(self.counts)
        return {int(i) + 1: int(self.counts[i]) for i in nonzero}

    def mapped(self, bin_map: np.ndarray, new_n: int) -> "SampleSet":
        return SampleSet(counts=_as_readonly(
            np.bincount(bin_map, weights=self.counts, minlength=new_n).astype(np.int64), np.int64))

    @classmethod
    def from_counts(cls, counts: Union[Sequence[int], np.ndarray]) -> "SampleSet":
        array = np.asarray(counts, dtype=np.int64).ravel()
        if np.any(array < 0):
            raise ValueError("sample counts must be non-negative")
        return cls(counts=_as_readonly(array, np.int64))

    @classmethod
    def from_indices(cls, indices: Iterable[int], n: int) -> "SampleSet":
        positions = np.asarray(list(indices), dtype=np.int64)
        if positions.size and (positions.min() < 1 or positions.max() > n):
            raise ValueError(f"sample index out of range [1, {n}]")
        return cls.from_counts(np.bincount(positions - 1, minlength=n) if positions.size else np.zeros(n))

    @classmethod
    def empty(cls, n: int) -> "SampleSet":
        return cls.from_counts(np.zeros(n, dtype=np.int64))

def _check_same_support(p: DiscreteMeasure, q: DiscreteMeasure) -> None:
    if p.n != q.n:
        raise ValueError(f"support sizes differ: {p.n} vs {q.n}")

def _abs_differences(p: DiscreteMeasure, q: DiscreteMeasure) -> np.ndarray:
    _check_same_support(p, q)
    return np.abs(p.weights - q.weights)

def l1_distance(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    return math.fsum(_abs_differences(p, q).tolist())

def l2_distance(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    diffs = _abs_differences(p, q)
    return math.sqrt(math.fsum((diffs * diffs).tolist()))

def top_k_discrepancy(p: DiscreteMeasure, q: DiscreteMeasure, k: int) -> float:
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    diffs = np.sort(_abs_differences(p, q))[::-1]
    return math.fsum(diffs[:k].tolist())

def capped_discrepancy(p: DiscreteMeasure, q: DiscreteMeasure, k: int, alpha: float) -> float:
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    diffs = _abs_differences(p, q)
    # the cap looks at p only
    eligible = np.sort(diffs[p.weights <= alpha])[::-1]
    return math.fsum(eligible[:k].tolist())

def reduce(p: DiscreteMeasure, partition: IntervalPartition) -> DiscreteMeasure:
    if partition.n != p.n:
        raise ValueError(f"partition covers [{partition.n}] but the measure lives on [{p.n}]")
    weights = p.weights.tolist()
    return from_weights([
        math.fsum(weights[left:right]) for left, right in zip(partition.cuts, partition.cuts[1:])
    ])

def merge_pairs(p: DiscreteMeasure) -> DiscreteMeasure:
    return reduce(p, pairing_partition(p.n))

def split(p: DiscreteMeasure, samples: SampleSet) -> Tuple[DiscreteMeasure, np.ndarray]:
    """Split bin i of p into a_i = 1 + (copies of i in samples) equal parts.

    Returns the split measure on n + |S| bins and the map from new bin
    positions to old bin positions, so samples of p coarsen back to p.
    """
    if samples.n != p.n:
        raise ValueError(f"sample set lives on [{samples.n}] but the measure on [{p.n}]")
    multiplicities = 1 + np.asarray(samples.counts, dtype=np.int64)
    index_map = np.repeat(np.arange(p.n), multiplicities)
    weights = p.weights[index_map] / multiplicities[index_map]
    index_map.setflags(write=False)
    return from_weights(weights), index_map

def draw(p: DiscreteMeasure, m: int, seed: Union[Seed, np.random.Generator]) -> SampleSet:
    if m < 0:
        raise ValueError(f"sample count must be non-negative, got {m}")
    if not p.is_normalized:
        raise ValueError(f"fixed-count draws need a normalized measure, mass is {p.mass}")
    rng = as_generator(seed)
    if m == 0:
        return SampleSet.empty(p.n)
    return SampleSet.from_counts(rng.multinomial(m, p.weights / p.weights.sum()))

def poisson_draw(p: DiscreteMeasure, rate: float, seed: Union[Seed, np.random.Generator]) -> SampleSet:
    if rate < 0:
        raise ValueError(f"Poisson rate must be non-negative, got {rate}")
    rng = as_generator(seed)
    if rate == 0:
        return SampleSet.empty(p.n)
    return SampleSet.from_counts(rng.poisson(rate * p.weights))

@dataclass(frozen=True)
class PiecewiseConstantMeasure:
    breakpoints: np.ndarray
    values: np.ndarray = field(default_factory=lambda: _as_readonly([]))

    def __post_init__(self) -> None:
        if self.breakpoints.shape[0] != self.values.shape[0] + 1:
            raise ValueError("need exactly one more breakpoint than piece values")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(self.values < 0):
            raise ValueError("piece densities must be non-negative")

    @property
    def pieces(self) -> int:
        return int(self.values.shape[0])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    @property
    def domain(self) -> Tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    def piece_masses(self) -> np.ndarray:
        return self.values * self.lengths

    @property
    def mass(self) -> float:
        return math.fsum(self.piece_masses().tolist())

    def min_support_piece_length(self) -> float:
        support = self.values > 0
        if not np.any(support):
            return math.inf
        return float(self.lengths[support].min())

    def cumulative(self, x: Union[float, np.ndarray]) -> np.ndarray:
        """Mass of [b_0, x] for each x, exact up to float rounding of the prefix sums."""
        knots = np.concatenate(([0.0], np.cumsum(self.piece_masses())))
        return np.interp(x, self.breakpoints, knots)

    def density_at(self, x: np.ndarray) -> np.ndarray:
        index = np.searchsorted(self.breakpoints, x, side="right") - 1
        inside = (index >= 0) & (index < self.pieces)
        out = np.zeros(np.shape(x), dtype=np.float64)
        out[inside] = self.values[index[inside]]
        return out

    def to_json(self) -> Dict[str, Any]:
        return {
            "format": HISTOGRAM_FORMAT,
            "kind": "continuous-pieces",
            "pieces": [
                [float(lo), float(hi), float(v)]
                for lo, hi, v in zip(self.breakpoints[:-1], self.breakpoints[1:], self.values)
            ],
        }

def piecewise_from_pieces(pieces: Sequence[Tuple[float, float, float]]) -> PiecewiseConstantMeasure:
    """Build from (lo, hi, density) triples; gaps between triples become zero-density pieces."""
    if not pieces:
        raise ValueError("at least one piece is required")
    breakpoints: List[float] = [float(pieces[0][0])]
    values: List[float] = []
    for lo, hi, density in pieces:
        if lo > breakpoints[-1]:
            values.append(0.0)
            breakpoints.append(float(lo))
        elif lo < breakpoints[-1]:
            raise ValueError(f"pieces overlap or are unordered at {lo}")
        values.append(float(density))
        breakpoints.append(float(hi))
    return PiecewiseConstantMeasure(breakpoints=_as_readonly(breakpoints), values=_as_readonly(values))

def common_refinement(
    a: PiecewiseConstantMeasure,
    b: PiecewiseConstantMeasure
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if a.domain != b.domain:
        raise ValueError(f"domains differ: {a.domain} vs {b.domain}")
    breakpoints = np.union1d(a.breakpoints, b.breakpoints)
    midpoints = (breakpoints[:-1] + breakpoints[1:]) / 2.0
    return breakpoints, a.density_at(midpoints), b.density_at(midpoints)

def load_histogram(source: Union[str, Path, Dict[str, Any]]) -> DiscreteMeasure:
    if isinstance(source, dict):
        payload = source
    else:
        try:
            with open(source, "r") as f:
                payload = json.load(f)
        except json.JSONDecodeError as e:
            raise ValueError(f"{source} is not valid JSON: {e}") from e

    if payload.get("format") != HISTOGRAM_FORMAT:
        raise ValueError(f"unsupported histogram format: {payload.get('format')!r}")
    n = payload.get("n")
    if not isinstance(n, int) or n < 1:
        raise ValueError(f"histogram needs a positive integer n, got {n!r}")

    kind = payload.get("kind")
    if kind == "dense":
        weights = payload.get("weights", [])
        if len(weights) != n:
            raise ValueError(f"dense histogram lists {len(weights)} weights for n={n}")
        return from_weights(weights)

    if kind == "pieces":
        weights = np.zeros(n, dtype=np.float64)
        expected_start = 1
        for start, end, value in payload.get("pieces", []):
            if start != expected_start or end < start or end > n:
                raise ValueError(f"piece [{start}, {end}] breaks coverage of [1, {n}] at {expected_start}")
            if value < 0:
                raise ValueError(f"piece [{start}, {end}] has negative value {value}")
            weights[start - 1:end] = value
            expected_start = end + 1
        if expected_start != n + 1:
            raise ValueError(f"pieces stop at {expected_start - 1}, expected coverage up to {n}")
        return from_weights(weights)

    raise ValueError(f"unknown histogram kind: {kind!r}")

def histogram_payload(p: DiscreteMeasure, kind: str = "dense") -> Dict[str, Any]:
    if kind == "dense":
        return {"format": HISTOGRAM_FORMAT, "n": p.n, "kind": "dense", "weights": p.to_list()}
    if kind == "pieces":
        pieces: List[List[Any]] = []
        weights = p.to_list()
        start = 1
        for i in range(1, p.n + 1):
            if i == p.n or weights[i] != weights[start - 1]:
                pieces.append([start, i, weights[start - 1]])
                start = i + 1
        return {"format": HISTOGRAM_FORMAT, "n": p.n, "kind": "pieces", "pieces": pieces}
    raise ValueError(f"unknown histogram kind: {kind!r}")

def dump_histogram(p: DiscreteMeasure, path: Union[str, Path], kind: str = "dense") -> Path:
    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, "w") as f:
        json.dump(histogram_payload(p, kind), f, indent=2)
    logger.debug(f"Wrote {kind} histogram with n={p.n} to {output}")
    return output
