from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from histotest.measures import DiscreteMeasure, SampleSet, from_weights

class Side(Enum):
    P = "p"
    Q = "q"

@dataclass(frozen=True)
class LabeledDraw:
    value: int
    side: Side

class SampleSource(ABC):
    """Hidden pair (p, q) that testers may only observe through samples."""

    n: int

    @abstractmethod
    def poisson_counts(self, side: Side, rate: float, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def draw_counts(self, side: Side, m: int, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def hidden_pair(self) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
        ...

    def poisson(self, side: Side, rate: float, rng: np.random.Generator) -> SampleSet:
        if rate < 0:
            raise ValueError(f"Poisson rate must be non-negative, got {rate}")
        return SampleSet.from_counts(self.poisson_counts(side, rate, rng))

    def draw(self, side: Side, m: int, rng: np.random.Generator) -> SampleSet:
        if m < 0:
            raise ValueError(f"sample count must be non-negative, got {m}")
        return SampleSet.from_counts(self.draw_counts(side, m, rng))

    def draw_labeled(self, rng: np.random.Generator) -> LabeledDraw:
        side = Side.P if rng.random() < 0.5 else Side.Q
        counts = self.draw_counts(side, 1, rng)
        return LabeledDraw(value=int(np.flatnonzero(counts)[0]) + 1, side=side)

    def mapped(self, bin_map: np.ndarray, n: int) -> "MappedSource":
        return MappedSource(self, bin_map, n)

class PairSource(SampleSource):

    def __init__(self, p: DiscreteMeasure, q: DiscreteMeasure):
        if p.n != q.n:
            raise ValueError(f"support sizes differ: {p.n} vs {q.n}")
        self.p = p
        self.q = q
        self.n = p.n
        self._probabilities = {}
        for side, measure in ((Side.P, p), (Side.Q, q)):
            total = measure.weights.sum()
            self._probabilities[side] = measure.weights / total if total > 0 else None

    def _weights(self, side: Side) -> np.ndarray:
        return self.p.weights if side is Side.P else self.q.weights

    def poisson_counts(self, side: Side, rate: float, rng: np.random.Generator) -> np.ndarray:
        return rng.poisson(rate * self._weights(side))

    def draw_counts(self, side: Side, m: int, rng: np.random.Generator) -> np.ndarray:
        probabilities = self._probabilities[side]
        if probabilities is None:
            raise ValueError(f"cannot draw from side {side.value}: it has zero mass")
        return rng.multinomial(m, probabilities)

    def hidden_pair(self) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
        return self.p, self.q

class MappedSource(SampleSource):
    """Emits f(x) for x drawn from the base source; f coarsens bins deterministically."""

    def __init__(self, base: SampleSource, bin_map: np.ndarray, n: int):
        bin_map = np.asarray(bin_map, dtype=np.int64)
        if bin_map.shape[0] != base.n:
            raise ValueError(f"bin map covers {bin_map.shape[0]} bins, source has {base.n}")
        if bin_map.size and (bin_map.min() < 0 or bin_map.max() >= n):
            raise ValueError(f"bin map targets must lie in [0, {n})")
        if isinstance(base, MappedSource):
            bin_map = bin_map[base.bin_map]
            base = base.base
        self.base = base
        self.bin_map = bin_map
        self.n = n

    def _coarsen(self, counts: np.ndarray) -> np.ndarray:
        return coarsen_counts(counts, self.bin_map, self.n)

    def poisson_counts(self, side: Side, rate: float, rng: np.random.Generator) -> np.ndarray:
        return self._coarsen(self.base.poisson_counts(side, rate, rng))

    def draw_counts(self, side: Side, m: int, rng: np.random.Generator) -> np.ndarray:
        return self._coarsen(self.base.draw_counts(side, m, rng))

    def hidden_pair(self) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
        p, q = self.base.hidden_pair()
        return (
            from_weights(np.bincount(self.bin_map, weights=p.weights, minlength=self.n)),
            from_weights(np.bincount(self.bin_map, weights=q.weights, minlength=self.n)),
        )

class SplitSource(SampleSource):
    """Samples of (p_S, q_S) simulated from samples of (p, q).

    A draw x of the base goes to one of the 1 + S(x) copies of x, uniformly.
    """

    def __init__(self, base: SampleSource, samples: SampleSet):
        if samples.n != base.n:
            raise ValueError(f"sample set lives on [{samples.n}], source on [{base.n}]")
        self.base = base
        self.multiplicities = 1 + np.asarray(samples.counts, dtype=np.int64)
        self.n = int(self.multiplicities.sum())

    def poisson_counts(self, side: Side, rate: float, rng: np.random.Generator) -> np.ndarray:
        return split_counts(self.base.poisson_counts(side, rate, rng), self.multiplicities, rng)

    def draw_counts(self, side: Side, m: int, rng: np.random.Generator) -> np.ndarray:
        return split_counts(self.base.draw_counts(side, m, rng), self.multiplicities, rng)

    def hidden_pair(self) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
        p, q = self.base.hidden_pair()
        index_map = np.repeat(np.arange(p.n), self.multiplicities)
        share = 1.0 / self.multiplicities[index_map]
        return from_weights(p.weights[index_map] * share), from_weights(q.weights[index_map] * share)

def coarsen_counts(counts: np.ndarray, bin_map: np.ndarray, n: int) -> np.ndarray:
    return np.bincount(bin_map, weights=counts, minlength=n).astype(np.int64)

def split_counts(counts: np.ndarray, multiplicities: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Spread counts[i] uniformly over multiplicities[i] consecutive output bins.

    Bins sharing a multiplicity are split with one vectorized multinomial call,
    so the work is linear in the size of the split domain.
    """
    counts = np.asarray(counts, dtype=np.int64)
    multiplicities = np.asarray(multiplicities, dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(multiplicities)[:-1]))
    out = np.zeros(int(multiplicities.sum()), dtype=np.int64)

    for copies in np.unique(multiplicities):
        rows = np.flatnonzero(multiplicities == copies)
        if copies == 1:
            out[offsets[rows]] = counts[rows]
            continue
        spread = rng.multinomial(counts[rows], np.full(int(copies), 1.0 / copies))
        out[offsets[rows][:, None] + np.arange(copies)] = spread
    return out
