import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from tenacity import before_sleep_log, retry, retry_if_result, stop_after_attempt

from histotest.ak_oracle import ak_distance, continuous_ak_distance
from histotest.measures import (
    DiscreteMeasure,
    PiecewiseConstantMeasure,
    from_weights,
    piecewise_from_pieces,
)
from histotest.sources import PairSource, Side
from utils.cache import PmfCache
from utils.config import config
from utils.helpers import Seed, ceil_count, rng_stream
from utils.logger import get_logger

logger = get_logger(__name__)

Measure = Union[DiscreteMeasure, PiecewiseConstantMeasure]

class UnstableEstimateError(RuntimeError):

    def __init__(self, W: int, draws: int, stability_tv: float):
        super().__init__(
            f"two-sample pmf at W={W} not stable after {draws} draws per estimate "
            f"(independent estimates differ by {stability_tv:.4f} in TV)"
        )
        self.W = W
        self.draws = draws
        self.stability_tv = stability_tv

class Family(Enum):
    D = "D"
    D_PRIME = "D'"
    STRONG_D = "strongD"
    STRONG_D_PRIME = "strongD'"

    @property
    def is_null(self) -> bool:
        return self in (Family.D, Family.STRONG_D)

    @classmethod
    def parse(cls, label: str) -> "Family":
        aliases = {"Dprime": "D'", "D-prime": "D'", "strongDprime": "strongD'", "strongD-prime": "strongD'"}
        label = aliases.get(label, label)
        for family in cls:
            if family.value == label:
                return family
        raise ValueError(f"unknown family {label!r}; expected one of {[f.value for f in cls]}")

class TwoSampleMode(Enum):
    E2 = "E2"
    E0_2 = "E0_2"

@dataclass(frozen=True)
class InstancePair:
    p: Measure
    q: Measure
    family: Family
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_continuous(self) -> bool:
        return isinstance(self.p, PiecewiseConstantMeasure)

    def to_source(self) -> PairSource:
        """Normalize both sides by the common mass so testers see distributions."""
        if self.is_continuous:
            raise ValueError("discretize continuous instances before sampling from them")
        mass = self.p.mass
        if mass <= 0:
            raise ValueError("instance has zero mass")
        if self.p is self.q:
            normalized = self.p.scaled(1.0 / mass)
            return PairSource(normalized, normalized)
        return PairSource(self.p.scaled(1.0 / mass), self.q.scaled(1.0 / mass))

@dataclass(frozen=True)
class LabeledPairSample:
    x: int
    label_x: Side
    y: int
    label_y: Side

def _check_family(family: Family, allowed: Tuple[Family, ...]) -> None:
    if family not in allowed:
        raise ValueError(f"family {family.value} is not produced by this generator")

def prop_lb_bins(k: int, eps: float, W: float) -> int:
    log_w = math.log(W)
    return ceil_count(min(k ** (2 / 3) * log_w ** (1 / 3) / eps ** (4 / 3), k ** (4 / 5) / eps ** (6 / 5)))

def gen_prop_lb(k: int, eps: float, W: float, family: Family, seed: Seed) -> InstancePair:
    """Continuous k-histogram pair: m heavy bins of mass 1/m and about k light
    bins of mass eps/k, each an interval of log-uniform length at a random
    offset inside its own bin of length 2W."""
    _check_family(family, (Family.D, Family.D_PRIME))
    if W <= 2:
        raise ValueError(f"W must exceed 2, got {W}")
    if eps <= 0 or k < 1:
        raise ValueError(f"need eps > 0 and k >= 1, got eps={eps}, k={k}")

    rng = rng_stream(seed)
    m = prop_lb_bins(k, eps, W)
    bins = m + k
    width = 2.0 * W
    max_log = 2.0 * math.log(W) / 3.0

    p_pieces: List[Tuple[float, float, float]] = []
    q_pieces: List[Tuple[float, float, float]] = []
    heavy_bins = 0
    for index in range(bins):
        length = 2.0 * math.exp(rng.uniform(0.0, max_log))
        start = index * width + rng.uniform(0.0, width - length)
        end = start + length
        heavy = rng.random() < m / bins
        p_first_half = rng.random() < 0.5
        if heavy:
            heavy_bins += 1
            density = 1.0 / (m * length)
            p_pieces.append((start, end, density))
            q_pieces.append((start, end, density))
        elif family is Family.D:
            density = eps / (k * length)
            p_pieces.append((start, end, density))
            q_pieces.append((start, end, density))
        else:
            middle = start + length / 2.0
            density = 2.0 * eps / (k * length)
            first, second = (density, 0.0) if p_first_half else (0.0, density)
            p_pieces.extend([(start, middle, first), (middle, end, second)])
            q_pieces.extend([(start, middle, second), (middle, end, first)])

    domain_end = bins * width
    p = _cover_domain(p_pieces, domain_end)
    q = p if family is Family.D else _cover_domain(q_pieces, domain_end)
    params = {"k": k, "eps": eps, "W": W, "m": m, "bins": bins, "heavy_bins": heavy_bins, "seed": _seed_label(seed)}
    logger.debug(f"prop-lb {family.value}: {bins} bins, {heavy_bins} heavy, mass {p.mass:.4f}")
    return InstancePair(p=p, q=q, family=family, params=params)

def _cover_domain(pieces: List[Tuple[float, float, float]], domain_end: float) -> PiecewiseConstantMeasure:
    if pieces[0][0] > 0:
        pieces = [(0.0, pieces[0][0], 0.0)] + pieces
    if pieces[-1][1] < domain_end:
        pieces = pieces + [(pieces[-1][1], domain_end, 0.0)]
    return piecewise_from_pieces(pieces)

def _seed_label(seed: Seed) -> Any:
    return seed if isinstance(seed, int) else list(seed.spawn_key)

def discretize_thirds(pair: InstancePair, n: Optional[int] = None) -> InstancePair:
    """Move the mass of [(j-1)/3, j/3) onto element j of [n]."""
    if not pair.is_continuous:
        raise ValueError("instance is already discrete")
    low, high = pair.p.domain
    expected = 3.0 * (high - low)
    if n is None:
        n = int(round(expected))
    if abs(n - expected) > 1e-6:
        raise ValueError(f"n={n} does not match a third-grid over [{low}, {high}] ({expected:g} cells)")

    grid = low + np.arange(n + 1) / 3.0
    grid[-1] = high

    def cells(measure: PiecewiseConstantMeasure) -> DiscreteMeasure:
        return from_weights(np.maximum(np.diff(measure.cumulative(grid)), 0.0))

    p = cells(pair.p)
    q = p if pair.p is pair.q else cells(pair.q)
    return InstancePair(p=p, q=q, family=pair.family, params={**pair.params, "n": n})

def continuous_ak(pair: InstancePair, k: int) -> float:
    result, _ = continuous_ak_distance(pair.p, pair.q, k)
    return result.value

def _stretch_cdf(s: np.ndarray, ell: np.ndarray, span: float) -> np.ndarray:
    positive = s > 0
    logs = np.log(np.where(positive, s, 1.0))
    return np.where(positive, np.clip((logs - ell) / span, 0.0, 1.0), 0.0)

def _stretch_span(W: int) -> float:
    return math.log(W) / 3.0

def _check_stretch_domain(W: int) -> None:
    if int(W) != W or W <= 8:
        raise ValueError(f"W must be an integer above 8 so that W^(2/3) < W - W^(2/3), got {W}")

def stretch_pmfs(W: int, a: np.ndarray, ell: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Exact pmfs over [W] of round(a + s) and round(a - s), s = e^(ell + alpha).

    Rows follow the entries of a and ell. Values are clipped into [1, W].
    """
    span = _stretch_span(W)
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))[:, None]
    ell = np.atleast_1d(np.asarray(ell, dtype=np.float64))[:, None]
    raw = np.arange(W + 2, dtype=np.float64)[None, :]

    right = _stretch_cdf(raw + 0.5 - a, ell, span) - _stretch_cdf(raw - 0.5 - a, ell, span)
    left = _stretch_cdf(a - raw + 0.5, ell, span) - _stretch_cdf(a - raw - 0.5, ell, span)

    def fold(pmf: np.ndarray) -> np.ndarray:
        out = pmf[:, 1:W + 1].copy()
        out[:, 0] += pmf[:, 0]
        out[:, -1] += pmf[:, W + 1]
        return out

    return fold(right), fold(left)

@dataclass(frozen=True)
class StretchMember:
    """One draw (a, ell, b) of the stretch family on [W]."""

    W: int
    a: float
    ell: float
    b: int

    def sample(self, side: Side, count: int, rng: np.random.Generator) -> np.ndarray:
        alpha = rng.uniform(0.0, _stretch_span(self.W), size=count)
        sign = self.b if side is Side.P else -self.b
        values = np.floor(self.a + sign * np.exp(self.ell + alpha) + 0.5)
        return np.clip(values, 1, self.W).astype(np.int64)

    def pmfs(self) -> Tuple[np.ndarray, np.ndarray]:
        right, left = stretch_pmfs(self.W, np.array([self.a]), np.array([self.ell]))
        if self.b > 0:
            return right[0], left[0]
        return left[0], right[0]

def _draw_member(W: int, rng: np.random.Generator) -> StretchMember:
    edge = W ** (2 / 3)
    return StretchMember(
        W=int(W),
        a=float(rng.uniform(edge, W - edge)),
        ell=float(rng.uniform(0.0, _stretch_span(W))),
        b=1 if rng.random() < 0.5 else -1,
    )

class StretchPairSampler:
    """Labeled sampler over one stretch-family member; relabel=True forgets which side drew."""

    def __init__(self, member: StretchMember, relabel: bool = False):
        self.member = member
        self.relabel = relabel

    @property
    def W(self) -> int:
        return self.member.W

    def pair(self) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
        p, q = self.member.pmfs()
        if self.relabel:
            mixed = from_weights((p + q) / 2.0)
            return mixed, mixed
        return from_weights(p), from_weights(q)

    def sample(self, side: Side, count: int, rng: np.random.Generator) -> np.ndarray:
        if not self.relabel:
            return self.member.sample(side, count, rng)
        from_p = rng.random(count) < 0.5
        values = np.empty(count, dtype=np.int64)
        values[from_p] = self.member.sample(Side.P, int(from_p.sum()), rng)
        values[~from_p] = self.member.sample(Side.Q, int((~from_p).sum()), rng)
        return values

    def draw_labeled(self, count: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """count labeled draws from (p + q) / 2; labels are True for p."""
        origin_p = rng.random(count) < 0.5
        values = np.empty(count, dtype=np.int64)
        values[origin_p] = self.member.sample(Side.P, int(origin_p.sum()), rng)
        values[~origin_p] = self.member.sample(Side.Q, int((~origin_p).sum()), rng)
        labels = rng.random(count) < 0.5 if self.relabel else origin_p
        return values, labels

    def draw_pair_sample(self, rng: np.random.Generator) -> LabeledPairSample:
        values, labels = self.draw_labeled(2, rng)
        side = lambda flag: Side.P if flag else Side.Q
        return LabeledPairSample(int(values[0]), side(labels[0]), int(values[1]), side(labels[1]))

def gen_E(W: int, seed: Seed) -> StretchPairSampler:
    _check_stretch_domain(W)
    return StretchPairSampler(_draw_member(W, rng_stream(seed)), relabel=False)

def gen_E0(W: int, seed: Seed) -> StretchPairSampler:
    _check_stretch_domain(W)
    return StretchPairSampler(_draw_member(W, rng_stream(seed)), relabel=True)

def sample_pairs(W: int, mode: TwoSampleMode, count: int, seed: Seed) -> np.ndarray:
    """count draws of the two-sample law: a fresh member per row, then two labeled draws.

    Columns are (x, x_from_p, y, y_from_p).
    """
    _check_stretch_domain(W)
    rng = rng_stream(seed)
    edge = W ** (2 / 3)
    span = _stretch_span(W)
    a = rng.uniform(edge, W - edge, size=count)
    ell = rng.uniform(0.0, span, size=count)
    b = np.where(rng.random(count) < 0.5, 1, -1)

    columns = []
    for _ in range(2):
        origin_p = rng.random(count) < 0.5
        sign = np.where(origin_p, b, -b)
        alpha = rng.uniform(0.0, span, size=count)
        values = np.clip(np.floor(a + sign * np.exp(ell + alpha) + 0.5), 1, W).astype(np.int64)
        labels = rng.random(count) < 0.5 if mode is TwoSampleMode.E0_2 else origin_p
        columns.extend([values, labels.astype(np.int64)])
    return np.stack(columns, axis=1)

@dataclass(frozen=True)
class TwoSamplePmf:
    """Joint law of two labeled draws, kept as its two value blocks.

    same[x, y] is the block where both labels agree, cross[x, y] where they
    differ (before the 1/4 label weight). Index x - 1 holds value x.
    """

    W: int
    draws: int
    same: np.ndarray
    cross: np.ndarray
    stability_tv: float
    tv_halves: Tuple[float, float]

    @property
    def stable(self) -> bool:
        return self.stability_tv <= config.PMF_STABILITY_TV

    def joint(self, mode: TwoSampleMode) -> np.ndarray:
        """(2W, 2W) pmf; rows/columns 0..W-1 carry label p, W..2W-1 label q."""
        if mode is TwoSampleMode.E2:
            return np.block([[self.same, self.cross], [self.cross, self.same]]) / 4.0
        mixed = (self.same + self.cross) / 8.0
        return np.block([[mixed, mixed], [mixed, mixed]])

    def value_marginal(self, mode: TwoSampleMode) -> np.ndarray:
        joint = self.joint(mode)
        W = self.W
        return joint[:W, :W] + joint[:W, W:] + joint[W:, :W] + joint[W:, W:]

    def difference_mass(self) -> np.ndarray:
        """Proportional to |E2 - E0_2| with labels summed out (W x W, unnormalized)."""
        return np.abs(self.same - self.cross)

    @property
    def tv(self) -> float:
        return float(np.abs(self.same - self.cross).sum() / 4.0)

    @property
    def tv_standard_error(self) -> float:
        return abs(self.tv_halves[0] - self.tv_halves[1]) / 2.0

def tv_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"pmf shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum() / 2.0)

class _PmfAccumulator:
    """Running sums of two independent estimates; chunk c of estimate h uses stream (seed, W, h, c)."""

    def __init__(self, W: int, seed: int, chunk_size: int, workers: int):
        self.W = W
        self.seed = seed
        self.chunk_size = chunk_size
        self.workers = workers
        self.chunks = 0
        self.same = [np.zeros((W, W)), np.zeros((W, W))]
        self.cross = [np.zeros((W, W)), np.zeros((W, W))]

    def _chunk(self, half: int, index: int) -> Tuple[np.ndarray, np.ndarray]:
        rng = rng_stream(self.seed, self.W, half, index)
        edge = self.W ** (2 / 3)
        a = rng.uniform(edge, self.W - edge, size=self.chunk_size)
        ell = rng.uniform(0.0, _stretch_span(self.W), size=self.chunk_size)
        right, left = stretch_pmfs(self.W, a, ell)
        # both signs of b per draw: p/q swap roles, so the blocks are symmetric in b
        same = right.T @ right + left.T @ left
        both = right + left
        return same, both.T @ both - same

    def extend_to(self, draws: int) -> None:
        target = -(-draws // self.chunk_size)
        jobs = [(half, index) for index in range(self.chunks, target) for half in (0, 1)]
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            for start in range(0, len(jobs), self.workers):
                batch = jobs[start:start + self.workers]
                results = list(executor.map(lambda job: self._chunk(*job), batch))
                for (half, _), (same, cross) in zip(batch, results):
                    self.same[half] += same
                    self.cross[half] += cross
        self.chunks = max(self.chunks, target)

    @property
    def draws(self) -> int:
        return self.chunks * self.chunk_size

    def estimate(self) -> TwoSamplePmf:
        scale = 2.0 * self.draws
        same = [s / scale for s in self.same]
        cross = [c / scale for c in self.cross]
        stability = float((np.abs(same[0] - same[1]).sum() + np.abs(cross[0] - cross[1]).sum()) / 4.0)
        halves = tuple(float(np.abs(s - c).sum() / 4.0) for s, c in zip(same, cross))
        return TwoSamplePmf(
            W=self.W,
            draws=self.draws,
            same=(same[0] + same[1]) / 2.0,
            cross=(cross[0] + cross[1]) / 2.0,
            stability_tv=stability,
            tv_halves=halves,
        )

def estimate_two_sample_pmf(
    W: int,
    min_draws: Optional[int] = None,
    seed: int = 0,
    workers: Optional[int] = None,
    use_cache: Optional[bool] = None
) -> TwoSamplePmf:
    """Estimate E2 and E0_2 together, doubling the draw budget until two
    independent estimates agree within PMF_STABILITY_TV."""
    _check_stretch_domain(W)
    if W > config.PMF_MAX_W:
        raise ValueError(f"W={W} exceeds PMF_MAX_W={config.PMF_MAX_W}")
    min_draws = max(config.PMF_MIN_DRAWS if min_draws is None else int(min_draws), config.PMF_CHUNK_SIZE)
    workers = config.resolve_workers(workers)
    use_cache = config.ENABLE_CACHE if use_cache is None else use_cache

    params = {
        "kind": "two-sample-pmf",
        "W": W,
        "seed": seed,
        "min_draws": min_draws,
        "chunk": config.PMF_CHUNK_SIZE,
        "threshold": config.PMF_STABILITY_TV,
    }
    cache = PmfCache() if use_cache else None
    if cache is not None:
        cached = cache.get_pmf(params)
        if cached is not None:
            arrays, metadata = cached
            logger.debug(f"Using cached two-sample pmf for W={W} ({metadata['draws']} draws)")
            return TwoSamplePmf(
                W=W,
                draws=metadata["draws"],
                same=arrays["same"],
                cross=arrays["cross"],
                stability_tv=metadata["stability_tv"],
                tv_halves=tuple(metadata["tv_halves"]),
            )

    accumulator = _PmfAccumulator(W, seed, config.PMF_CHUNK_SIZE, workers)
    budget = {"draws": min_draws}
    attempts = max(1, int(math.floor(math.log2(config.PMF_MAX_DRAWS / min_draws))) + 1)

    @retry(
        stop=stop_after_attempt(attempts),
        retry=retry_if_result(lambda estimate: not estimate.stable),
        before_sleep=before_sleep_log(logger, logging.WARNING),
        retry_error_callback=lambda state: state.outcome.result(),
    )
    def _attempt() -> TwoSamplePmf:
        accumulator.extend_to(budget["draws"])
        estimate = accumulator.estimate()
        logger.info(f"W={W}: {estimate.draws} draws per estimate, halves differ by {estimate.stability_tv:.4f} TV")
        budget["draws"] *= 2
        return estimate

    estimate = _attempt()
    if not estimate.stable:
        raise UnstableEstimateError(W, estimate.draws, estimate.stability_tv)

    if cache is not None:
        cache.set_pmf(
            params,
            {"same": estimate.same, "cross": estimate.cross},
            {"draws": estimate.draws, "stability_tv": estimate.stability_tv, "tv_halves": list(estimate.tv_halves)},
        )
    return estimate

_pmf_memo: Dict[Tuple[int, int], TwoSamplePmf] = {}
_pmf_memo_lock = threading.Lock()

def _memoized_pmf(W: int, seed: int = 0) -> TwoSamplePmf:
    with _pmf_memo_lock:
        if (W, seed) not in _pmf_memo:
            _pmf_memo[(W, seed)] = estimate_two_sample_pmf(W, seed=seed)
        return _pmf_memo[(W, seed)]

def pmf_E2(W: int, mode: TwoSampleMode, N: Optional[int] = None, seed: int = 0) -> np.ndarray:
    if N is None:
        return _memoized_pmf(W, seed).joint(mode)
    return estimate_two_sample_pmf(W, min_draws=N, seed=seed).joint(mode)

def gen_F(W: int, seed: Seed, pmf: Optional[TwoSamplePmf] = None) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """p = q = uniform on {x, y}, with (x, y) drawn from the normalized |E2 - E0_2|."""
    _check_stretch_domain(W)
    pmf = pmf or _memoized_pmf(W)
    weights = pmf.difference_mass().ravel()
    total = weights.sum()
    if total <= 0:
        raise ValueError(f"E2 and E0_2 coincide at W={W}; the masking family is undefined")
    cell = int(rng_stream(seed).choice(weights.size, p=weights / total))
    x, y = divmod(cell, W)
    support = np.zeros(W)
    support[x] += 0.5
    support[y] += 0.5
    measure = from_weights(support)
    return measure, measure

def gen_strong_lb(k: int, eps: float, m: int, W: int, family: Family, seed: Seed) -> InstancePair:
    """(k + 2m) blocks of W cells: E0/m, (E or E0) * eps/k and F/m blocks in
    proportions m : k : m."""
    _check_family(family, (Family.STRONG_D, Family.STRONG_D_PRIME))
    if k < 1 or m < 1 or eps <= 0:
        raise ValueError(f"need k >= 1, m >= 1 and eps > 0, got k={k}, m={m}, eps={eps}")
    _check_stretch_domain(W)

    blocks = k + 2 * m
    heavy_share, light_share = m / blocks, k / blocks
    if not 0 < heavy_share < 1 or not 0 < light_share < 1:
        raise ValueError("block probabilities must lie in (0, 1)")

    rng = rng_stream(seed)
    pmf = _memoized_pmf(W)
    p = np.zeros(blocks * W)
    q = np.zeros(blocks * W)
    counts = {"E0": 0, "light": 0, "F": 0}
    for block in range(blocks):
        window = slice(block * W, (block + 1) * W)
        u = rng.random()
        if u < heavy_share:
            member_p, member_q = _draw_member(W, rng).pmfs()
            p[window] = q[window] = (member_p + member_q) / 2.0 / m
            counts["E0"] += 1
        elif u < heavy_share + light_share:
            member_p, member_q = _draw_member(W, rng).pmfs()
            if family is Family.STRONG_D_PRIME:
                p[window] = member_p * eps / k
                q[window] = member_q * eps / k
            else:
                p[window] = q[window] = (member_p + member_q) / 2.0 * eps / k
            counts["light"] += 1
        else:
            masking, _ = gen_F(W, int(rng.integers(2 ** 63 - 1)), pmf)
            p[window] = q[window] = masking.weights / m
            counts["F"] += 1

    p_measure = from_weights(p)
    q_measure = p_measure if family is Family.STRONG_D else from_weights(q)
    params = {"k": k, "eps": eps, "W": W, "m": m, "blocks": blocks, "seed": _seed_label(seed), **counts}
    return InstancePair(p=p_measure, q=q_measure, family=family, params=params)

@dataclass(frozen=True)
class InstanceReport:
    family: Family
    mass_p: float
    mass_q: float
    ak: float
    checks: Dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": self.family.value,
            "mass_p": self.mass_p,
            "mass_q": self.mass_q,
            "ak": self.ak,
            "checks": self.checks,
            "passed": self.passed,
        }

def mass_report(pair: InstancePair) -> Dict[str, float]:
    return {"mass_p": pair.p.mass, "mass_q": pair.q.mass}

def verify_instance(pair: InstancePair, k: int, eps: float) -> InstanceReport:
    if pair.is_continuous:
        raise ValueError("verify_instance works on discrete pairs; discretize first")
    ak = ak_distance(pair.p, pair.q, k).value
    mass_p, mass_q = pair.p.mass, pair.q.mass
    checks = {"mass_in_range": all(0.5 <= mass <= 4.0 for mass in (mass_p, mass_q))}
    if pair.family.is_null:
        checks["identical"] = pair.p == pair.q
    elif pair.family is Family.D_PRIME:
        checks["far"] = ak > eps
    else:
        checks["far"] = ak >= config.STRONG_LB_AK_CONSTANT * eps
    report = InstanceReport(family=pair.family, mass_p=mass_p, mass_q=mass_q, ak=ak, checks=checks)
    if not report.passed:
        logger.debug(f"{pair.family.value} instance failed checks {checks} (A_{k}={ak:.4g})")
    return report
