import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import binom

from histotest.measures import DiscreteMeasure, IntervalPartition, SampleSet, from_weights
from histotest.sources import SampleSource, Side, coarsen_counts, split_counts
from utils.config import config
from utils.helpers import Seed, ceil_count, rng_stream, seed_sequence
from utils.logger import get_logger

logger = get_logger(__name__)

AMPLIFY_RULES = ("chernoff", "binomial")

class Decision(Enum):
    EQUAL = "Equal"
    FAR = "Far"

@dataclass(frozen=True)
class TesterConstants:
    l2_budget_constant: float = 4.0
    capped_threshold_constant: float = 4.0
    full_sample_constant: float = 1.0
    amplify_chernoff_denominator: float = 54.0
    budget_scale: float = 1.0
    amplify_rule: str = "chernoff"

    @classmethod
    def from_config(cls, overrides: Optional[Dict[str, Any]] = None) -> "TesterConstants":
        constants = cls(
            l2_budget_constant=config.L2_BUDGET_CONSTANT,
            capped_threshold_constant=config.CAPPED_THRESHOLD_CONSTANT,
            full_sample_constant=config.FULL_SAMPLE_CONSTANT,
            amplify_chernoff_denominator=config.AMPLIFY_CHERNOFF_DENOMINATOR,
            amplify_rule=config.AMPLIFY_RULE,
        )
        if overrides:
            unknown = set(overrides) - set(asdict(constants))
            if unknown:
                raise ValueError(f"unknown tester constants: {sorted(unknown)}")
            constants = replace(constants, **{
                name: str(value) if name == "amplify_rule" else float(value)
                for name, value in overrides.items()
            })
        for name, value in asdict(constants).items():
            if name != "amplify_rule" and value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if constants.amplify_rule not in AMPLIFY_RULES:
            raise ValueError(f"amplify_rule must be one of {AMPLIFY_RULES}, got {constants.amplify_rule!r}")
        return constants

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

@dataclass(frozen=True)
class Verdict:
    decision: Decision
    statistic: float
    samples_used_p: int
    samples_used_q: int
    # expected samples per side for a unit-mass pair
    nominal_samples: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def is_far(self) -> bool:
        return self.decision is Decision.FAR

    def to_dict(self) -> Dict[str, Any]:
        return {
            "decision": self.decision.value,
            "statistic": self.statistic,
            "samples_used_p": self.samples_used_p,
            "samples_used_q": self.samples_used_q,
            "nominal_samples": self.nominal_samples,
            "details": self.details,
        }

@dataclass(frozen=True)
class TesterReport:
    tester: str
    params: Dict[str, Any]
    seed: int
    verdict: Verdict

    def to_dict(self) -> Dict[str, Any]:
        return {"tester": self.tester, "params": self.params, "seed": self.seed, **self.verdict.to_dict()}

@dataclass(frozen=True)
class SplitPlan:
    """One split-and-l2 run: |S| markers from p, Poisson rate per side, squared l2 threshold."""

    split_size: int
    eps2_sq: float
    rate: int

    @property
    def nominal_samples(self) -> float:
        return float(self.split_size + self.rate)

    def rejects(self, statistic: float) -> bool:
        return statistic > self.rate * self.rate * self.eps2_sq / 2.0

def _check_eps(eps: float) -> None:
    if not 0 < eps <= 2:
        raise ValueError(f"epsilon must lie in (0, 2], got {eps}")

def _check_k(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")

def l2_statistic(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    diff = x - y
    return float(np.sum(diff * diff - x - y))

def l2_budget(b: float, eps2_sq: float, constants: TesterConstants) -> int:
    return max(1, ceil_count(constants.l2_budget_constant * b / eps2_sq * constants.budget_scale))

def _small_support_split(k: int, eps: float) -> int:
    return max(1, ceil_count(min(k ** (2 / 3) / eps ** (4 / 3), k)))

def small_support_plan(k: int, eps: float, constants: TesterConstants, m: Optional[int] = None) -> SplitPlan:
    _check_k(k)
    _check_eps(eps)
    split_size = _small_support_split(k, eps) if m is None else int(m)
    if split_size < 1:
        raise ValueError(f"split size must be at least 1, got {split_size}")
    eps2_sq = eps * eps / (2.0 * k)
    return SplitPlan(split_size, eps2_sq, l2_budget(1.0 / math.sqrt(split_size), eps2_sq, constants))

def capped_plan(
    k: int,
    eps: float,
    alpha: float,
    constants: TesterConstants,
    m: Optional[int] = None
) -> SplitPlan:
    """Split-and-l2 plan for the alpha-capped discrepancy.

    alpha >= 1 caps nothing: the capped discrepancy is the top-k one for every
    distribution, and the plan is the small-support plan at the same split size.
    """
    _check_k(k)
    _check_eps(eps)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if alpha >= 1.0:
        return small_support_plan(k, eps, constants, m)
    split_size = ceil_count(k ** (2 / 3) / eps ** (4 / 3)) if m is None else int(m)
    if split_size < 1:
        raise ValueError(f"split size must be at least 1, got {split_size}")
    slack = 1.0 + constants.capped_threshold_constant * alpha * split_size / math.sqrt(k)
    eps2_sq = eps * eps / (k * slack)
    return SplitPlan(split_size, eps2_sq, l2_budget(1.0 / math.sqrt(split_size), eps2_sq, constants))

def majority_error(t: int, base_error: float = 1 / 3) -> float:
    """P(Bin(t, base_error) >= (t + 1) / 2): error of a t-run majority vote."""
    return float(binom.sf((t - 1) // 2, t, base_error))

def amplification_runs(delta: float, constants: TesterConstants) -> int:
    """Smallest odd t whose majority error is at most delta.

    The chernoff rule uses the bound exp(-t / denominator); the binomial rule
    uses the exact tail of a base error of 1/3, which needs far fewer runs.
    """
    if not 0 < delta < 1:
        raise ValueError(f"target error must lie in (0, 1), got {delta}")
    if delta >= 1 / 3:
        return 1
    if constants.amplify_rule == "binomial":
        runs = 1
        while majority_error(runs) > delta:
            runs += 2
        return runs
    runs = max(1, math.ceil(constants.amplify_chernoff_denominator * math.log(1.0 / delta)))
    return runs if runs % 2 == 1 else runs + 1

def _split_run(
    plan: SplitPlan,
    markers: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    rng: np.random.Generator
) -> Tuple[bool, float]:
    multiplicities = 1 + markers
    statistic = l2_statistic(split_counts(x, multiplicities, rng), split_counts(y, multiplicities, rng))
    return plan.rejects(statistic), statistic

@dataclass
class _RunDraws:
    markers: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def used_p(self) -> int:
        return int(self.markers.sum() + self.x.sum())

    @property
    def used_q(self) -> int:
        return int(self.y.sum())

def _draw_run(src: SampleSource, plan: SplitPlan, rng: np.random.Generator) -> _RunDraws:
    return _RunDraws(
        markers=src.draw_counts(Side.P, plan.split_size, rng),
        x=src.poisson_counts(Side.P, plan.rate, rng),
        y=src.poisson_counts(Side.Q, plan.rate, rng),
    )

def _single_split_test(src: SampleSource, plan: SplitPlan, seed: Seed, name: str) -> Verdict:
    rng = rng_stream(seed)
    draws = _draw_run(src, plan, rng)
    far, statistic = _split_run(plan, draws.markers, draws.x, draws.y, rng)
    logger.debug(f"{name}: Z={statistic:.4g} rate={plan.rate} split={plan.split_size} far={far}")
    return Verdict(
        decision=Decision.FAR if far else Decision.EQUAL,
        statistic=statistic,
        samples_used_p=draws.used_p,
        samples_used_q=draws.used_q,
        nominal_samples=plan.nominal_samples,
        details={"split_size": plan.split_size, "rate": plan.rate, "eps2_sq": plan.eps2_sq},
    )

def l2_core_test(src: SampleSource, m: int, eps2: float, seed: Seed) -> Verdict:
    if int(m) != m or m < 1:
        raise ValueError(f"Poisson parameter m must be a positive integer, got {m}")
    if eps2 <= 0:
        raise ValueError(f"l2 threshold must be positive, got {eps2}")
    rng = rng_stream(seed)
    x = src.poisson_counts(Side.P, m, rng)
    y = src.poisson_counts(Side.Q, m, rng)
    statistic = l2_statistic(x, y)
    far = statistic > m * m * eps2 * eps2 / 2.0
    return Verdict(
        decision=Decision.FAR if far else Decision.EQUAL,
        statistic=statistic,
        samples_used_p=int(x.sum()),
        samples_used_q=int(y.sum()),
        nominal_samples=float(m),
        details={"rate": int(m), "threshold": m * m * eps2 * eps2 / 2.0},
    )

def small_support_test(
    src: SampleSource,
    k: int,
    eps: float,
    seed: Seed,
    constants: Optional[TesterConstants] = None
) -> Verdict:
    plan = small_support_plan(k, eps, constants or TesterConstants.from_config())
    return _single_split_test(src, plan, seed, "small-support")

def capped_support_test(
    src: SampleSource,
    k: int,
    eps: float,
    alpha: float,
    seed: Seed,
    m: Optional[int] = None,
    constants: Optional[TesterConstants] = None
) -> Verdict:
    plan = capped_plan(k, eps, alpha, constants or TesterConstants.from_config(), m)
    return _single_split_test(src, plan, seed, "capped-support")

def majority(decisions: List[bool]) -> bool:
    return 2 * sum(decisions) > len(decisions)

def amplify(test: Callable[[Seed], Verdict], t: int, seed: Seed) -> Verdict:
    if int(t) != t or t < 1 or t % 2 == 0:
        raise ValueError(f"amplification needs an odd positive run count, got {t}")
    if t == 1:
        return test(seed)

    verdicts = [test(seed_sequence(seed, run)) for run in range(t)]
    votes = [verdict.is_far for verdict in verdicts]
    far = majority(votes)
    return Verdict(
        decision=Decision.FAR if far else Decision.EQUAL,
        statistic=sum(votes) / t,
        samples_used_p=sum(v.samples_used_p for v in verdicts),
        samples_used_q=sum(v.samples_used_q for v in verdicts),
        nominal_samples=sum(v.nominal_samples for v in verdicts),
        details={"runs": t, "far_votes": sum(votes)},
    )

def _levels_for(n: int, k: int) -> int:
    return max(0, math.ceil(math.log2(n / k))) if n > k else 0

def _level_budget(n: int, k: int) -> Tuple[float, float]:
    log_term = math.log2(3 + n / k)
    return log_term, 1.0 / (10.0 * log_term)

def _leveled_majority(
    src: SampleSource,
    plan: SplitPlan,
    level_maps: List[np.ndarray],
    level_sizes: List[int],
    runs: int,
    seed: Seed,
    name: str
) -> Tuple[List[bool], List[float], int, int]:
    """Shared-sample level tests: one draw per run at the finest level, coarsened to each level."""
    far_votes = np.zeros(len(level_maps), dtype=np.int64)
    used_p = used_q = 0
    for run in range(runs):
        rng = rng_stream(seed, run)
        draws = _draw_run(src, plan, rng)
        used_p += draws.used_p
        used_q += draws.used_q
        for level, (bin_map, size) in enumerate(zip(level_maps, level_sizes)):
            far, _ = _split_run(
                plan,
                coarsen_counts(draws.markers, bin_map, size),
                coarsen_counts(draws.x, bin_map, size),
                coarsen_counts(draws.y, bin_map, size),
                rng,
            )
            far_votes[level] += far
    level_far = [2 * int(votes) > runs for votes in far_votes]
    fractions = (far_votes / runs).tolist()
    logger.debug(f"{name}: {runs} runs, per-level far fractions {[round(f, 3) for f in fractions]}")
    return level_far, fractions, used_p, used_q

def iterative_ak_test(
    src: SampleSource,
    n: int,
    k: int,
    eps: float,
    seed: Seed,
    constants: Optional[TesterConstants] = None
) -> Verdict:
    """Merge-pairs ladder: a small-support test on every level, Far if any level rejects."""
    _check_k(k)
    _check_eps(eps)
    if n != src.n:
        raise ValueError(f"n={n} does not match the source domain [{src.n}]")
    constants = constants or TesterConstants.from_config()

    levels = _levels_for(n, k)
    log_term, delta = _level_budget(n, k)
    plan = small_support_plan(k, eps / (4.0 * log_term), constants)
    runs = amplification_runs(delta, constants)

    positions = np.arange(n)
    level_maps = [positions >> level for level in range(levels + 1)]
    level_sizes = [-(-n // (1 << level)) for level in range(levels + 1)]

    level_far, fractions, used_p, used_q = _leveled_majority(
        src, plan, level_maps, level_sizes, runs, seed, "iterative"
    )
    far = any(level_far)
    return Verdict(
        decision=Decision.FAR if far else Decision.EQUAL,
        statistic=max(fractions),
        samples_used_p=used_p,
        samples_used_q=used_q,
        nominal_samples=runs * plan.nominal_samples,
        details={
            "levels": levels + 1,
            "runs": runs,
            "level_far_fraction": fractions,
            "rate": plan.rate,
            "split_size": plan.split_size,
        },
    )

@dataclass(frozen=True)
class DyadicFlattening:
    """Dyadic coarsenings of [n] that never merge a block holding a marker point.

    level_maps[i][x] is the bin of element x (0-based) at level i.
    """

    n: int
    markers: SampleSet
    level_maps: Tuple[np.ndarray, ...]
    level_sizes: Tuple[int, ...]

    @property
    def levels(self) -> int:
        return len(self.level_maps) - 1

    def partition(self, level: int) -> IntervalPartition:
        bin_map = self.level_maps[level]
        starts = np.flatnonzero(np.diff(bin_map)) + 1
        return IntervalPartition(cuts=(0,) + tuple(int(s) for s in starts) + (self.n,))

    def flatten(self, p: DiscreteMeasure, level: int) -> DiscreteMeasure:
        return from_weights(np.bincount(self.level_maps[level], weights=p.weights, minlength=self.level_sizes[level]))

def dyadic_flattening(n: int, markers: SampleSet, levels: int) -> DyadicFlattening:
    if markers.n != n:
        raise ValueError(f"marker set lives on [{markers.n}], expected [{n}]")
    positions = np.arange(n)
    marked = np.flatnonzero(markers.counts)

    merged = np.ones(n, dtype=bool)
    depth = np.zeros(n, dtype=np.int64)
    level_maps = [positions.copy()]
    level_sizes = [n]
    for level in range(1, levels + 1):
        children = merged.shape[0]
        size = -(-children // 2)
        right = np.zeros(size, dtype=bool)
        right[: children // 2] = merged[1::2]
        free = np.bincount(marked >> level, minlength=size)[:size] == 0
        merged = merged[0::2] & right & free

        depth += merged[positions >> level]
        starts = (positions >> depth) << depth
        _, bin_map = np.unique(starts, return_inverse=True)
        level_maps.append(bin_map)
        level_sizes.append(int(bin_map.max()) + 1)

    for bin_map in level_maps:
        bin_map.setflags(write=False)
    return DyadicFlattening(n=n, markers=markers, level_maps=tuple(level_maps), level_sizes=tuple(level_sizes))

def full_ak_test(
    src: SampleSource,
    n: int,
    k: int,
    eps: float,
    seed: Seed,
    constants: Optional[TesterConstants] = None
) -> Verdict:
    """Dyadic-flattening tester: capped tests on every flattening level, then the
    iterative tester on the coarsest flattening at eps / 2."""
    _check_k(k)
    _check_eps(eps)
    if n != src.n:
        raise ValueError(f"n={n} does not match the source domain [{src.n}]")
    constants = constants or TesterConstants.from_config()

    if eps <= k ** (-3 / 8) or math.log2(n) > k:
        logger.warning(f"full tester outside its regime (n={n}, k={k}, eps={eps}); running the iterative tester")
        verdict = iterative_ak_test(src, n, k, eps, seed, constants)
        return replace(verdict, details={**verdict.details, "fallback": True})

    levels = _levels_for(n, k)
    log_term, delta = _level_budget(n, k)
    m = k ** (2 / 3) * math.log(3 + n / k) ** (4 / 3) / eps ** (4 / 3)
    marker_count = max(1, ceil_count(constants.full_sample_constant * m * math.log(k)))

    markers = SampleSet.from_counts(src.draw_counts(Side.P, marker_count, rng_stream(seed, 0)))
    flattening = dyadic_flattening(n, markers, levels)
    final_size = flattening.level_sizes[-1]
    assert final_size <= 2 * levels * (marker_count + 1) + -(-n // (1 << levels)), (
        f"final flattening has {final_size} bins for {marker_count} markers over {levels} levels"
    )

    plan = capped_plan(k, eps / (8.0 * log_term), 1.0 / m, constants)
    runs = amplification_runs(delta, constants)
    level_far, fractions, used_p, used_q = _leveled_majority(
        src, plan, list(flattening.level_maps), list(flattening.level_sizes), runs, seed_sequence(seed, 1), "full"
    )
    used_p += marker_count
    details: Dict[str, Any] = {
        "levels": levels + 1,
        "runs": runs,
        "markers": marker_count,
        "final_size": final_size,
        "level_far_fraction": fractions,
        "rate": plan.rate,
        "split_size": plan.split_size,
        "fallback": False,
    }
    nominal = marker_count + runs * plan.nominal_samples

    if any(level_far):
        logger.debug(f"full: capped stage rejected at levels {[i for i, f in enumerate(level_far) if f]}")
        return Verdict(Decision.FAR, max(fractions), used_p, used_q, nominal, details)

    final_src = src.mapped(flattening.level_maps[-1], final_size)
    final = iterative_ak_test(final_src, final_size, k, eps / 2.0, seed_sequence(seed, 2), constants)
    details["final_stage"] = final.details
    return Verdict(
        decision=final.decision,
        statistic=final.statistic,
        samples_used_p=used_p + final.samples_used_p,
        samples_used_q=used_q + final.samples_used_q,
        nominal_samples=nominal + final.nominal_samples,
        details=details,
    )

def histogram_l1_test(
    src: SampleSource,
    n: int,
    k: int,
    eps: float,
    seed: Seed,
    constants: Optional[TesterConstants] = None
) -> Verdict:
    """l1 closeness for k-flat pairs: ||p - q||_1 equals the A_{2k} distance there."""
    _check_k(k)
    return full_ak_test(src, n, 2 * k, eps, seed, constants)
