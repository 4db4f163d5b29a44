import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import binomtest

from histotest.adversarial import (
    Family,
    UnstableEstimateError,
    discretize_thirds,
    estimate_two_sample_pmf,
    gen_prop_lb,
    gen_strong_lb,
)
from histotest.ak_oracle import random_flat_pair
from histotest.measures import from_weights
from histotest.sources import PairSource, SampleSource
from histotest.testers import (
    TesterConstants,
    Verdict,
    capped_support_test,
    full_ak_test,
    histogram_l1_test,
    iterative_ak_test,
    l2_budget,
    l2_core_test,
    small_support_test,
)
from utils.config import config
from utils.helpers import Seed, rng_stream, seed_sequence, stable_id
from utils.logger import get_logger

logger = get_logger(__name__)

GridPoint = Dict[str, Any]
GeneratorFn = Callable[[GridPoint, bool, Seed], SampleSource]
TesterFn = Callable[[SampleSource, GridPoint, Seed, TesterConstants], Verdict]

POWER_HEADER = ["params", "null_accept", "alt_reject", "mean_samples", "trials", "se"]
COMPLEXITY_HEADER = ["params", "crossing_scale", "samples", "evaluations", "non_monotone"]
TV_HEADER = ["W", "tv", "se", "draws", "stable", "tv_log_sq"]

@dataclass
class ExperimentConfig:
    name: str = "experiment"
    tester: str = "full"
    generator: str = "flat-pair"
    grid: Dict[str, List[Any]] = field(default_factory=dict)
    trials: int = 100
    master_seed: int = 0
    output: Optional[str] = None
    constants: Dict[str, Any] = field(default_factory=dict)
    generator_params: Dict[str, Any] = field(default_factory=dict)
    search: Dict[str, float] = field(default_factory=lambda: {
        "start_scale": 1.0,
        "max_doublings": 12,
        "bisection_steps": 6,
    })

    def validate(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trials must be at least 1, got {self.trials}")
        if not self.grid or any(len(values) == 0 for values in self.grid.values()):
            raise ValueError("parameter grid must be non-empty")
        if self.master_seed < 0:
            raise ValueError(f"master seed must be non-negative, got {self.master_seed}")
        TesterConstants.from_config(self.constants)

    def points(self) -> List[GridPoint]:
        names = sorted(self.grid)
        return [
            derive_point({**self.generator_params, **dict(zip(names, values))})
            for values in itertools.product(*(self.grid[name] for name in names))
        ]

    @property
    def experiment_id(self) -> int:
        return stable_id(self.name, self.tester, self.generator)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        experiment = cls(**data)
        experiment.validate()
        return experiment

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValueError(f"experiment config is not valid JSON: {e}") from e
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Path) -> "ExperimentConfig":
        with open(path, "r") as f:
            return cls.from_json(f.read())

def derive_point(point: GridPoint) -> GridPoint:
    """Fill parameters defined relative to others.

    n_per_k sets n = n_per_k * k, eps2_per_n sets eps2 = eps2_per_n / n and
    b = "uniform" stands for the l2 norm 1 / sqrt(n) of the uniform distribution.
    Explicit values win.
    """
    point = dict(point)
    if "n_per_k" in point and "n" not in point:
        if "k" not in point:
            raise ValueError("n_per_k needs k in the same grid point")
        point["n"] = int(round(float(point["n_per_k"]) * int(point["k"])))
    if "eps2_per_n" in point and "eps2" not in point:
        if "n" not in point:
            raise ValueError("eps2_per_n needs n in the same grid point")
        point["eps2"] = float(point["eps2_per_n"]) / int(point["n"])
    if point.get("b") == "uniform":
        if "n" not in point:
            raise ValueError('b = "uniform" needs n in the same grid point')
        point["b"] = 1.0 / math.sqrt(int(point["n"]))
    return point

def binomial_se(successes: int, trials: int) -> float:
    rate = successes / trials
    return math.sqrt(rate * (1.0 - rate) / trials)

def clopper_pearson(successes: int, trials: int, level: Optional[float] = None) -> Tuple[float, float]:
    interval = binomtest(successes, trials).proportion_ci(
        confidence_level=level or config.CONFIDENCE_LEVEL, method="exact"
    )
    return float(interval.low), float(interval.high)

def format_params(point: GridPoint) -> str:
    return ";".join(f"{name}={point[name]}" for name in sorted(point))

@dataclass(frozen=True)
class PowerRow:
    params: GridPoint
    null_accepts: int
    alt_rejects: int
    mean_samples: float
    trials: int

    @property
    def null_accept(self) -> float:
        return self.null_accepts / self.trials

    @property
    def alt_reject(self) -> float:
        return self.alt_rejects / self.trials

    @property
    def null_se(self) -> float:
        return binomial_se(self.null_accepts, self.trials)

    @property
    def alt_se(self) -> float:
        return binomial_se(self.alt_rejects, self.trials)

    @property
    def se(self) -> float:
        return self.alt_se

    def bands(self) -> Dict[str, Tuple[float, float]]:
        return {
            "null_accept": clopper_pearson(self.null_accepts, self.trials),
            "alt_reject": clopper_pearson(self.alt_rejects, self.trials),
        }

    def power_lower_bound(self) -> float:
        bands = self.bands()
        return min(bands["null_accept"][0], bands["alt_reject"][0])

    def csv_row(self) -> List[str]:
        return [
            format_params(self.params),
            f"{self.null_accept:.6f}",
            f"{self.alt_reject:.6f}",
            f"{self.mean_samples:.3f}",
            str(self.trials),
            f"{self.se:.6f}",
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "params": self.params,
            "null_accept": self.null_accept,
            "alt_reject": self.alt_reject,
            "mean_samples": self.mean_samples,
            "trials": self.trials,
            "null_se": self.null_se,
            "alt_se": self.alt_se,
            "bands": {name: list(band) for name, band in self.bands().items()},
        }

@dataclass(frozen=True)
class ComplexityRow:
    params: GridPoint
    crossing_scale: float
    samples: float
    evaluations: int
    non_monotone: bool

    def csv_row(self) -> List[str]:
        return [
            format_params(self.params),
            f"{self.crossing_scale:.6g}",
            f"{self.samples:.3f}",
            str(self.evaluations),
            str(self.non_monotone).lower(),
        ]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

@dataclass(frozen=True)
class TvRow:
    W: int
    tv: float
    se: float
    draws: int
    stable: bool

    @property
    def tv_log_sq(self) -> float:
        return self.tv * math.log(self.W) ** 2

    def csv_row(self) -> List[str]:
        return [
            str(self.W),
            f"{self.tv:.6f}",
            f"{self.se:.6f}",
            str(self.draws),
            str(self.stable).lower(),
            f"{self.tv_log_sq:.6f}",
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {**asdict(self), "tv_log_sq": self.tv_log_sq}

def _flat_pair(point: GridPoint, alternative: bool, seed: Seed) -> SampleSource:
    rng = rng_stream(seed)
    n, eps = int(point["n"]), float(point["eps"])
    pieces = int(point.get("pieces", max(2, int(point["k"]) // 2)))
    if not alternative:
        p, _ = random_flat_pair(n, pieces, rng)
        return PairSource(p.normalized(), p.normalized())
    p, q = random_flat_pair(n, pieces, rng, l1_target=float(point.get("l1", 1.25 * eps)))
    return PairSource(p, q)

def _prop_lb(point: GridPoint, alternative: bool, seed: Seed) -> SampleSource:
    family = Family.D_PRIME if alternative else Family.D
    pair = gen_prop_lb(int(point["k"]), float(point["eps"]), float(point["W"]), family, seed)
    return discretize_thirds(pair).to_source()

def _strong_lb(point: GridPoint, alternative: bool, seed: Seed) -> SampleSource:
    family = Family.STRONG_D_PRIME if alternative else Family.STRONG_D
    k = int(point["k"])
    pair = gen_strong_lb(k, float(point["eps"]), int(point.get("m", k)), int(point.get("W", 16)), family, seed)
    return pair.to_source()

def _spike_pair(point: GridPoint, alternative: bool, seed: Seed) -> SampleSource:
    """Uniform background of mass 1 - l1 / 2 plus l1 / 2 spread over spike bins.

    The alternative puts p's spikes on half of the bins and q's on the other
    half, so all of ||p - q||_1 = l1 sits on `spikes` bins of equal height.
    """
    rng = rng_stream(seed)
    n, eps = int(point["n"]), float(point["eps"])
    spikes = int(point.get("spikes", 4))
    l1 = float(point.get("l1", 1.6 * eps))
    if spikes < 2 or spikes % 2 or spikes > n:
        raise ValueError(f"spikes must be even and in [2, n], got {spikes}")
    if not 0 < l1 < 2:
        raise ValueError(f"l1 must lie in (0, 2), got {l1}")
    base = np.full(n, (1.0 - l1 / 2.0) / n)
    chosen = rng.choice(n, size=spikes, replace=False)
    height = l1 / spikes
    p = base.copy()
    if not alternative:
        p[chosen[: spikes // 2]] += height
        measure = from_weights(p)
        return PairSource(measure, measure)
    q = base.copy()
    p[chosen[: spikes // 2]] += height
    q[chosen[spikes // 2:]] += height
    return PairSource(from_weights(p), from_weights(q))

def _two_point(point: GridPoint, alternative: bool, seed: Seed) -> SampleSource:
    """Worst case of the l2 core: uniform p, and a q that moves eps2 / sqrt(2) of
    mass between two random bins, so ||p - q||_2 = eps2 and ||p||_2 = 1 / sqrt(n)."""
    n = int(point["n"])
    eps2 = float(point.get("eps2", point.get("eps", 0.0)))
    shift = eps2 / math.sqrt(2.0)
    if n < 2 or not 0 < shift <= 1.0 / n:
        raise ValueError(f"two-point fixture needs n >= 2 and 0 < eps2 <= sqrt(2) / n, got n={n}, eps2={eps2}")
    uniform = np.full(n, 1.0 / n)
    if not alternative:
        p = from_weights(uniform)
        return PairSource(p, p)
    up, down = rng_stream(seed).choice(n, size=2, replace=False)
    q = uniform.copy()
    q[up] += shift
    q[down] = max(q[down] - shift, 0.0)
    return PairSource(from_weights(uniform), from_weights(q))

def _l2_tester(src: SampleSource, point: GridPoint, seed: Seed, constants: TesterConstants) -> Verdict:
    eps2 = float(point.get("eps2", point["eps"]))
    rate = point.get("rate") or l2_budget(float(point.get("b", 1.0)), eps2 * eps2, constants)
    return l2_core_test(src, int(rate), eps2, seed)

GENERATORS: Dict[str, GeneratorFn] = {
    "flat-pair": _flat_pair,
    "prop-lb": _prop_lb,
    "strong-lb": _strong_lb,
    "spike-pair": _spike_pair,
    "two-point": _two_point,
}

TESTERS: Dict[str, TesterFn] = {
    "l2": _l2_tester,
    "small-support": lambda src, point, seed, constants: small_support_test(
        src, int(point["k"]), float(point["eps"]), seed, constants
    ),
    "capped-support": lambda src, point, seed, constants: capped_support_test(
        src, int(point["k"]), float(point["eps"]), float(point.get("alpha", 1.0)), seed,
        point.get("m_split"), constants
    ),
    "iterative": lambda src, point, seed, constants: iterative_ak_test(
        src, src.n, int(point["k"]), float(point["eps"]), seed, constants
    ),
    "full": lambda src, point, seed, constants: full_ak_test(
        src, src.n, int(point["k"]), float(point["eps"]), seed, constants
    ),
    "histogram-l1": lambda src, point, seed, constants: histogram_l1_test(
        src, src.n, int(point["k"]), float(point["eps"]), seed, constants
    ),
}

def register_tester(name: str, tester: TesterFn) -> None:
    TESTERS[name] = tester

def register_generator(name: str, generator: GeneratorFn) -> None:
    GENERATORS[name] = generator

def _lookup(experiment: ExperimentConfig) -> Tuple[GeneratorFn, TesterFn]:
    if experiment.generator not in GENERATORS:
        raise ValueError(f"unknown generator {experiment.generator!r}; known: {sorted(GENERATORS)}")
    if experiment.tester not in TESTERS:
        raise ValueError(f"unknown tester {experiment.tester!r}; known: {sorted(TESTERS)}")
    return GENERATORS[experiment.generator], TESTERS[experiment.tester]

def _run_trial(
    generator: GeneratorFn,
    tester: TesterFn,
    point: GridPoint,
    constants: TesterConstants,
    trial_seed: Seed,
    alternative: bool
) -> Verdict:
    side = int(alternative)
    source = generator(point, alternative, seed_sequence(trial_seed, side, 0))
    return tester(source, point, seed_sequence(trial_seed, side, 1), constants)

def _power_at(
    experiment: ExperimentConfig,
    point_index: int,
    point: GridPoint,
    constants: TesterConstants,
    workers: int
) -> PowerRow:
    generator, tester = _lookup(experiment)
    outcomes: Dict[Tuple[int, bool], Verdict] = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {}
        for trial in range(experiment.trials):
            trial_seed = seed_sequence(experiment.master_seed, experiment.experiment_id, point_index, trial)
            for alternative in (False, True):
                future = executor.submit(_run_trial, generator, tester, point, constants, trial_seed, alternative)
                futures[future] = (trial, alternative)
        for future in as_completed(futures):
            outcomes[futures[future]] = future.result()

    ordered = [outcomes[key] for key in sorted(outcomes)]
    null_accepts = sum(1 for (_, alternative), v in sorted(outcomes.items()) if not alternative and not v.is_far)
    alt_rejects = sum(1 for (_, alternative), v in sorted(outcomes.items()) if alternative and v.is_far)
    mean_samples = float(np.mean([v.samples_used_p + v.samples_used_q for v in ordered]))
    return PowerRow(point, null_accepts, alt_rejects, mean_samples, experiment.trials)

def run_power(experiment: ExperimentConfig, workers: Optional[int] = None) -> List[PowerRow]:
    experiment.validate()
    _lookup(experiment)
    workers = config.resolve_workers(workers)
    constants = TesterConstants.from_config(experiment.constants)

    rows: List[PowerRow] = []
    points = experiment.points()
    for index, point in enumerate(points):
        row = _power_at(experiment, index, point, constants, workers)
        logger.info(
            f"[{index + 1}/{len(points)}] {experiment.tester} on {experiment.generator} {format_params(point)}: "
            f"null accept {row.null_accept:.3f}, alt reject {row.alt_reject:.3f}"
        )
        rows.append(row)
    return rows

def estimate_sample_complexity(
    experiment: ExperimentConfig,
    target: Optional[float] = None,
    workers: Optional[int] = None
) -> List[ComplexityRow]:
    """Smallest budget_scale whose null and alternative rates both clear target
    at the configured confidence: doubling to bracket, then bisection in log scale."""
    experiment.validate()
    _lookup(experiment)
    target = config.POWER_TARGET if target is None else target
    workers = config.resolve_workers(workers)
    base = TesterConstants.from_config(experiment.constants)
    search = experiment.search

    rows: List[ComplexityRow] = []
    for index, point in enumerate(experiment.points()):
        evaluated: Dict[float, PowerRow] = {}

        def passes(scale: float) -> bool:
            if scale not in evaluated:
                evaluated[scale] = _power_at(experiment, index, point, replace(base, budget_scale=scale), workers)
            return evaluated[scale].power_lower_bound() >= target

        scale = float(search.get("start_scale", 1.0))
        max_doublings = int(search.get("max_doublings", 12))
        if passes(scale):
            high, low = scale, scale / 2.0
            for _ in range(max_doublings):
                if not passes(low):
                    break
                high, low = low, low / 2.0
        else:
            low, high = scale, scale * 2.0
            for _ in range(max_doublings):
                if passes(high):
                    break
                low, high = high, high * 2.0
            else:
                logger.warning(f"{format_params(point)}: target power not reached by scale {high:g}")

        for _ in range(int(search.get("bisection_steps", 6))):
            middle = math.sqrt(low * high)
            if passes(middle):
                high = middle
            else:
                low = middle

        scales = sorted(evaluated)
        outcomes = [passes(s) for s in scales]
        non_monotone = any(outcomes[i] and not outcomes[j] for i in range(len(scales)) for j in range(i + 1, len(scales)))
        if non_monotone:
            logger.warning(f"{format_params(point)}: power is not monotone in the budget scale")

        samples = evaluated[high].mean_samples if high in evaluated else float("nan")
        logger.info(f"{format_params(point)}: crossing at scale {high:.4g} ({samples:.1f} samples)")
        rows.append(ComplexityRow(point, high, samples, len(evaluated), non_monotone))
    return rows

def complexity_slope(rows: Sequence[ComplexityRow], key: str = "k") -> float:
    """Log-log slope of crossing samples against one grid parameter."""
    xs = np.log([float(row.params[key]) for row in rows])
    ys = np.log([row.samples for row in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    if not 0.5 <= slope <= 0.9:
        logger.warning(f"sample-complexity slope in {key} is {slope:.3f}, outside [0.5, 0.9]")
    return slope

def calibrate_l2_constant(
    experiment: ExperimentConfig,
    target: Optional[float] = None,
    workers: Optional[int] = None
) -> Tuple[List[ComplexityRow], float]:
    """Budget constant C at which every grid point just reaches target power.

    Runs the budget-scale search; the calibrated C is the configured constant
    times the largest crossing scale, so the worst fixture sets it.
    """
    rows = estimate_sample_complexity(experiment, target, workers)
    base = TesterConstants.from_config(experiment.constants)
    calibrated = base.l2_budget_constant * max(row.crossing_scale for row in rows)
    worst = max(rows, key=lambda row: row.crossing_scale)
    logger.info(
        f"calibrated l2 budget constant C = {calibrated:.4g} "
        f"(worst fixture {format_params(worst.params)}, configured C = {base.l2_budget_constant:g})"
    )
    return rows, calibrated

def tv_decay_gap(rows: Sequence[TvRow]) -> float:
    """Drop in TV from the smallest to the largest stable W, in combined standard errors."""
    stable = sorted((row for row in rows if row.stable), key=lambda row: row.W)
    if len(stable) < 2:
        raise ValueError("need two stable W values to compare")
    first, last = stable[0], stable[-1]
    spread = math.sqrt(first.se ** 2 + last.se ** 2)
    gap = first.tv - last.tv
    if spread == 0:
        return math.inf if gap > 0 else (0.0 if gap == 0 else -math.inf)
    return gap / spread

def run_tv_decay(experiment: ExperimentConfig, workers: Optional[int] = None) -> List[TvRow]:
    widths = experiment.grid.get("W", [])
    if not widths:
        raise ValueError("TV decay needs a non-empty W grid")
    rows: List[TvRow] = []
    for W in widths:
        try:
            estimate = estimate_two_sample_pmf(int(W), seed=experiment.master_seed, workers=workers)
            row = TvRow(int(W), estimate.tv, estimate.tv_standard_error, estimate.draws, True)
        except UnstableEstimateError as e:
            logger.warning(str(e))
            row = TvRow(int(W), float("nan"), float("nan"), e.draws, False)
        logger.info(f"W={row.W}: TV={row.tv:.4f} (se {row.se:.4f}, {row.draws} draws)")
        rows.append(row)

    stable = [row for row in rows if row.stable]
    for earlier, later in zip(stable, stable[1:]):
        if later.tv > earlier.tv + later.se + earlier.se:
            logger.warning(f"TV rises from W={earlier.W} to W={later.W} beyond one standard error")
    if stable:
        scaled = [row.tv_log_sq for row in stable]
        logger.info(f"TV * log^2(W) ranges over [{min(scaled):.4f}, {max(scaled):.4f}]")
    if len(stable) >= 2:
        gap = tv_decay_gap(stable)
        message = f"TV drops by {gap:.2f} standard errors from W={stable[0].W} to W={stable[-1].W}"
        if gap > 2.0:
            logger.info(message)
        else:
            logger.warning(message + ", not beyond 2")
    return rows

def rows_to_csv(rows: Sequence[Any], header: List[str]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row.csv_row())
    return buffer.getvalue()

def rows_to_json(rows: Sequence[Any]) -> str:
    return json.dumps([row.to_dict() for row in rows], indent=2, sort_keys=True, default=str)

def write_rows(rows: Sequence[Any], header: List[str], fmt: str, output: Optional[Path]) -> str:
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown output format {fmt!r}")
    text = rows_to_csv(rows, header) if fmt == "csv" else rows_to_json(rows)
    if output is not None:
        output.parent.mkdir(parents=True, exist_ok=True)
        with open(output, "w") as f:
            f.write(text)
        logger.info(f"Wrote {len(rows)} rows to {output}")
    return text
