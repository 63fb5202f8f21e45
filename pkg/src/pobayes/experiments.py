"""Replication harness: scenario x sample size x replicate x estimator.

Seeds are derived from the master seed with :class:`numpy.random.SeedSequence`
spawn keys, so every replicate can be regenerated on its own and the result
stream does not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .datagen import (
    STUDY_SIZES,
    SCENARIOS,
    Population,
    ScenarioSpec,
    draw_evaluation_set,
    generate_population,
    sample_design,
)
from .model import inverse_logit
from .sampler import VARIANTS, EstimatorSpec, SamplerConfig, run_chain

log = logging.getLogger(__name__)

SCENARIO_ORDER = tuple(SCENARIOS)
PARAMETERS = ("beta0", "beta1", "pi")

# spawn-key tags keep the four seed families disjoint
_POPULATION, _SAMPLE, _CHAIN, _EVALUATION = range(4)


def derive_seed(master_seed: int, *key: int) -> int:
    """64-bit seed for the stream identified by ``key`` under ``master_seed``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)


def population_seed(master_seed: int, scenario: str) -> int:
    return derive_seed(master_seed, _POPULATION, SCENARIO_ORDER.index(scenario))


def sample_seed(master_seed: int, scenario: str, n: int, replicate: int) -> int:
    return derive_seed(master_seed, _SAMPLE, SCENARIO_ORDER.index(scenario), n, replicate)


def chain_seed(master_seed: int, scenario: str, n: int, replicate: int, model: str) -> int:
    return derive_seed(
        master_seed, _CHAIN, SCENARIO_ORDER.index(scenario), n, replicate, VARIANTS.index(model)
    )


def evaluation_seed(master_seed: int, scenario: str) -> int:
    return derive_seed(master_seed, _EVALUATION, SCENARIO_ORDER.index(scenario))


@dataclass(frozen=True)
class ExperimentGrid:
    scenarios: tuple[str, ...] = SCENARIO_ORDER
    sizes: tuple[int, ...] = STUDY_SIZES
    replicates: int = 1000
    models: tuple[str, ...] = VARIANTS
    master_seed: int = 0
    population_size: int = 10_000
    eval_size: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "models", tuple(m.upper() for m in self.models))
        if not (self.scenarios and self.sizes and self.models):
            raise ValueError("grid needs at least one scenario, size and model")
        if unknown := set(self.scenarios) - set(SCENARIOS):
            raise ValueError(f"unknown scenarios {sorted(unknown)}")
        if unknown := set(self.models) - set(VARIANTS):
            raise ValueError(f"unknown models {sorted(unknown)}")
        if any(n <= 0 or n % 5 for n in self.sizes):
            raise ValueError(f"sample sizes must be positive multiples of 5, got {self.sizes}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if len(set(self.scenarios)) != len(self.scenarios) or len(set(self.sizes)) != len(self.sizes):
            raise ValueError("duplicate scenarios or sizes in grid")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentGrid":
        return cls(**d)


@dataclass(frozen=True)
class ReplicateResult:
    scenario: str
    n: int
    model: str
    replicate: int
    beta_hat: tuple[float, ...]
    pi_hat: float
    accept_rate: float
    sens: float
    spec: float
    sample_seed: int = 0
    chain_seed: int = 0
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (SCENARIO_ORDER.index(self.scenario), self.n, VARIANTS.index(self.model), self.replicate)

    @property
    def ok(self) -> bool:
        return self.error is None


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def compute_sens_spec(beta, x_eval: np.ndarray, y_eval: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    """Sensitivity and specificity of ``inverse_logit(b0 + b1 x) >= threshold``; NaN when undefined."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x_eval, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    pred = inverse_logit(beta[0] + x @ beta[1:]) >= threshold
    y = np.asarray(y_eval) == 1
    pos, neg = int(y.sum()), int((~y).sum())
    sens = float(np.sum(pred & y)) / pos if pos else math.nan
    spec = float(np.sum(~pred & ~y)) / neg if neg else math.nan
    return sens, spec


def _estimates(results: Sequence[ReplicateResult]) -> np.ndarray:
    return np.array([[r.beta_hat[0], r.beta_hat[1], r.pi_hat] for r in results], dtype=float)


def compute_rmse(results: Sequence[ReplicateResult], beta_true: Sequence[float], pi_true: float) -> dict[str, float]:
    if not results:
        raise ValueError("rmse of an empty cell")
    est = _estimates(results)
    truth = np.array([beta_true[0], beta_true[1], pi_true])
    rmse = np.sqrt(np.mean((est - truth) ** 2, axis=0))
    return dict(zip(PARAMETERS, rmse.tolist()))


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        return math.nan
    return float(np.dot(da, db)) / denom


def compute_correlations(results: Sequence[ReplicateResult]) -> tuple[float, float, float]:
    """Across-replicate Pearson correlations of (beta0, beta1), (beta0, pi), (beta1, pi).

    NaN marks a zero-variance estimate.
    """
    if len(results) < 3:
        raise ValueError(f"need at least 3 replicates for correlations, got {len(results)}")
    est = _estimates(results)
    b0, b1, pi = est.T
    return _pearson(b0, b1), _pearson(b0, pi), _pearson(b1, pi)


@dataclass(frozen=True)
class Quartiles:
    q1: float
    median: float
    q3: float

    @classmethod
    def of(cls, values: np.ndarray) -> "Quartiles":
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        return cls(float(q1), float(med), float(q3))


@dataclass(frozen=True)
class CellSummary:
    scenario: str
    n: int
    model: str
    replicates: int
    failed: int
    beta0: Quartiles
    beta1: Quartiles
    pi: Quartiles
    rmse: dict[str, float]
    corr_beta0_beta1: float
    corr_beta0_pi: float
    corr_beta1_pi: float
    sens: float
    spec: float
    sens_excluded: int
    spec_excluded: int
    accept_rate: float


@dataclass(frozen=True)
class RelativeSummary:
    scenario: str
    n: int
    rel_sens: float
    rel_spec: float


@dataclass(frozen=True)
class GridSummary:
    cells: tuple[CellSummary, ...]
    relative: tuple[RelativeSummary, ...] = ()
    truth: dict[str, dict[str, float]] = field(default_factory=dict)

    def cell(self, scenario: str, n: int, model: str) -> CellSummary:
        for c in self.cells:
            if (c.scenario, c.n, c.model) == (scenario, n, model.upper()):
                return c
        raise KeyError((scenario, n, model))

    def to_dict(self) -> dict:
        return _nan_to_none(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "GridSummary":
        d = _none_to_nan(d)
        cells = []
        for c in d["cells"]:
            c = dict(c)
            for p in PARAMETERS:
                c[p] = Quartiles(**c[p])
            cells.append(CellSummary(**c))
        relative = tuple(RelativeSummary(**r) for r in d.get("relative", ()))
        return cls(cells=tuple(cells), relative=relative, truth=d.get("truth", {}))


_NAN_FIELDS = {"corr_beta0_beta1", "corr_beta0_pi", "corr_beta1_pi", "sens", "spec", "rel_sens", "rel_spec"}


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def _none_to_nan(obj):
    if isinstance(obj, dict):
        return {k: (math.nan if v is None and k in _NAN_FIELDS else _none_to_nan(v)) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_none_to_nan(v) for v in obj]
    return obj


def _mean_defined(values: Iterable[float]) -> tuple[float, int]:
    vals = np.array(list(values), dtype=float)
    defined = vals[~np.isnan(vals)]
    excluded = int(vals.size - defined.size)
    return (float(defined.mean()) if defined.size else math.nan), excluded


def summarize_grid(results: Iterable[ReplicateResult], truth: dict[str, dict[str, float]]) -> GridSummary:
    """Per-cell quartiles, rmse, correlations and mean sens/spec; M2/M1 ratios per (scenario, n).

    ``truth`` maps scenario -> {"beta0", "beta1", "pi"}.  Results are sorted
    first, so the summary does not depend on the order they arrived in.
    """
    ordered = sorted(results, key=lambda r: r.key)
    cells: dict[tuple, list[ReplicateResult]] = {}
    for r in ordered:
        cells.setdefault((r.scenario, r.n, r.model), []).append(r)

    out = []
    for (scenario, n, model), rs in cells.items():
        good = [r for r in rs if r.ok]
        failed = len(rs) - len(good)
        if not good:
            log.warning("cell %s n=%d %s has no successful replicates", scenario, n, model)
            continue
        est = _estimates(good)
        t = truth[scenario]
        rmse = compute_rmse(good, (t["beta0"], t["beta1"]), t["pi"])
        corr = compute_correlations(good) if len(good) >= 3 else (math.nan,) * 3
        sens, sens_ex = _mean_defined(r.sens for r in good)
        spec, spec_ex = _mean_defined(r.spec for r in good)
        out.append(
            CellSummary(
                scenario=scenario,
                n=n,
                model=model,
                replicates=len(good),
                failed=failed,
                beta0=Quartiles.of(est[:, 0]),
                beta1=Quartiles.of(est[:, 1]),
                pi=Quartiles.of(est[:, 2]),
                rmse=rmse,
                corr_beta0_beta1=corr[0],
                corr_beta0_pi=corr[1],
                corr_beta1_pi=corr[2],
                sens=sens,
                spec=spec,
                sens_excluded=sens_ex,
                spec_excluded=spec_ex,
                accept_rate=float(np.mean([r.accept_rate for r in good])),
            )
        )

    relative = []
    by_key = {(c.scenario, c.n, c.model): c for c in out}
    for (scenario, n, model), c2 in by_key.items():
        if model != "M2" or (scenario, n, "M1") not in by_key:
            continue
        c1 = by_key[(scenario, n, "M1")]
        relative.append(
            RelativeSummary(
                scenario=scenario,
                n=n,
                rel_sens=_ratio(c2.sens, c1.sens),
                rel_spec=_ratio(c2.spec, c1.spec),
            )
        )
    return GridSummary(cells=tuple(out), relative=tuple(relative), truth=truth)


def _ratio(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b) or b == 0.0:
        return math.nan
    return a / b


# ---------------------------------------------------------------------------
# Running the grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _ScenarioData:
    population: Population
    x_eval: np.ndarray
    y_eval: np.ndarray


def build_scenario(grid: ExperimentGrid, scenario: str) -> _ScenarioData:
    spec = ScenarioSpec.named(scenario, N=grid.population_size, seed=population_seed(grid.master_seed, scenario))
    pop = generate_population(spec)
    x_eval, y_eval = draw_evaluation_set(
        pop, min(grid.eval_size, pop.N), seed=evaluation_seed(grid.master_seed, scenario)
    )
    return _ScenarioData(pop, x_eval, y_eval)


def scenario_truth(grid: ExperimentGrid, data: dict[str, _ScenarioData]) -> dict[str, dict[str, float]]:
    return {
        s: {"beta0": SCENARIOS[s][0], "beta1": SCENARIOS[s][1], "pi": data[s].population.pi_true}
        for s in grid.scenarios
    }


def _failed(scenario, n, model, rep, s_seed, c_seed, exc) -> ReplicateResult:
    return ReplicateResult(
        scenario=scenario, n=n, model=model, replicate=rep,
        beta_hat=(math.nan, math.nan), pi_hat=math.nan, accept_rate=math.nan,
        sens=math.nan, spec=math.nan, sample_seed=s_seed, chain_seed=c_seed,
        error=f"{type(exc).__name__}: {exc}",
    )


class CellError(RuntimeError):
    def __init__(self, scenario: str, n: int, replicate: int, model: str | None, cause: Exception):
        where = f"scenario={scenario} n={n} replicate={replicate}" + (f" model={model}" if model else "")
        super().__init__(f"{where}: {type(cause).__name__}: {cause}")
        self.scenario, self.n, self.replicate, self.model = scenario, n, replicate, model


def fit_replicate(
    grid: ExperimentGrid,
    config: SamplerConfig,
    data: _ScenarioData,
    scenario: str,
    n: int,
    rep: int,
    record_errors: bool = False,
) -> list[ReplicateResult]:
    """Draw one dataset and fit every requested estimator on it."""
    s_seed = sample_seed(grid.master_seed, scenario, n, rep)
    pop = data.population
    try:
        sample = sample_design(pop, n, seed=s_seed)
    except Exception as exc:
        if not record_errors:
            raise CellError(scenario, n, rep, None, exc) from exc
        return [
            _failed(scenario, n, m, rep, s_seed, chain_seed(grid.master_seed, scenario, n, rep, m), exc)
            for m in grid.models
        ]

    results = []
    for model in grid.models:
        c_seed = chain_seed(grid.master_seed, scenario, n, rep, model)
        try:
            est = EstimatorSpec(model, pop.pi_true if model == "M1" else None)
            # presence-only fits never see the sealed labels
            fit_sample = sample if model == "M0" else sample.observed()
            out = run_chain(fit_sample, replace(config, seed=c_seed, model=est))
            beta_hat = out.beta_draws.mean(axis=0)
            sens, spec = compute_sens_spec(beta_hat, data.x_eval, data.y_eval)
            results.append(
                ReplicateResult(
                    scenario=scenario, n=n, model=model, replicate=rep,
                    beta_hat=tuple(float(b) for b in beta_hat), pi_hat=out.pi_hat,
                    accept_rate=out.acceptance_rate, sens=sens, spec=spec,
                    sample_seed=s_seed, chain_seed=c_seed,
                )
            )
        except Exception as exc:
            if not record_errors:
                raise CellError(scenario, n, rep, model, exc) from exc
            results.append(_failed(scenario, n, model, rep, s_seed, c_seed, exc))
    return results


_WORKER: dict = {}


def _init_worker(grid, config, data, record_errors):
    _WORKER.update(grid=grid, config=config, data=data, record_errors=record_errors)


def _run_task(task):
    scenario, n, rep = task
    w = _WORKER
    return fit_replicate(w["grid"], w["config"], w["data"][scenario], scenario, n, rep, w["record_errors"])


def grid_tasks(grid: ExperimentGrid) -> list[tuple[str, int, int]]:
    return [(s, n, r) for s in grid.scenarios for n in grid.sizes for r in range(grid.replicates)]


def run_grid(
    grid: ExperimentGrid,
    config: SamplerConfig,
    jobs: int = 1,
    record_errors: bool = False,
    data: dict[str, _ScenarioData] | None = None,
) -> Iterator[ReplicateResult]:
    """Yield results in (scenario, n, replicate, model) order.

    One population per scenario is shared by all of its replicates.  With
    ``record_errors`` a failing fit yields a result carrying ``error`` instead
    of raising :class:`CellError`.
    """
    if data is None:
        data = {s: build_scenario(grid, s) for s in grid.scenarios}
    tasks = grid_tasks(grid)
    if jobs <= 1:
        for scenario, n, rep in tasks:
            yield from fit_replicate(grid, config, data[scenario], scenario, n, rep, record_errors)
        return
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_init_worker, initargs=(grid, config, data, record_errors)
    ) as pool:
        for batch in pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))):
            yield from batch
