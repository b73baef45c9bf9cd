"""
Artificial Benchmark for resilient-tasks
Launches a large number of universal tasks through one launch variant and
measures the amortized per-task overhead against plain spawns
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence

from resil import resiliency
from resil.bench.common import BenchReport, RunMeasurement, drain_in_waves, tally_outcomes
from resil.errors import ConfigError
from resil.faults import (
    AtomicCounter,
    FailureCounter,
    FaultKind,
    FaultModel,
    GrainMode,
    Outcome,
    WorkSpec,
    is_expected_answer,
    universal_task,
)
from resil.resiliency import majority_vote
from resil.runtime import QueuePolicy, RuntimeConfig, run_pool
from resil.settings import default_workers

log = logging.getLogger('Artificial')

FULL_SCALE_TASK_COUNT = 1_000_000
DEFAULT_TASK_COUNT = 100_000
DEFAULT_GRAIN_US = 200.0
DEFAULT_RUNS = 10

# Outstanding handles allowed per core while launching
WAVE_FACTOR = 16


class ArtificialVariant(str, Enum):
    BASELINE = 'baseline'
    ASYNC_REPLAY = 'async_replay'
    ASYNC_REPLAY_VALIDATE = 'async_replay_validate'
    ASYNC_REPLICATE = 'async_replicate'
    ASYNC_REPLICATE_VALIDATE = 'async_replicate_validate'
    ASYNC_REPLICATE_VOTE = 'async_replicate_vote'
    ASYNC_REPLICATE_VOTE_VALIDATE = 'async_replicate_vote_validate'

    @property
    def is_replicate(self):
        return self.value.startswith('async_replicate')

    @property
    def validates(self):
        return self.value.endswith('validate')


@dataclass
class ArtificialConfig:
    """One cell of the artificial benchmark."""

    variant: ArtificialVariant = ArtificialVariant.BASELINE
    task_count: int = DEFAULT_TASK_COUNT
    grain_us: float = DEFAULT_GRAIN_US
    error_p: float = 0.0
    replay_n: int = 3
    replicate_n: int = 3
    cores: int = field(default_factory=default_workers)
    runs: int = DEFAULT_RUNS
    seed: int = 0
    fault_kind: FaultKind = FaultKind.LOUD
    grain_mode: GrainMode = GrainMode.SPIN
    script: Optional[Sequence[Outcome]] = None  # scripted outcomes instead of error_p
    queue_policy: QueuePolicy = QueuePolicy.WORK_STEALING

    def validate(self):
        try:
            self.variant = ArtificialVariant(self.variant)
            self.fault_kind = FaultKind(self.fault_kind)
            self.grain_mode = GrainMode(self.grain_mode)
            self.queue_policy = QueuePolicy(self.queue_policy)
        except ValueError as e:
            raise ConfigError('variant', str(e))

        for name in ('task_count', 'replay_n', 'replicate_n', 'cores', 'runs'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if not 0.0 <= self.error_p < 1.0:
            raise ConfigError('error_p', f"must be within [0, 1), got {self.error_p}")
        if self.grain_us < 0:
            raise ConfigError('grain_us', f"must be >= 0, got {self.grain_us}")
        return self

    @property
    def n(self):
        return self.replicate_n if self.variant.is_replicate else self.replay_n

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def fault_model(self):
        if self.script is not None:
            return FaultModel.scripted(self.script, seed=self.seed, cycle=True)
        return FaultModel.from_probability(self.error_p, kind=self.fault_kind, seed=self.seed)

    def params(self):
        return {
            'variant': ArtificialVariant(self.variant).value,
            'cores': self.cores,
            'grain_us': self.grain_us,
            'error_p': self.error_p,
            'n': self.n if self.variant != ArtificialVariant.BASELINE else 1,
            'task_count': self.task_count,
            'seed': self.seed,
        }


class CountedTask:
    """universal_task bound to its spec, counting every execution."""

    def __init__(self, spec, failures):
        self.spec = spec
        self.failures = failures
        self.executions = AtomicCounter()

    def __call__(self):
        self.executions.increment()
        return universal_task(self.spec, self.failures)


def make_launcher(variant, task, replay_n=3, replicate_n=3, runtime=None):
    """Return a zero-argument function launching task once through variant."""
    variant = ArtificialVariant(variant)

    if variant == ArtificialVariant.BASELINE:
        return lambda: runtime.spawn(task)
    if variant == ArtificialVariant.ASYNC_REPLAY:
        return lambda: resiliency.async_replay(replay_n, task)
    if variant == ArtificialVariant.ASYNC_REPLAY_VALIDATE:
        return lambda: resiliency.async_replay_validate(replay_n, is_expected_answer, task)
    if variant == ArtificialVariant.ASYNC_REPLICATE:
        return lambda: resiliency.async_replicate(replicate_n, task)
    if variant == ArtificialVariant.ASYNC_REPLICATE_VALIDATE:
        return lambda: resiliency.async_replicate_validate(replicate_n, is_expected_answer, task)
    if variant == ArtificialVariant.ASYNC_REPLICATE_VOTE:
        return lambda: resiliency.async_replicate_vote(replicate_n, majority_vote, task)
    return lambda: resiliency.async_replicate_vote_validate(
        replicate_n, majority_vote, is_expected_answer, task)


def measure_once(cfg: ArtificialConfig, runtime, variant=None, fault_model=None) -> RunMeasurement:
    """Launch cfg.task_count tasks on a running pool and count what happened."""
    variant = ArtificialVariant(variant or cfg.variant)
    fault_model = fault_model or cfg.fault_model()
    fault_model.reset()

    failures = FailureCounter()
    task = CountedTask(WorkSpec.from_micros(cfg.grain_us, fault_model, cfg.grain_mode), failures)
    launch = make_launcher(variant, task, cfg.replay_n, cfg.replicate_n, runtime)
    on_settled, counts = tally_outcomes(is_expected_answer)

    started = time.perf_counter()
    drain_in_waves(lambda _: launch(), cfg.task_count, WAVE_FACTOR * cfg.cores, on_settled)
    wall_time = time.perf_counter() - started

    if counts['failed']:
        log.warning(f"{variant.value}: {counts['failed']} of {cfg.task_count} tasks failed")

    return RunMeasurement(
        wall_time=wall_time,
        tasks=cfg.task_count,
        executions=task.executions.value,
        injected_failures=failures.value,
        failed_tasks=counts['failed'],
        wrong_results=counts['wrong'],
    )


def run_artificial(cfg: ArtificialConfig) -> BenchReport:
    """
    Run one benchmark cell cfg.runs times and average.

    Each run measures a fault-free baseline (plain spawns) right before the
    variant, in the same pool, so machine drift cancels out. Pool start and
    stop are not part of any timing.
    """
    cfg.validate()
    model = cfg.fault_model()
    runs: List[RunMeasurement] = []

    def body(runtime):
        for rep in range(cfg.runs):
            baseline = measure_once(cfg, runtime, ArtificialVariant.BASELINE, FaultModel.never())
            if cfg.variant == ArtificialVariant.BASELINE and not cfg.error_p and cfg.script is None:
                measured = baseline
            else:
                measured = measure_once(cfg, runtime, cfg.variant, model)
            measured.baseline_wall_time = baseline.wall_time
            runs.append(measured)
            log.debug(f"{cfg.variant.value} run {rep + 1}/{cfg.runs}: {measured.wall_time:.4f}s "
                      f"(baseline {baseline.wall_time:.4f}s)")

    log.info(f"Running {cfg.variant.value}: {cfg.task_count} tasks x {cfg.runs} runs, "
             f"grain {cfg.grain_us}us, p={cfg.error_p}, {cfg.cores} cores")
    run_pool(RuntimeConfig(cfg.cores, cfg.queue_policy), body)

    report = BenchReport.from_runs(cfg.variant.value, runs)
    report.params = cfg.params()
    return report


def sweep(cfgs: List[ArtificialConfig]) -> List[BenchReport]:
    """
    Run cells one after the other, adding a fault-free baseline cell per core
    count when none was requested.
    """
    if not cfgs:
        return []

    task_counts = {c.task_count for c in cfgs}
    grains = {c.grain_us for c in cfgs}
    if len(task_counts) > 1:
        raise ConfigError('task_count', f"sweep cells must share task_count, got {sorted(task_counts)}")
    if len(grains) > 1:
        raise ConfigError('grain_us', f"sweep cells must share grain_us, got {sorted(grains)}")

    covered = {c.cores for c in cfgs if c.variant == ArtificialVariant.BASELINE and c.error_p == 0}
    baselines = [
        cfgs[0].replace(variant=ArtificialVariant.BASELINE, error_p=0.0, script=None, cores=cores)
        for cores in sorted({c.cores for c in cfgs} - covered)
    ]

    return [run_artificial(cfg) for cfg in baselines + list(cfgs)]
