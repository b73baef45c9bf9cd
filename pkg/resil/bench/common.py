"""
Shared benchmark plumbing: run measurements, averaged reports, wave launching
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from resil.runtime import FAILED, TaskHandle


@dataclass
class RunMeasurement:
    """Counters and timing of one benchmark run."""

    wall_time: float
    tasks: int
    executions: int = 0
    injected_failures: int = 0
    failed_tasks: int = 0
    wrong_results: int = 0
    rejected_results: int = 0
    baseline_wall_time: Optional[float] = None


@dataclass
class BenchReport:
    """
    Measurements of a benchmark configuration averaged over its runs.

    Timings are per run (mean and sample standard deviation, pool start and
    stop excluded); counters are totals over all runs.
    """

    variant: str
    wall_time: float = 0.0
    wall_time_std: float = 0.0
    baseline_wall_time: Optional[float] = None
    tasks_launched: int = 0  # per run
    executions: int = 0
    injected_failures: int = 0
    failed_tasks: int = 0  # final handles that settled with an error
    wrong_results: int = 0  # accepted results that were not correct
    rejected_results: int = 0  # results turned down by a validator
    runs_averaged: int = 0
    wall_times: List[float] = field(default_factory=list, repr=False)
    params: dict = field(default_factory=dict)  # configuration keys of the cell

    @classmethod
    def from_runs(cls, variant, runs: List[RunMeasurement]):
        if not runs:
            raise ValueError("no runs to report")

        times = np.array([r.wall_time for r in runs], dtype=float)
        baselines = [r.baseline_wall_time for r in runs if r.baseline_wall_time is not None]

        return cls(
            variant=variant,
            wall_time=float(times.mean()),
            wall_time_std=float(times.std(ddof=1)) if len(runs) > 1 else 0.0,
            baseline_wall_time=float(np.mean(baselines)) if baselines else None,
            tasks_launched=runs[0].tasks,
            executions=sum(r.executions for r in runs),
            injected_failures=sum(r.injected_failures for r in runs),
            failed_tasks=sum(r.failed_tasks for r in runs),
            wrong_results=sum(r.wrong_results for r in runs),
            rejected_results=sum(r.rejected_results for r in runs),
            runs_averaged=len(runs),
            wall_times=[float(t) for t in times],
        )

    @property
    def executions_per_task(self):
        launched = self.tasks_launched * self.runs_averaged
        return self.executions / launched if launched else 0.0

    @property
    def amortized_overhead_per_task(self):
        """(variant wall time - baseline wall time) / tasks, in seconds."""
        if self.baseline_wall_time is None or not self.tasks_launched:
            return None
        return (self.wall_time - self.baseline_wall_time) / self.tasks_launched

    @property
    def percent_extra_time(self):
        if not self.baseline_wall_time:
            return None
        return 100.0 * (self.wall_time - self.baseline_wall_time) / self.baseline_wall_time


def drain_in_waves(launch: Callable[[int], TaskHandle], count: int, window: int,
                   on_settled: Callable[[TaskHandle], None]):
    """
    Launch count tasks keeping at most window handles outstanding.

    Handles are retired oldest first; on_settled sees each one after it settled.
    """
    pending = deque()
    for index in range(count):
        if len(pending) >= window:
            handle = pending.popleft()
            handle.wait()
            on_settled(handle)
        pending.append(launch(index))

    while pending:
        handle = pending.popleft()
        handle.wait()
        on_settled(handle)


def tally_outcomes(is_correct: Callable[[object], bool]):
    """
    Settled-handle callback counting failures and wrong answers.

    Returns (callback, counts) where counts is a dict updated in place.
    """
    counts = {'failed': 0, 'wrong': 0}

    def on_settled(handle):
        if handle.state == FAILED:
            counts['failed'] += 1
        elif not is_correct(handle.result()):
            counts['wrong'] += 1

    return on_settled, counts
