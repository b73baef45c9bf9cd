"""
Fault Injection for resilient-tasks
Exponential error law, scripted outcomes, silent corruption and the
artificial benchmark task
"""

import itertools
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from resil.errors import ConfigError, InjectedFault
from resil.resiliency import current_attempt
from resil.runtime import current_worker_index

log = logging.getLogger('Faults')

# What a healthy universal task returns
EXPECTED_ANSWER = 42

_SEED_MASK = (1 << 64) - 1

# Threads that are not pool workers draw from streams above this offset
_FOREIGN_STREAM_BASE = 1 << 20


class FaultKind(str, Enum):
    LOUD = 'loud'  # the task raises
    SILENT = 'silent'  # the task returns a corrupted value


class Outcome(str, Enum):
    SUCCEED = 'succeed'
    LOUD_FAULT = 'loud_fault'
    SILENT_CORRUPT = 'silent_corrupt'


class GrainMode(str, Enum):
    SPIN = 'spin'  # busy-wait, holds the CPU
    SLEEP = 'sleep'  # sleeps, releases the interpreter lock


# =============================================================================
# Counters
# =============================================================================

class AtomicCounter:
    """Integer counter safe to bump from every worker."""

    def __init__(self, start=0):
        self._value = start
        self._lock = threading.Lock()

    def increment(self, amount=1):
        with self._lock:
            self._value += amount
            return self._value

    @property
    def value(self):
        with self._lock:
            return self._value

    def reset(self):
        with self._lock:
            self._value = 0

    def __repr__(self):
        return f"{type(self).__name__}({self.value})"


class FailureCounter(AtomicCounter):
    """Number of failures injected so far, across all threads."""


# =============================================================================
# Random streams
# =============================================================================

_rng_local = threading.local()
_foreign_streams = itertools.count(_FOREIGN_STREAM_BASE)


def thread_rng(seed):
    """
    numpy Generator private to the calling thread, seeded from (seed, stream).

    The stream is the pool worker index, so a given worker draws the same
    sequence for the same seed from run to run.
    """
    streams = getattr(_rng_local, 'streams', None)
    if streams is None:
        streams = _rng_local.streams = {}

    worker = current_worker_index()
    stream = worker if worker is not None else getattr(_rng_local, 'foreign', None)
    if stream is None:
        stream = _rng_local.foreign = next(_foreign_streams)

    rng = streams.get((seed, stream))
    if rng is None:
        rng = streams[(seed, stream)] = np.random.default_rng([seed & _SEED_MASK, stream])
    return rng


# =============================================================================
# Fault model
# =============================================================================

@dataclass
class FaultModel:
    """
    How injected failures are produced.

    Probabilistic models fail with probability e^-x for rate factor x; scripted
    models hand out their outcomes in order, or by attempt index when the
    caller names one (see outcome_for_execution).
    """

    rate_factor: Optional[float] = math.inf  # x; inf never fails, 0 always fails
    script: Optional[Sequence[Outcome]] = None
    kind: FaultKind = FaultKind.LOUD
    seed: int = 0
    cycle: bool = False  # scripted: start over instead of running out
    _cursor: int = field(default=0, init=False, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.kind = FaultKind(self.kind)
        if self.script is not None:
            self.script = tuple(Outcome(o) for o in self.script)
            self.rate_factor = None
        elif self.rate_factor is None or math.isnan(self.rate_factor) or self.rate_factor < 0:
            raise ConfigError('rate_factor', f"must be >= 0, got {self.rate_factor!r}")

    @classmethod
    def never(cls, kind=FaultKind.LOUD):
        return cls(rate_factor=math.inf, kind=kind)

    @classmethod
    def probabilistic(cls, rate_factor, kind=FaultKind.LOUD, seed=0):
        return cls(rate_factor=float(rate_factor), kind=kind, seed=seed)

    @classmethod
    def from_probability(cls, p, kind=FaultKind.LOUD, seed=0):
        """Model failing with probability p (x = -ln p)."""
        if not 0.0 <= p <= 1.0:
            raise ConfigError('error_p', f"probability must be within [0, 1], got {p}")
        rate = math.inf if p == 0.0 else -math.log(p)
        return cls(rate_factor=rate, kind=kind, seed=seed)

    @classmethod
    def scripted(cls, outcomes, seed=0, cycle=False):
        return cls(script=outcomes, seed=seed, cycle=cycle)

    @property
    def is_scripted(self):
        return self.script is not None

    @property
    def probability(self):
        """Failure probability e^-x; None for scripted models."""
        if self.is_scripted:
            return None
        return math.exp(-self.rate_factor)

    def reset(self):
        with self._lock:
            self._cursor = 0

    def next_outcome(self, rng=None, attempt=None):
        """
        Outcome of the next task execution.

        A scripted model returns entry attempt when one is given, independent of
        how many executions came before; otherwise its cursor advances.
        """
        if self.is_scripted:
            if attempt is None:
                with self._lock:
                    index = self._cursor
                    self._cursor += 1
            else:
                index = attempt
            if self.cycle:
                index %= len(self.script)
            elif index >= len(self.script):
                raise IndexError(f"fault script exhausted after {len(self.script)} outcomes")
            return self.script[index]

        if not should_fail(self, rng if rng is not None else thread_rng(self.seed)):
            return Outcome.SUCCEED
        return Outcome.LOUD_FAULT if self.kind == FaultKind.LOUD else Outcome.SILENT_CORRUPT

    def outcome_for_execution(self, rng=None):
        """
        Outcome of the running execution.

        Scripts are indexed by replay attempt / replicate launch index (0 for a
        plain launch), so every task sees the same row whatever the schedule.
        """
        attempt = current_attempt()
        return self.next_outcome(rng, attempt=attempt if attempt is not None else 0)


def should_fail(model: FaultModel, rng) -> bool:
    """
    Draw an exponential variate with rate x and fail iff it exceeds 1.0.

    P(fail) = e^-x.
    """
    x = model.rate_factor
    if x is None:
        raise ValueError("should_fail needs a probabilistic fault model")
    if x == 0:
        return True
    if math.isinf(x):
        return False
    return rng.exponential(1.0 / x) > 1.0


def corrupt_value(v: float) -> float:
    """
    Silent-error payload: flip the sign and add 1.

    The single fixed point of that rule (0.5) is shifted by +1 instead.
    """
    if not math.isfinite(v):
        raise ValueError(f"cannot corrupt non-finite value {v!r}")
    corrupted = -v + 1.0
    if corrupted == v:
        corrupted = v + 1.0
    return corrupted


# =============================================================================
# Universal task
# =============================================================================

@dataclass
class WorkSpec:
    """Grain size (seconds of work) and fault model of a universal task."""

    delay: float = 200e-6
    fault_model: FaultModel = field(default_factory=FaultModel.never)
    mode: GrainMode = GrainMode.SPIN

    def __post_init__(self):
        self.mode = GrainMode(self.mode)
        if self.delay < 0 or math.isnan(self.delay):
            raise ConfigError('delay', f"must be >= 0, got {self.delay!r}")

    @classmethod
    def from_micros(cls, grain_us, fault_model=None, mode=GrainMode.SPIN):
        return cls(grain_us * 1e-6, fault_model or FaultModel.never(), mode)


def spin_for(seconds):
    """Busy-wait for at least the given time; returns the elapsed seconds."""
    target = int(seconds * 1e9)
    start = time.perf_counter_ns()
    now = start
    while now - start < target:
        now = time.perf_counter_ns()
    return (now - start) * 1e-9


def occupy(seconds, mode=GrainMode.SPIN):
    if mode == GrainMode.SLEEP:
        start = time.perf_counter()
        if seconds > 0:
            time.sleep(seconds)
        return time.perf_counter() - start
    return spin_for(seconds)


def universal_task(spec: WorkSpec, counter: FailureCounter, rng=None) -> int:
    """
    The artificial benchmark task: decide failure, do spec.delay of work, answer 42.

    The failure decision is made before the work so a failing execution still
    costs its full grain. Loud failures raise InjectedFault; silent ones return
    a corrupted answer.
    """
    outcome = spec.fault_model.outcome_for_execution(rng)
    if outcome != Outcome.SUCCEED:
        counter.increment()

    occupy(spec.delay, spec.mode)

    if outcome == Outcome.LOUD_FAULT:
        raise InjectedFault("injected fault")
    if outcome == Outcome.SILENT_CORRUPT:
        return int(corrupt_value(float(EXPECTED_ANSWER)))
    return EXPECTED_ANSWER


def is_expected_answer(value):
    return value == EXPECTED_ANSWER


# =============================================================================
# Scripted tasks
# =============================================================================

class ScriptedTask:
    """
    Task whose behavior per attempt comes from a script.

    Entry i is used for replay attempt i / replicate launch index i (or for the
    i-th call outside a combinator). An exception entry is raised, a callable
    entry is called with the task arguments, anything else is returned.
    Calls past the end of the script reuse the last entry.
    """

    def __init__(self, script):
        if not script:
            raise ValueError("script needs at least one entry")
        self.script = list(script)
        self.calls = AtomicCounter()

    @property
    def executions(self):
        return self.calls.value

    def __call__(self, *args):
        call_number = self.calls.increment() - 1
        index = current_attempt()
        if index is None:
            index = call_number

        entry = self.script[min(index, len(self.script) - 1)]
        if isinstance(entry, BaseException):
            raise entry
        if callable(entry):
            return entry(*args)
        return entry
