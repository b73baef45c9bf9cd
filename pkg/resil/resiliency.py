"""
Task Resiliency for resilient-tasks
Replay and replicate launch combinators, in async and dataflow flavors

Replay runs a task again (sequentially) until it succeeds, up to n attempts.
Replicate runs n copies of a task concurrently and picks a result from the
ones that succeeded: the first by launch index, the first valid one, or the
one chosen by a voting function.
"""

import contextvars
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

from resil.errors import (
    AllReplicasFailed,
    ConfigError,
    ReplayExhausted,
    TaskFault,
    ValidationExhausted,
)
from resil.runtime import FAILED, RESOLVED, TaskHandle, fail_on_error, first_failure, get_runtime

replay_log = logging.getLogger('Replay')
replicate_log = logging.getLogger('Replicate')

_attempt = contextvars.ContextVar('resil_attempt', default=None)


def current_attempt():
    """
    0-based replay attempt or replicate launch index of the running task.

    None outside of a combinator.
    """
    return _attempt.get()


def _check_n(n):
    if isinstance(n, bool) or not isinstance(n, int):
        raise ConfigError('n', f"expected an integer, got {n!r}")
    if n < 1:
        raise ConfigError('n', f"must be >= 1, got {n}")


@dataclass(frozen=True)
class ReplayPolicy:
    """Replay up to n attempts; optional validator on each result."""

    n: int
    validator: Optional[Callable[[Any], bool]] = None

    def __post_init__(self):
        _check_n(self.n)


@dataclass(frozen=True)
class ReplicatePolicy:
    """Launch exactly n instances; optional validator filter and voter."""

    n: int
    validator: Optional[Callable[[Any], bool]] = None
    voter: Optional[Callable[[list], Any]] = None

    def __post_init__(self):
        _check_n(self.n)


def _run_instance(index, f, args, kwargs):
    token = _attempt.set(index)
    try:
        return f(*args, **kwargs)
    finally:
        _attempt.reset(token)


def _accepts(validator, value, log):
    """A validator that raises rejects the result."""
    try:
        return bool(validator(value))
    except Exception as e:
        log.warning(f"Validator raised {type(e).__name__}: {e} - result treated as invalid")
        return False


def majority_vote(values: Sequence, key: Optional[Callable] = None):
    """
    Most frequent value; ties go to the value seen first.

    Pass key for results that are not hashable (arrays, lists): values are
    then grouped by key(value).
    """
    if not values:
        raise ValueError("majority_vote needs at least one value")

    keys = [key(v) if key else v for v in values]
    try:
        counts = Counter(keys)
        tally = [counts[k] for k in keys]
    except TypeError:
        tally = [sum(1 for other in keys if other == k) for k in keys]

    best = max(range(len(values)), key=lambda i: (tally[i], -i))
    return values[best]


# =============================================================================
# Replay
# =============================================================================

def replay(policy: ReplayPolicy, f, args=(), kwargs=None):
    """
    Run f up to policy.n times, one attempt after the other.

    Returns the first result that completes (and validates). Raises
    ValidationExhausted if the last attempt produced an invalid result,
    ReplayExhausted (cause: last fault) if the last attempt faulted.
    """
    kwargs = kwargs or {}
    last_fault = None
    rejected = False

    for attempt in range(policy.n):
        try:
            value = _run_instance(attempt, f, args, kwargs)
        except Exception as e:
            last_fault = TaskFault.from_exception(e)
            rejected = False
            replay_log.debug(f"Attempt {attempt + 1}/{policy.n} faulted: {last_fault.message}")
            continue

        if policy.validator is None or _accepts(policy.validator, value, replay_log):
            return value

        rejected = True
        replay_log.debug(f"Attempt {attempt + 1}/{policy.n} rejected by validator")

    if rejected:
        replay_log.debug(f"Validation exhausted after {policy.n} attempts")
        raise ValidationExhausted(f"result rejected by validator on attempt {policy.n} of {policy.n}")

    replay_log.debug(f"Replay exhausted after {policy.n} attempts")
    raise ReplayExhausted(f"task failed on all {policy.n} attempts", cause=last_fault)


def async_replay(n, f, *args, **kwargs) -> TaskHandle:
    """Launch f now; on a fault, re-run it, up to n attempts in total."""
    policy = ReplayPolicy(n)
    return get_runtime().spawn(replay, policy, f, args, kwargs)


def async_replay_validate(n, valf, f, *args, **kwargs) -> TaskHandle:
    """As async_replay, but a result failing valf also counts as a failed attempt."""
    policy = ReplayPolicy(n, validator=valf)
    return get_runtime().spawn(replay, policy, f, args, kwargs)


def _dataflow_replay(policy, f, deps):
    # replays reuse the resolved dependency values; dependencies never re-run
    def attempt_all(*values):
        return replay(policy, f, values)

    return get_runtime().dataflow(attempt_all, deps)


def dataflow_replay(n, f, deps) -> TaskHandle:
    """Once deps resolve, run f(*values) with replay semantics."""
    return _dataflow_replay(ReplayPolicy(n), f, deps)


def dataflow_replay_validate(n, valf, f, deps) -> TaskHandle:
    return _dataflow_replay(ReplayPolicy(n, validator=valf), f, deps)


# =============================================================================
# Replicate
# =============================================================================

def select_result(policy: ReplicatePolicy, instances):
    """
    Pick the outcome of a finished set of replicas (in launch order).

    Faulted instances are dropped; survivors are filtered by the validator
    and then voted on, or the first survivor wins.
    """
    values = [h._value for h in instances if h.state == RESOLVED]
    if not values:
        last = max((h for h in instances if h.state == FAILED), key=lambda h: h.settled_seq)
        raise AllReplicasFailed(f"all {len(instances)} replicas failed", cause=last._error)

    if policy.validator is not None:
        values = [v for v in values if _accepts(policy.validator, v, replicate_log)]
        if not values:
            raise ValidationExhausted(f"none of the {len(instances)} replica results validated")

    if policy.voter is None:
        return values[0]
    return policy.voter(values)


def replicate(runtime, policy: ReplicatePolicy, f, args=(), kwargs=None) -> TaskHandle:
    """
    Launch policy.n instances of f and select once all of them finished.

    Selection runs as a task of its own so the validator and voter execute
    on a worker.
    """
    kwargs = kwargs or {}
    instances = [
        runtime.spawn(_run_instance, index, f, args, kwargs)
        for index in range(policy.n)
    ]

    result = TaskHandle()
    runtime.when_settled(
        instances,
        fail_on_error(result, lambda settled: runtime.submit(result, select_result, (policy, settled)))
    )
    return result


def _forward(source, target):
    if source.state == FAILED:
        target.set_error(source._error)
    else:
        target.set_result(source._value)


def _dataflow_replicate(policy, f, deps):
    runtime = get_runtime()
    result = TaskHandle()

    def launch(settled):
        failure = first_failure(settled)
        if failure is not None:
            result.set_error(failure)
            return
        values = tuple(h._value for h in settled)
        replicate(runtime, policy, f, values).add_done_callback(
            fail_on_error(result, lambda h: _forward(h, result))
        )

    runtime.when_settled(deps, fail_on_error(result, launch))
    return result


def async_replicate(n, f, *args, **kwargs) -> TaskHandle:
    """n concurrent instances; the successful result with the lowest launch index wins."""
    return replicate(get_runtime(), ReplicatePolicy(n), f, args, kwargs)


def async_replicate_validate(n, valf, f, *args, **kwargs) -> TaskHandle:
    """n concurrent instances; the first (by launch index) result passing valf wins."""
    return replicate(get_runtime(), ReplicatePolicy(n, validator=valf), f, args, kwargs)


def async_replicate_vote(n, votef, f, *args, **kwargs) -> TaskHandle:
    """n concurrent instances; votef picks from the successful results."""
    return replicate(get_runtime(), ReplicatePolicy(n, voter=votef), f, args, kwargs)


def async_replicate_vote_validate(n, votef, valf, f, *args, **kwargs) -> TaskHandle:
    """n concurrent instances; valid results are voted on by votef."""
    policy = ReplicatePolicy(n, validator=valf, voter=votef)
    return replicate(get_runtime(), policy, f, args, kwargs)


def dataflow_replicate(n, f, deps) -> TaskHandle:
    return _dataflow_replicate(ReplicatePolicy(n), f, deps)


def dataflow_replicate_validate(n, valf, f, deps) -> TaskHandle:
    return _dataflow_replicate(ReplicatePolicy(n, validator=valf), f, deps)


def dataflow_replicate_vote(n, votef, f, deps) -> TaskHandle:
    return _dataflow_replicate(ReplicatePolicy(n, voter=votef), f, deps)


def dataflow_replicate_vote_validate(n, votef, valf, f, deps) -> TaskHandle:
    return _dataflow_replicate(ReplicatePolicy(n, validator=valf, voter=votef), f, deps)


ASYNC_COMBINATORS = {
    'async_replay': async_replay,
    'async_replay_validate': async_replay_validate,
    'async_replicate': async_replicate,
    'async_replicate_validate': async_replicate_validate,
    'async_replicate_vote': async_replicate_vote,
    'async_replicate_vote_validate': async_replicate_vote_validate,
}

DATAFLOW_COMBINATORS = {
    'dataflow_replay': dataflow_replay,
    'dataflow_replay_validate': dataflow_replay_validate,
    'dataflow_replicate': dataflow_replicate,
    'dataflow_replicate_validate': dataflow_replicate_validate,
    'dataflow_replicate_vote': dataflow_replicate_vote,
    'dataflow_replicate_vote_validate': dataflow_replicate_vote_validate,
}
