"""
Task Runtime for resilient-tasks
Worker-thread pool with deferred results (TaskHandle) and dataflow joins
"""

import contextvars
import itertools
import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

from resil.errors import ConfigError, TaskError, TaskFault
from resil.settings import default_workers

log = logging.getLogger('Runtime')

PENDING = 'pending'
RESOLVED = 'resolved'
FAILED = 'failed'

# How long a blocked worker sleeps between attempts to help with queued work
HELP_POLL_SECONDS = 0.0005

_worker_local = threading.local()

# next() on a count is atomic under the GIL
_settle_counter = itertools.count(1)

# Per-thread queue of done-callbacks still to run; set while a thread drains it
_dispatch = threading.local()


def _dispatch_callbacks(handle, callbacks):
    """
    Run callbacks for a settled handle without nesting.

    A callback that settles another handle only queues that handle's
    callbacks; the outermost call on the thread drains the queue in a loop,
    so a failure moving down a chain of any length keeps a flat stack.
    """
    pending = getattr(_dispatch, 'pending', None)
    if pending is not None:
        pending.extend((handle, callback) for callback in callbacks)
        return

    pending = _dispatch.pending = deque((handle, callback) for callback in callbacks)
    try:
        while pending:
            settled, callback = pending.popleft()
            settled._invoke(callback)
    finally:
        _dispatch.pending = None


def _current_worker():
    """(runtime, worker index) when called on a pool thread, else None."""
    return getattr(_worker_local, 'worker', None)


def current_worker_index():
    """Index of the pool worker running the caller, None off the pool."""
    worker = _current_worker()
    return None if worker is None else worker[1]


# =============================================================================
# Task Handles
# =============================================================================

class TaskHandle:
    """
    Deferred result of a task.

    Settles exactly once, to a value or to a TaskError. Reads after settling
    always return the same outcome; the value object itself is shared between
    readers and must be treated as read-only.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._event = threading.Event()
        self._state = PENDING
        self._value = None
        self._error = None
        self._callbacks = []
        self.settled_seq = None  # global settle order, used to find the "last" failure

    @classmethod
    def resolved(cls, value):
        handle = cls()
        handle.set_result(value)
        return handle

    @classmethod
    def failed(cls, error):
        handle = cls()
        handle.set_error(error)
        return handle

    def __repr__(self):
        if self._state == RESOLVED:
            return f"<TaskHandle resolved {self._value!r}>"
        if self._state == FAILED:
            return f"<TaskHandle failed {self._error!r}>"
        return "<TaskHandle pending>"

    @property
    def state(self):
        return self._state

    def done(self):
        return self._state != PENDING

    def set_result(self, value):
        self._settle(RESOLVED, value, None)

    def set_error(self, error):
        if not isinstance(error, TaskError):
            error = TaskFault.from_exception(error)
        self._settle(FAILED, None, error)

    def _settle(self, state, value, error):
        with self._lock:
            if self._state != PENDING:
                raise RuntimeError(f"handle already {self._state}")
            self._value = value
            self._error = error
            self.settled_seq = next(_settle_counter)
            self._state = state
            callbacks, self._callbacks = self._callbacks, None
        self._event.set()
        if callbacks:
            _dispatch_callbacks(self, callbacks)

    def _invoke(self, callback):
        try:
            callback(self)
        except Exception:
            log.exception("done-callback raised")

    def add_done_callback(self, callback):
        """
        Run callback(handle) once settled; right away if already settled.

        Inside another done-callback the call is queued behind it instead.
        """
        with self._lock:
            if self._state == PENDING:
                self._callbacks.append(callback)
                return
        _dispatch_callbacks(self, [callback])

    def wait(self, timeout=None):
        """
        Block until settled. Returns False on timeout.

        On a pool worker the wait helps: queued tasks are executed while this
        handle is pending, so a worker blocking on a handle cannot starve the
        task that would settle it.
        """
        if self._event.is_set():
            return True

        worker = _current_worker()
        if worker is None:
            return self._event.wait(timeout)

        runtime, index = worker
        deadline = None if timeout is None else time.monotonic() + timeout
        while not self._event.is_set():
            if runtime._run_one(index):
                continue
            pause = HELP_POLL_SECONDS
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                pause = min(pause, remaining)
            self._event.wait(pause)
        return True

    def result(self, timeout=None):
        """Return the value, or raise the TaskError the task failed with."""
        if not self.wait(timeout):
            raise TimeoutError("task handle still pending")
        if self._state == FAILED:
            raise self._error
        return self._value

    def exception(self, timeout=None):
        """Return the TaskError (None if resolved)."""
        if not self.wait(timeout):
            raise TimeoutError("task handle still pending")
        return self._error


def as_handle(obj):
    """Plain values behave as already-resolved handles."""
    if isinstance(obj, TaskHandle):
        return obj
    return TaskHandle.resolved(obj)


def fail_on_error(result, callback):
    """
    Wrap a done-callback that is responsible for settling result.

    If the callback raises while result is still pending, result fails with
    that error instead of staying pending forever.
    """
    def guarded(arg):
        try:
            callback(arg)
        except Exception as e:
            if result.done():
                raise
            log.error(f"Settling callback raised {type(e).__name__}: {e}")
            result.set_error(TaskFault.from_exception(e))

    return guarded


def first_failure(handles):
    """The error of the first failed handle by position, or None."""
    for handle in handles:
        if handle.state == FAILED:
            return handle._error
    return None


# =============================================================================
# Configuration
# =============================================================================

class QueuePolicy(str, Enum):
    WORK_STEALING = 'work_stealing'
    FIFO = 'fifo'


@dataclass(frozen=True)
class RuntimeConfig:
    """Pool shape."""

    worker_count: int = field(default_factory=default_workers)
    queue_policy: QueuePolicy = QueuePolicy.WORK_STEALING

    def validate(self):
        if isinstance(self.worker_count, bool) or not isinstance(self.worker_count, int):
            raise ConfigError('worker_count', f"expected an integer, got {self.worker_count!r}")
        if self.worker_count < 1:
            raise ConfigError('worker_count', f"must be >= 1, got {self.worker_count}")
        try:
            QueuePolicy(self.queue_policy)
        except ValueError:
            raise ConfigError('queue_policy', f"unknown policy {self.queue_policy!r}")
        return self


# =============================================================================
# Runtime
# =============================================================================

class Runtime:
    """
    Pool of worker threads executing spawned tasks.

    With work_stealing every worker owns a deque: tasks spawned from a worker
    go to its own deque and are popped newest-first, idle workers steal the
    oldest task from the others. With fifo all workers share one queue.
    """

    def __init__(self, config=None):
        self.config = (config or RuntimeConfig()).validate()
        self.policy = QueuePolicy(self.config.queue_policy)

        self._lock = threading.Lock()
        self._work_available = threading.Condition(self._lock)
        self._idle = threading.Condition(self._lock)

        queue_count = self.config.worker_count if self.policy == QueuePolicy.WORK_STEALING else 1
        self._queues = [deque() for _ in range(queue_count)]
        self._next_queue = 0
        self._outstanding = 0
        self._threads = []
        self._running = False
        self._stopping = False
        self._stats = {'spawned': 0, 'executed': 0, 'stolen': 0}

    @property
    def worker_count(self):
        return self.config.worker_count

    @property
    def running(self):
        return self._running

    def start(self):
        with self._lock:
            if self._running:
                raise RuntimeError("runtime already started")
            self._running = True
            self._stopping = False

        for index in range(self.worker_count):
            thread = threading.Thread(
                target=self._worker_loop,
                args=(index,),
                name=f'resil-worker-{index}',
                daemon=True
            )
            self._threads.append(thread)
            thread.start()

        log.info(f"Started {self.worker_count} workers ({self.policy.value})")
        return self

    def stop(self, drain=True):
        """Stop the workers, by default after every outstanding task has run."""
        if not self._running:
            return
        if drain:
            self.wait_idle()

        with self._lock:
            self._stopping = True
            self._work_available.notify_all()

        current = threading.current_thread()
        for thread in self._threads:
            if thread is not current:
                thread.join()

        self._threads = []
        self._running = False
        log.info(f"Stopped workers ({self._stats['executed']} tasks executed)")

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.stop(drain=exc_type is None)

    def stats(self):
        with self._lock:
            stats = dict(self._stats)
            stats['outstanding'] = self._outstanding
            return stats

    def wait_idle(self, timeout=None):
        """Block until no task is queued or executing."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while self._outstanding:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._idle.wait(remaining)
        return True

    # -------------------------------------------------------------------------
    # Launching
    # -------------------------------------------------------------------------

    def spawn(self, f: Callable, *args, **kwargs) -> TaskHandle:
        """Schedule f(*args, **kwargs); faults surface through the handle."""
        handle = TaskHandle()
        self.submit(handle, f, args, kwargs)
        return handle

    def submit(self, handle, f, args=(), kwargs=None):
        """Schedule f and settle the given handle with its outcome."""
        task = (handle, f, tuple(args), kwargs or {})
        worker = _current_worker()

        with self._lock:
            if not self._running or self._stopping:
                raise RuntimeError("runtime is not running")

            if worker is not None and worker[0] is self and self.policy == QueuePolicy.WORK_STEALING:
                queue = self._queues[worker[1]]
            else:
                queue = self._queues[self._next_queue]
                self._next_queue = (self._next_queue + 1) % len(self._queues)

            queue.append(task)
            self._outstanding += 1
            self._stats['spawned'] += 1
            self._work_available.notify()

    def when_settled(self, deps, callback):
        """
        Call callback(handles) once every dependency has settled.

        The callback runs on whichever thread settles the last dependency, or
        right away if all are settled already.
        """
        handles = [as_handle(dep) for dep in deps]
        if not handles:
            callback(handles)
            return

        remaining = [len(handles)]
        lock = threading.Lock()

        def on_done(_):
            with lock:
                remaining[0] -= 1
                fire = remaining[0] == 0
            if fire:
                callback(handles)

        for handle in handles:
            handle.add_done_callback(on_done)

    def when_all(self, deps) -> TaskHandle:
        """Handle resolving to the list of settled dependency handles."""
        joined = TaskHandle()
        self.when_settled(deps, fail_on_error(joined, joined.set_result))
        return joined

    def dataflow(self, f: Callable, deps) -> TaskHandle:
        """
        Run f(*values) once every dependency has resolved.

        If any dependency failed, f is not run and the first failure by
        position becomes the result.
        """
        result = TaskHandle()

        def launch(settled):
            failure = first_failure(settled)
            if failure is not None:
                result.set_error(failure)
                return
            self.submit(result, f, [handle._value for handle in settled])

        self.when_settled(deps, fail_on_error(result, launch))
        return result

    # -------------------------------------------------------------------------
    # Workers
    # -------------------------------------------------------------------------

    def _take(self, index):
        """Pop the next task for worker index; caller holds the lock."""
        if self.policy == QueuePolicy.FIFO:
            queue = self._queues[0]
            return queue.popleft() if queue else None

        own = self._queues[index]
        if own:
            return own.pop()

        count = len(self._queues)
        for offset in range(1, count):
            victim = self._queues[(index + offset) % count]
            if victim:
                self._stats['stolen'] += 1
                return victim.popleft()
        return None

    def _run_one(self, index):
        """Execute one queued task on behalf of worker index, if any."""
        with self._lock:
            task = self._take(index)
        if task is None:
            return False
        self._execute(task)
        return True

    def _execute(self, task):
        handle, f, args, kwargs = task
        try:
            # fresh context per task so attempt markers never leak into helped tasks
            value = contextvars.Context().run(f, *args, **kwargs)
        except TaskError as e:
            handle.set_error(e)
        except Exception as e:
            log.debug(f"Task {getattr(f, '__name__', f)!s} faulted: {type(e).__name__}: {e}")
            handle.set_error(TaskFault.from_exception(e))
        else:
            handle.set_result(value)
        finally:
            with self._lock:
                self._stats['executed'] += 1
                self._outstanding -= 1
                if self._outstanding == 0:
                    self._idle.notify_all()

    def _worker_loop(self, index):
        _worker_local.worker = (self, index)
        while True:
            with self._lock:
                task = self._take(index)
                while task is None:
                    if self._stopping:
                        return
                    self._work_available.wait()
                    task = self._take(index)
            self._execute(task)


# =============================================================================
# Active runtime
# =============================================================================

_active_runtime: Optional[Runtime] = None
_active_lock = threading.Lock()


def get_runtime() -> Runtime:
    """The runtime started by run_pool (or activate)."""
    runtime = _active_runtime
    if runtime is None:
        raise RuntimeError("no runtime active; start one with run_pool()")
    return runtime


def activate(runtime):
    """Make runtime the target of the module-level launch functions."""
    global _active_runtime
    with _active_lock:
        if _active_runtime is not None and _active_runtime is not runtime:
            raise RuntimeError("another runtime is already active")
        _active_runtime = runtime


def deactivate(runtime):
    global _active_runtime
    with _active_lock:
        if _active_runtime is runtime:
            _active_runtime = None


def spawn(f, *args, **kwargs) -> TaskHandle:
    return get_runtime().spawn(f, *args, **kwargs)


def dataflow(f, deps) -> TaskHandle:
    return get_runtime().dataflow(f, deps)


def when_all(deps) -> TaskHandle:
    return get_runtime().when_all(deps)


@dataclass
class PoolTiming:
    """Seconds spent in each phase of run_pool."""

    startup: float = 0.0
    body: float = 0.0
    drain: float = 0.0
    shutdown: float = 0.0
    result: Any = None


def run_pool(config: RuntimeConfig, body: Callable[[Runtime], Any]) -> PoolTiming:
    """
    Start a pool, run body(runtime), drain outstanding tasks and stop.

    Configuration errors are raised before any worker starts. Startup and
    shutdown are timed separately from the body.
    """
    config.validate()
    if _active_runtime is not None:
        raise RuntimeError("a runtime is already active")

    timing = PoolTiming()
    runtime = Runtime(config)

    started = time.perf_counter()
    runtime.start()
    activate(runtime)
    timing.startup = time.perf_counter() - started

    drained = True
    try:
        started = time.perf_counter()
        timing.result = body(runtime)
        timing.body = time.perf_counter() - started

        started = time.perf_counter()
        runtime.wait_idle()
        timing.drain = time.perf_counter() - started
    except BaseException:
        drained = False
        raise
    finally:
        started = time.perf_counter()
        deactivate(runtime)
        runtime.stop(drain=drained)
        timing.shutdown = time.perf_counter() - started

    return timing
