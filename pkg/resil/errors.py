"""
Error types for resilient-tasks

A failed TaskHandle carries one of the TaskError subclasses below. The kind
attribute is always set and the cause chain always ends.
"""

from enum import Enum


class ErrorKind(str, Enum):
    """What went wrong with a task."""

    TASK_FAULT = 'task_fault'
    VALIDATION_EXHAUSTED = 'validation_exhausted'
    REPLAY_EXHAUSTED = 'replay_exhausted'
    ALL_REPLICAS_FAILED = 'all_replicas_failed'


class TaskError(Exception):
    """Failure payload of a task handle."""

    kind = ErrorKind.TASK_FAULT

    def __init__(self, message, cause=None):
        super().__init__(message)
        self.message = message
        self.cause = cause
        if cause is not None:
            self.__cause__ = cause

    def chain(self):
        """Return this error followed by every nested cause."""
        errors = []
        current = self
        while current is not None and current not in errors:
            errors.append(current)
            current = current.cause
        return errors

    def __repr__(self):
        if self.cause is None:
            return f"{type(self).__name__}({self.message!r})"
        return f"{type(self).__name__}({self.message!r}, cause={self.cause!r})"


class TaskFault(TaskError):
    """A task function raised."""

    kind = ErrorKind.TASK_FAULT

    def __init__(self, message, cause=None, original=None):
        super().__init__(message, cause=cause)
        self.original = original
        if original is not None and cause is None:
            self.__cause__ = original

    @classmethod
    def from_exception(cls, exc):
        """Wrap an arbitrary exception raised by user code."""
        if isinstance(exc, TaskError):
            return exc
        message = str(exc) or type(exc).__name__
        return cls(message, original=exc)


class ValidationExhausted(TaskError):
    """Every computed result was rejected by the validator."""

    kind = ErrorKind.VALIDATION_EXHAUSTED


class ReplayExhausted(TaskError):
    """All replay attempts faulted; cause is the last fault."""

    kind = ErrorKind.REPLAY_EXHAUSTED


class AllReplicasFailed(TaskError):
    """Every replica faulted; cause is the last fault to finish."""

    kind = ErrorKind.ALL_REPLICAS_FAILED


class InjectedFault(Exception):
    """Marker raised by fault injection to simulate a failing task."""


class ConfigError(ValueError):
    """Invalid configuration value."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ReportError(Exception):
    """Report could not be written or read."""

    def __init__(self, message, path=None):
        super().__init__(f"{message} ({path})" if path else message)
        self.path = path
