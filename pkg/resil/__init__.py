"""
resilient-tasks
Task-parallel runtime with replay and replicate launch combinators, fault
injection and the benchmarks that measure their overhead
"""

from resil.errors import (
    AllReplicasFailed,
    ConfigError,
    ErrorKind,
    InjectedFault,
    ReplayExhausted,
    ReportError,
    TaskError,
    TaskFault,
    ValidationExhausted,
)
from resil.resiliency import (
    async_replay,
    async_replay_validate,
    async_replicate,
    async_replicate_validate,
    async_replicate_vote,
    async_replicate_vote_validate,
    current_attempt,
    dataflow_replay,
    dataflow_replay_validate,
    dataflow_replicate,
    dataflow_replicate_validate,
    dataflow_replicate_vote,
    dataflow_replicate_vote_validate,
    majority_vote,
)
from resil.runtime import (
    QueuePolicy,
    Runtime,
    RuntimeConfig,
    TaskHandle,
    dataflow,
    run_pool,
    spawn,
    when_all,
)
