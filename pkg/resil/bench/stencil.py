"""
1D Stencil Benchmark for resilient-tasks
Linear advection solved with Lax-Wendroff on a periodic domain split into
subdomains. Each task advances one subdomain by several time steps, reading a
ghost region from both neighbors, and reports a checksum witness that a
validator can use to catch silently corrupted results.
"""

import dataclasses
import logging
import struct
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from resil import resiliency
from resil.bench.common import BenchReport, RunMeasurement
from resil.errors import ConfigError, InjectedFault, ReportError
from resil.faults import (
    AtomicCounter,
    FailureCounter,
    FaultKind,
    FaultModel,
    Outcome,
    corrupt_value,
)
from resil.reporting import write_atomic
from resil.runtime import QueuePolicy, RuntimeConfig, TaskHandle, run_pool
from resil.settings import default_workers

log = logging.getLogger('Stencil')

DEFAULT_COURANT = 0.9

# Iterations that may be in flight ahead of the oldest unfinished one
LOOKAHEAD_ITERATIONS = 8

CASES = {
    'A': {'subdomains': 128, 'points': 16_000, 'iterations': 8192, 'steps': 128},
    'B': {'subdomains': 256, 'points': 8_000, 'iterations': 8192, 'steps': 128},
    'desk': {'subdomains': 16, 'points': 512, 'iterations': 64, 'steps': 8},
}

FIELD_MAGIC = b'RST1'
FIELD_HEADER = struct.Struct('<4sIII')  # magic, S, D, reserved


class StencilVariant(str, Enum):
    PURE_DATAFLOW = 'pure_dataflow'
    REPLAY = 'replay'
    REPLAY_CHECKSUM = 'replay_checksum'
    REPLICATE = 'replicate'
    REPLICATE_CHECKSUM = 'replicate_checksum'

    @property
    def is_replicate(self):
        return self.value.startswith('replicate')

    @property
    def validates(self):
        return self.value.endswith('checksum')


@dataclass
class StencilConfig:
    """Decomposition, time stepping and resilience settings of a stencil run."""

    subdomains: int = 16  # S
    points: int = 512  # D, cells per subdomain
    iterations: int = 64  # I, dataflow generations
    steps: int = 8  # G, time steps per task (and ghost width)
    courant: float = DEFAULT_COURANT  # nu = c dt / dx
    variant: StencilVariant = StencilVariant.PURE_DATAFLOW
    replay_n: int = 3
    replicate_n: int = 3
    error_p: float = 0.0
    fault_kind: FaultKind = FaultKind.LOUD
    script: Optional[Sequence[Outcome]] = None
    seed: int = 0
    cores: int = field(default_factory=default_workers)
    runs: int = 1
    queue_policy: QueuePolicy = QueuePolicy.WORK_STEALING
    boundary: str = 'periodic'

    @classmethod
    def case(cls, name, **overrides):
        """Configuration of a named case (A, B or desk)."""
        if name not in CASES:
            raise ConfigError('case', f"unknown case {name!r}, expected one of {sorted(CASES)}")
        return cls(**{**CASES[name], **overrides})

    def validate(self):
        try:
            self.variant = StencilVariant(self.variant)
            self.fault_kind = FaultKind(self.fault_kind)
            self.queue_policy = QueuePolicy(self.queue_policy)
        except ValueError as e:
            raise ConfigError('variant', str(e))

        for name in ('subdomains', 'points', 'iterations', 'steps', 'replay_n', 'replicate_n',
                     'cores', 'runs'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(name, f"must be a positive integer, got {value!r}")
        if self.points <= 2 * self.steps:
            raise ConfigError('points', f"must exceed 2 x steps ({2 * self.steps}), got {self.points}")
        if not 0.0 < self.courant <= 1.0:
            raise ConfigError('courant', f"must be within (0, 1], got {self.courant}")
        if not 0.0 <= self.error_p < 1.0:
            raise ConfigError('error_p', f"must be within [0, 1), got {self.error_p}")
        if self.boundary != 'periodic':
            raise ConfigError('boundary', f"only periodic boundaries are supported, got {self.boundary!r}")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @property
    def total_cells(self):
        return self.subdomains * self.points

    @property
    def total_steps(self):
        return self.iterations * self.steps

    @property
    def task_count(self):
        return self.subdomains * self.iterations

    @property
    def n(self):
        if self.variant == StencilVariant.PURE_DATAFLOW:
            return 1
        return self.replicate_n if StencilVariant(self.variant).is_replicate else self.replay_n

    def fault_model(self):
        if self.script is not None:
            return FaultModel.scripted(self.script, seed=self.seed, cycle=True)
        return FaultModel.from_probability(self.error_p, kind=self.fault_kind, seed=self.seed)

    def params(self):
        return {
            'variant': StencilVariant(self.variant).value,
            'cores': self.cores,
            'error_p': self.error_p,
            'n': self.n,
            'seed': self.seed,
            'fault_kind': FaultKind(self.fault_kind).value,
            'subdomains': self.subdomains,
            'points': self.points,
            'iterations': self.iterations,
            'steps': self.steps,
            'courant': self.courant,
        }


# =============================================================================
# Domain types
# =============================================================================

@dataclass(frozen=True)
class Subdomain:
    """Cell averages of one subdomain; the array is made read-only."""

    index: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ChecksumWitness:
    """Sums that must satisfy output = input - (right flux - left flux)."""

    input_sum: float
    left_flux_sum: float
    right_flux_sum: float
    output_sum: float

    @property
    def residual(self):
        return self.output_sum - (self.input_sum - self.right_flux_sum + self.left_flux_sum)


class SubdomainResult(NamedTuple):
    subdomain: Subdomain
    witness: Optional[ChecksumWitness]


# =============================================================================
# Numerics
# =============================================================================

def lw_fluxes(u, courant):
    """
    Lax-Wendroff interface fluxes F[k] between u[k] and u[k+1], in units of u.

    F = nu u_j + nu (1 - nu) / 2 (u_j+1 - u_j); at nu = 1 this is exactly u_j.
    """
    spread = 0.5 * courant * (1.0 - courant)
    return courant * u[:-1] + spread * (u[1:] - u[:-1])


def lw_update(u, fluxes):
    """Interior update u_j - F_j+1/2 + F_j-1/2 (length shrinks by two)."""
    return (u[1:-1] - fluxes[1:]) + fluxes[:-1]


def lw_step(extended, courant):
    """One Lax-Wendroff step: L input cells give L-2 updated interior cells."""
    extended = np.asarray(extended, dtype=np.float64)
    if extended.ndim != 1 or len(extended) < 3:
        raise ValueError(f"need a 1D array of at least 3 cells, got shape {extended.shape}")
    return lw_update(extended, lw_fluxes(extended, courant))


def _corrupt_most_visible(values):
    """Corrupt the cell where the corruption moves the value the most."""
    index = int(np.argmax(np.abs(1.0 - 2.0 * values)))
    values[index] = corrupt_value(float(values[index]))
    return index


def subdomain_task(left: Subdomain, mid: Subdomain, right: Subdomain, steps: int,
                   courant: float, fault_model: Optional[FaultModel] = None,
                   counter: Optional[FailureCounter] = None, rng=None) -> SubdomainResult:
    """
    Advance mid by steps time steps using steps ghost cells from each neighbor.

    The fault decision is taken before any work. A loud fault raises
    InjectedFault; a silent one corrupts a cell of the output after the
    fluxes were summed, so the witness no longer balances.
    """
    outcome = Outcome.SUCCEED
    if fault_model is not None:
        outcome = fault_model.outcome_for_execution(rng)
        if outcome != Outcome.SUCCEED and counter is not None:
            counter.increment()
    if outcome == Outcome.LOUD_FAULT:
        raise InjectedFault(f"injected fault in subdomain {mid.index}")

    points = len(mid)
    if points <= 2 * steps:
        raise ValueError(f"subdomain of {points} cells cannot host {steps} ghost cells per side")

    u = np.concatenate((left.values[-steps:], mid.values, right.values[:steps]))
    left_flux = 0.0
    right_flux = 0.0
    for step in range(steps):
        fluxes = lw_fluxes(u, courant)
        boundary = steps - step - 1
        left_flux += fluxes[boundary]
        right_flux += fluxes[boundary + points]
        u = lw_update(u, fluxes)

    if outcome == Outcome.SILENT_CORRUPT:
        _corrupt_most_visible(u)

    witness = ChecksumWitness(
        input_sum=float(np.sum(mid.values)),
        left_flux_sum=float(left_flux),
        right_flux_sum=float(right_flux),
        output_sum=float(np.sum(u)),
    )
    return SubdomainResult(Subdomain(mid.index, u), witness)


def validate_checksum(result: SubdomainResult) -> bool:
    """True iff the witness balances within 1e-9 x max(1, |input sum|)."""
    witness = result.witness
    if witness is None:
        return False
    tolerance = 1e-9 * max(1.0, abs(witness.input_sum))
    return bool(abs(witness.residual) <= tolerance)


def initial_field(cfg: StencilConfig):
    """u(x) = sin(2 pi x) sampled at x = i / N on the global grid."""
    cells = cfg.total_cells
    return np.sin(2.0 * np.pi * np.arange(cells, dtype=np.float64) / cells)


def split_field(field, subdomains):
    points = len(field) // subdomains
    return [Subdomain(i, field[i * points:(i + 1) * points]) for i in range(subdomains)]


def reference_solution(cfg: StencilConfig, initial=None):
    """Straight single-threaded loop over the whole periodic grid."""
    u = initial_field(cfg) if initial is None else np.array(initial, dtype=np.float64)
    for _ in range(cfg.total_steps):
        u = lw_step(np.concatenate((u[-1:], u, u[:1])), cfg.courant)
    return u


def conservation_drift(initial, final):
    """|sum(final) - sum(initial)| relative to max(1, sum |initial|)."""
    scale = max(1.0, float(np.sum(np.abs(initial))))
    return abs(float(np.sum(final)) - float(np.sum(initial))) / scale


# =============================================================================
# Driver
# =============================================================================

def _launcher(cfg: StencilConfig, task, validator):
    variant = StencilVariant(cfg.variant)

    if variant == StencilVariant.PURE_DATAFLOW:
        return lambda runtime, deps: runtime.dataflow(task, deps)
    if variant == StencilVariant.REPLAY:
        return lambda runtime, deps: resiliency.dataflow_replay(cfg.replay_n, task, deps)
    if variant == StencilVariant.REPLAY_CHECKSUM:
        return lambda runtime, deps: resiliency.dataflow_replay_validate(
            cfg.replay_n, validator, task, deps)
    if variant == StencilVariant.REPLICATE:
        return lambda runtime, deps: resiliency.dataflow_replicate(cfg.replicate_n, task, deps)
    return lambda runtime, deps: resiliency.dataflow_replicate_validate(
        cfg.replicate_n, validator, task, deps)


def run_once(cfg: StencilConfig, runtime, fault_model=None) -> Tuple[np.ndarray, RunMeasurement]:
    """
    Build and run the iteration DAG on a running pool.

    Task (k, i) depends on the results of (k-1, i-1), (k-1, i) and (k-1, i+1),
    indices modulo S. Raises the TaskError of a final subdomain if the
    resilience budget ran out somewhere upstream.
    """
    fault_model = fault_model or cfg.fault_model()
    fault_model.reset()

    executions = AtomicCounter()
    failures = FailureCounter()
    rejections = AtomicCounter()
    S = cfg.subdomains

    def task(left, mid, right):
        executions.increment()
        return subdomain_task(left.subdomain, mid.subdomain, right.subdomain,
                              cfg.steps, cfg.courant, fault_model, failures)

    def checked(result):
        accepted = validate_checksum(result)
        if not accepted:
            rejections.increment()
        return accepted

    launch = _launcher(cfg, task, checked)

    started = time.perf_counter()
    row = [TaskHandle.resolved(SubdomainResult(sub, None))
           for sub in split_field(initial_field(cfg), S)]
    in_flight = deque()
    for _ in range(cfg.iterations):
        row = [launch(runtime, [row[(i - 1) % S], row[i], row[(i + 1) % S]]) for i in range(S)]
        in_flight.append(row)
        if len(in_flight) > LOOKAHEAD_ITERATIONS:
            for handle in in_flight.popleft():
                handle.wait()

    results = [handle.result() for handle in row]
    wall_time = time.perf_counter() - started

    final = np.concatenate([result.subdomain.values for result in results])
    measurement = RunMeasurement(
        wall_time=wall_time,
        tasks=cfg.task_count,
        executions=executions.value,
        injected_failures=failures.value,
        rejected_results=rejections.value,
    )
    return final, measurement


def run_stencil(cfg: StencilConfig) -> Tuple[np.ndarray, BenchReport]:
    """
    Run the stencil cfg.runs times on a fresh pool; return the final field of
    the last run and the averaged report.
    """
    cfg.validate()
    model = cfg.fault_model()
    runs: List[RunMeasurement] = []
    fields = []

    def body(runtime):
        for rep in range(cfg.runs):
            final, measurement = run_once(cfg, runtime, model)
            fields.append(final)
            runs.append(measurement)
            log.debug(f"{cfg.variant.value} run {rep + 1}/{cfg.runs}: {measurement.wall_time:.4f}s")

    log.info(f"Running {cfg.variant.value}: S={cfg.subdomains} D={cfg.points} I={cfg.iterations} "
             f"G={cfg.steps} nu={cfg.courant}, p={cfg.error_p}, {cfg.cores} cores")
    run_pool(RuntimeConfig(cfg.cores, cfg.queue_policy), body)

    report = BenchReport.from_runs(cfg.variant.value, runs)
    report.params = cfg.params()
    return fields[-1], report


# =============================================================================
# Field files
# =============================================================================

def dump_field(field, subdomains, points, path, fmt='binary'):
    """
    Write a final field for oracle comparison.

    binary: 16-byte header (b'RST1', u32 S, u32 D, u32 reserved) followed by
    little-endian float64 values. csv: one value per line at full precision.
    """
    field = np.asarray(field, dtype=np.float64)
    if len(field) != subdomains * points:
        raise ValueError(f"field has {len(field)} cells, expected {subdomains} x {points}")

    if fmt == 'binary':
        data = FIELD_HEADER.pack(FIELD_MAGIC, subdomains, points, 0) + field.astype('<f8').tobytes()
    elif fmt == 'csv':
        lines = [f"# {FIELD_MAGIC.decode()} {subdomains} {points}"]
        lines.extend(repr(float(v)) for v in field)
        data = '\n'.join(lines) + '\n'
    else:
        raise ValueError(f"unknown field format {fmt!r}")

    write_atomic(path, data)


def load_field(path):
    """Read a field written by dump_field; returns (field, S, D)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ReportError(f"could not read field: {e.strerror or e}", path)

    try:
        if raw[:4] == FIELD_MAGIC:
            _, subdomains, points, _ = FIELD_HEADER.unpack_from(raw)
            field = np.frombuffer(raw, dtype='<f8', offset=FIELD_HEADER.size).astype(np.float64)
        else:
            lines = raw.decode().splitlines()
            header = lines[0].lstrip('# ').split() if lines else []
            if len(header) != 3 or header[0] != FIELD_MAGIC.decode():
                raise ReportError("not a field file", path)
            subdomains, points = int(header[1]), int(header[2])
            field = np.array([float(line) for line in lines[1:] if line.strip()], dtype=np.float64)
    except (struct.error, UnicodeDecodeError, ValueError) as e:
        raise ReportError(f"malformed field file: {e}", path)

    if len(field) != subdomains * points:
        raise ReportError(f"field has {len(field)} cells, header says {subdomains} x {points}", path)
    return field, subdomains, points


def field_matches(field, reference):
    return bool(np.array_equal(field, reference))
