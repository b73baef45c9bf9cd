"""
resilient-tasks - Command Line Entry Point
Configures benchmark campaigns, runs them cell by cell and writes the reports
"""

import argparse
import itertools
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from resil.bench.artificial import (
    DEFAULT_GRAIN_US,
    DEFAULT_TASK_COUNT,
    ArtificialConfig,
    ArtificialVariant,
    run_artificial,
)
from resil.bench.stencil import (
    CASES,
    DEFAULT_COURANT,
    StencilConfig,
    StencilVariant,
    dump_field,
    field_matches,
    reference_solution,
    run_stencil,
)
from resil.errors import ConfigError, ReportError
from resil.faults import FaultKind, GrainMode, Outcome
from resil.reporting import FORMATS, ReportRow, emit
from resil.runtime import QueuePolicy
from resil.settings import configure_logging, default_workers, load_settings

log = logging.getLogger('Campaign')

BENCHES = ('artificial', 'stencil')
DEFAULT_REPETITIONS = 10
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')

# Above this many cell updates the straight-loop reference is not worth running
REFERENCE_CHECK_LIMIT = 50_000_000


@dataclass
class Campaign:
    """A benchmark plus the sweep axes whose Cartesian product gives its cells."""

    bench: str = 'artificial'
    variants: List[str] = field(default_factory=list)
    error_ps: List[float] = field(default_factory=lambda: [0.0])
    cores: List[int] = field(default_factory=list)
    grains: List[float] = field(default_factory=lambda: [DEFAULT_GRAIN_US])
    ns: List[int] = field(default_factory=lambda: [3])
    tasks: int = DEFAULT_TASK_COUNT
    case: Optional[str] = None
    subdomains: Optional[int] = None
    points: Optional[int] = None
    iterations: Optional[int] = None
    steps: Optional[int] = None
    courant: float = DEFAULT_COURANT
    repetitions: int = DEFAULT_REPETITIONS
    seed: int = 0
    output_path: str = 'results.csv'
    fmt: str = 'csv'
    timing: bool = True
    fault_kind: FaultKind = FaultKind.LOUD
    grain_mode: GrainMode = GrainMode.SPIN
    script: Optional[List[Outcome]] = None
    queue_policy: QueuePolicy = QueuePolicy.WORK_STEALING
    dump_field: Optional[str] = None
    log_level: Optional[str] = None

    def __post_init__(self):
        if not self.variants:
            self.variants = [v.value for v in self.variant_type()]
        if not self.cores:
            self.cores = [default_workers()]

    def variant_type(self):
        return ArtificialVariant if self.bench == 'artificial' else StencilVariant

    def validate(self):
        if self.bench not in BENCHES:
            raise ConfigError('bench', f"expected one of {list(BENCHES)}, got {self.bench!r}")
        known = [v.value for v in self.variant_type()]
        for variant in self.variants:
            if variant not in known:
                raise ConfigError('variant', f"{variant!r} is not a {self.bench} variant, expected one of {known}")
        if self.repetitions < 1:
            raise ConfigError('reps', f"must be >= 1, got {self.repetitions}")
        if self.fmt not in FORMATS:
            raise ConfigError('format', f"expected one of {list(FORMATS)}, got {self.fmt!r}")
        if self.case is not None and self.case not in CASES:
            raise ConfigError('case', f"expected one of {sorted(CASES)}, got {self.case!r}")

        # Building every cell validates the per-bench ranges as well
        for cfg in self.cells():
            cfg.validate()
        return self

    def stencil_geometry(self):
        geometry = dict(CASES[self.case or 'desk'])
        for name in ('subdomains', 'points', 'iterations', 'steps'):
            value = getattr(self, name)
            if value is not None:
                geometry[name] = value
        geometry['courant'] = self.courant
        return geometry

    def cells(self):
        """One benchmark configuration per point of the sweep."""
        common = dict(seed=self.seed, fault_kind=self.fault_kind, script=self.script,
                      queue_policy=self.queue_policy, runs=self.repetitions)

        if self.bench == 'artificial':
            return [
                ArtificialConfig(variant=variant, task_count=self.tasks, grain_us=grain,
                                 error_p=error_p, replay_n=n, replicate_n=n, cores=cores,
                                 grain_mode=self.grain_mode, **common)
                for variant, cores, grain, error_p, n in itertools.product(
                    self.variants, self.cores, self.grains, self.error_ps, self.ns)
            ]

        geometry = self.stencil_geometry()
        return [
            StencilConfig(variant=variant, error_p=error_p, replay_n=n, replicate_n=n,
                          cores=cores, **geometry, **common)
            for variant, cores, error_p, n in itertools.product(
                self.variants, self.cores, self.error_ps, self.ns)
        ]


# =============================================================================
# Argument parsing
# =============================================================================

def _probability(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid probability {text!r}")
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"probability must be within [0, 1), got {value}")
    return value


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _grain(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid grain size {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _script(text):
    try:
        return [Outcome(token.strip()) for token in text.split(',') if token.strip()]
    except ValueError:
        choices = ', '.join(o.value for o in Outcome)
        raise argparse.ArgumentTypeError(f"script entries must be among {choices}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog='resil',
        description='Run resilient task launch benchmarks and write CSV or JSON reports.',
    )
    parser.add_argument('--bench', choices=BENCHES, default='artificial')
    parser.add_argument('--variant', action='append', dest='variants', default=[],
                        help='launch variant (repeatable, default: all of the benchmark)')
    parser.add_argument('--cores', action='append', type=_positive_int, default=[],
                        help='worker threads (repeatable)')
    parser.add_argument('--grain-us', action='append', type=_grain, dest='grains', default=[],
                        help='artificial task grain in microseconds (repeatable)')
    parser.add_argument('--error-p', action='append', type=_probability, dest='error_ps', default=[],
                        help='probability of an injected error per execution (repeatable)')
    parser.add_argument('--n', action='append', type=_positive_int, dest='ns', default=[],
                        help='replay attempts / replicas (repeatable)')
    parser.add_argument('--tasks', type=_positive_int, default=DEFAULT_TASK_COUNT,
                        help='tasks per artificial run')
    parser.add_argument('--case', choices=sorted(CASES), help='stencil problem size')
    parser.add_argument('--subdomains', type=_positive_int)
    parser.add_argument('--points', type=_positive_int, help='cells per subdomain')
    parser.add_argument('--iterations', type=_positive_int)
    parser.add_argument('--steps', type=_positive_int, help='time steps per task')
    parser.add_argument('--courant', type=float, default=DEFAULT_COURANT)
    parser.add_argument('--reps', type=_positive_int, default=DEFAULT_REPETITIONS)
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--out', default=None, help='report path (default results.<format>)')
    parser.add_argument('--format', choices=FORMATS, default='csv')
    parser.add_argument('--no-timing', action='store_true',
                        help='leave wall-clock columns out of the report')
    parser.add_argument('--fault-kind', choices=[k.value for k in FaultKind], default='loud')
    parser.add_argument('--grain-mode', choices=[m.value for m in GrainMode], default='spin')
    parser.add_argument('--script', type=_script,
                        help='comma separated outcomes replacing --error-p, e.g. loud_fault,succeed')
    parser.add_argument('--queue-policy', choices=[p.value for p in QueuePolicy],
                        default='work_stealing')
    parser.add_argument('--dump-field', help='write final stencil fields here (.csv or binary)')
    parser.add_argument('--log-level', type=str.upper, choices=LOG_LEVELS, default=None)
    return parser


def parse_args(argv=None) -> Campaign:
    """Parse and validate a campaign; usage errors exit with status 2."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = load_settings()
    except ConfigError as e:
        parser.error(str(e))

    seed = settings.seed if settings.seed is not None else args.seed
    campaign = Campaign(
        bench=args.bench,
        variants=args.variants,
        error_ps=args.error_ps or [0.0],
        cores=args.cores,
        grains=args.grains or [DEFAULT_GRAIN_US],
        ns=args.ns or [3],
        tasks=args.tasks,
        case=args.case,
        subdomains=args.subdomains,
        points=args.points,
        iterations=args.iterations,
        steps=args.steps,
        courant=args.courant,
        repetitions=args.reps,
        seed=seed,
        output_path=args.out or f'results.{args.format}',
        fmt=args.format,
        timing=not args.no_timing,
        fault_kind=FaultKind(args.fault_kind),
        grain_mode=GrainMode(args.grain_mode),
        script=args.script,
        queue_policy=QueuePolicy(args.queue_policy),
        dump_field=args.dump_field,
        log_level=args.log_level,
    )

    try:
        campaign.validate()
    except ConfigError as e:
        parser.error(f"argument --{e.field.replace('_', '-')}: {e}")
    return campaign


# =============================================================================
# Campaign execution
# =============================================================================

def _may_corrupt(cfg):
    if cfg.script is not None:
        return Outcome.SILENT_CORRUPT in cfg.script
    return cfg.fault_kind == FaultKind.SILENT and cfg.error_p > 0


def _is_fault_free(cfg):
    return cfg.script is None and cfg.error_p == 0


def artificial_correct(cfg: ArtificialConfig, report) -> bool:
    """
    Fault-free cells must have every task succeed with 42. Otherwise no
    accepted answer may be wrong unless silent faults meet a variant without
    a validator.
    """
    if _is_fault_free(cfg):
        return report.failed_tasks == 0 and report.wrong_results == 0
    if _may_corrupt(cfg) and not cfg.variant.validates:
        return True
    return report.wrong_results == 0


def stencil_checked(cfg: StencilConfig) -> bool:
    """Whether the final field of cfg must equal the fault-free field."""
    if _is_fault_free(cfg):
        return True
    if _may_corrupt(cfg):
        return cfg.variant.validates
    return cfg.variant != StencilVariant.PURE_DATAFLOW


def _dump_path(base, cfg, many):
    if not many:
        return Path(base)
    base = Path(base)
    tag = f"{cfg.variant.value}-c{cfg.cores}-p{cfg.error_p:g}-n{cfg.n}"
    return base.with_name(f"{base.stem}-{tag}{base.suffix}")


def _run_artificial_campaign(c: Campaign) -> List[ReportRow]:
    rows = []
    cells = c.cells()
    for number, cfg in enumerate(cells, 1):
        cfg.validate()
        keys = {**cfg.params(), 'fault_kind': cfg.fault_kind.value}
        log.info(f"Cell {number}/{len(cells)}: {keys['variant']} cores={cfg.cores} "
                 f"grain={cfg.grain_us}us p={cfg.error_p} n={keys['n']}")
        try:
            report = run_artificial(cfg)
        except Exception as e:
            log.error(f"Cell {number} failed: {e}")
            rows.append(ReportRow.failed('artificial', e, **keys))
            continue

        correct = artificial_correct(cfg, report)
        if not correct:
            log.error(f"Cell {number}: {report.wrong_results} wrong results accepted")
        rows.append(ReportRow.from_report('artificial', report, correct=correct, **keys))
    return rows


def _run_stencil_campaign(c: Campaign) -> List[ReportRow]:
    rows = []
    cells = c.cells()
    baselines = {}

    def baseline(cfg):
        """Fault-free pure dataflow run on the same core count, run once."""
        if cfg.cores not in baselines:
            base = cfg.replace(variant=StencilVariant.PURE_DATAFLOW, error_p=0.0, script=None)
            final, report = run_stencil(base)
            report.baseline_wall_time = report.wall_time
            baselines[cfg.cores] = (final, report)
        return baselines[cfg.cores]

    reference = None
    for number, cfg in enumerate(cells, 1):
        cfg.validate()
        keys = cfg.params()
        log.info(f"Cell {number}/{len(cells)}: {keys['variant']} cores={cfg.cores} "
                 f"p={cfg.error_p} n={keys['n']}")
        try:
            expected, base_report = baseline(cfg)
            if cfg.variant == StencilVariant.PURE_DATAFLOW and _is_fault_free(cfg):
                final, report = expected, base_report
                if reference is None and cfg.total_cells * cfg.total_steps <= REFERENCE_CHECK_LIMIT:
                    reference = reference_solution(cfg)
                if reference is not None:
                    expected = reference
            else:
                final, report = run_stencil(cfg)
                report.baseline_wall_time = base_report.wall_time
        except Exception as e:
            log.error(f"Cell {number} failed: {e}")
            rows.append(ReportRow.failed('stencil', e, **keys))
            continue

        correct = not stencil_checked(cfg) or field_matches(final, expected)
        if not correct:
            log.error(f"Cell {number}: final field differs from the fault-free solution")
        row = ReportRow.from_report('stencil', report, correct=correct, **keys)
        rows.append(row)

        if c.dump_field:
            path = _dump_path(c.dump_field, cfg, len(cells) > 1)
            fmt = 'csv' if path.suffix.lower() == '.csv' else 'binary'
            try:
                dump_field(final, cfg.subdomains, cfg.points, path, fmt)
            except ReportError as e:
                log.error(f"Cell {number}: could not write field: {e}")
                row.status = 'error'
                row.error = f"{type(e).__name__}: {e}"
                continue
            log.info(f"Final field written to {path}")
    return rows


def run_campaign(c: Campaign) -> List[ReportRow]:
    """
    Run every cell of the campaign, one pool at a time.

    A cell that raises becomes an error row and the campaign moves on.
    """
    c.validate()
    if c.bench == 'artificial':
        return _run_artificial_campaign(c)
    return _run_stencil_campaign(c)


# =============================================================================
# Main
# =============================================================================

def main(argv=None):
    campaign = parse_args(argv)
    configure_logging(campaign.log_level)

    rows = run_campaign(campaign)
    try:
        emit(rows, campaign.fmt, campaign.output_path, timing=campaign.timing)
    except ReportError as e:
        log.error(f"Could not write report: {e}")
        return 1

    bad = [row for row in rows if not row.ok]
    if bad:
        log.error(f"{len(bad)} of {len(rows)} cells failed")
        return 1
    log.info(f"All {len(rows)} cells passed")
    return 0


if __name__ == '__main__':
    sys.exit(main())
