"""
Report Rows and Emission for resilient-tasks
Flattens benchmark reports into rows and writes them as CSV or JSON
"""

import dataclasses
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional

import pandas as pd

from resil.errors import ReportError

log = logging.getLogger('Report')

FORMATS = ('csv', 'json')

# Machine-dependent columns, dropped by --no-timing
TIMING_COLUMNS = (
    'wall_time_mean',
    'wall_time_std',
    'baseline_wall_time',
    'amortized_overhead_per_task',
    'percent_extra_time',
)


@dataclass
class ReportRow:
    """One campaign cell: its keys, its counters and its timings."""

    bench: str
    variant: str
    cores: int
    error_p: float
    n: int
    seed: int
    fault_kind: Optional[str] = None
    grain_us: Optional[float] = None
    task_count: Optional[int] = None
    subdomains: Optional[int] = None
    points: Optional[int] = None
    iterations: Optional[int] = None
    steps: Optional[int] = None
    courant: Optional[float] = None
    runs_averaged: int = 0
    tasks_launched: int = 0
    executions: int = 0
    executions_per_task: float = 0.0
    injected_failures: int = 0
    failed_tasks: int = 0
    wrong_results: int = 0
    rejected_results: int = 0
    wall_time_mean: Optional[float] = None
    wall_time_std: Optional[float] = None
    baseline_wall_time: Optional[float] = None
    amortized_overhead_per_task: Optional[float] = None
    percent_extra_time: Optional[float] = None
    correct: bool = True
    status: str = 'ok'
    error: Optional[str] = None

    @classmethod
    def columns(cls, timing=True):
        names = [f.name for f in dataclasses.fields(cls)]
        if timing:
            return names
        return [name for name in names if name not in TIMING_COLUMNS]

    @classmethod
    def from_report(cls, bench, report, correct=True, **keys):
        """Row from a BenchReport; keys fill in what report.params lacks."""
        params = dict(report.params)
        params.update(keys)
        known = {f.name for f in dataclasses.fields(cls)}
        row = cls(bench=bench, **{k: v for k, v in params.items() if k in known and k != 'bench'})

        row.runs_averaged = report.runs_averaged
        row.tasks_launched = report.tasks_launched
        row.executions = report.executions
        row.executions_per_task = report.executions_per_task
        row.injected_failures = report.injected_failures
        row.failed_tasks = report.failed_tasks
        row.wrong_results = report.wrong_results
        row.rejected_results = report.rejected_results
        row.wall_time_mean = report.wall_time
        row.wall_time_std = report.wall_time_std
        row.baseline_wall_time = report.baseline_wall_time
        row.amortized_overhead_per_task = report.amortized_overhead_per_task
        row.percent_extra_time = report.percent_extra_time
        row.correct = bool(correct)
        return row

    @classmethod
    def failed(cls, bench, error, **keys):
        """Row for a cell that raised instead of producing a report."""
        known = {f.name for f in dataclasses.fields(cls)}
        row = cls(bench=bench, **{k: v for k, v in keys.items() if k in known and k != 'bench'})
        row.correct = False
        row.status = 'error'
        row.error = f"{type(error).__name__}: {error}"
        return row

    @property
    def ok(self):
        return self.status == 'ok' and self.correct

    def as_record(self, timing=True):
        record = dataclasses.asdict(self)
        for key, value in record.items():
            if isinstance(value, Enum):
                record[key] = value.value
        if not timing:
            for name in TIMING_COLUMNS:
                record.pop(name, None)
        return record


# =============================================================================
# Files
# =============================================================================

def write_atomic(path, data):
    """Write text or bytes to path through a temp file and a rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path('.')
    mode = 'wb' if isinstance(data, (bytes, bytearray)) else 'w'

    tmp = None
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=f'.{path.name}.', suffix='.tmp')
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        if tmp and os.path.exists(tmp):
            os.unlink(tmp)
        raise ReportError(f"could not write {e.strerror or e}", path)


def emit(rows: List[ReportRow], fmt, path, timing=True):
    """
    Write rows as CSV (stable header order) or as a JSON array of objects.

    Numbers keep full double precision. With timing=False the wall-clock
    columns are left out so outputs can be compared byte for byte.
    """
    if not rows:
        raise ReportError("no results", path)
    if fmt not in FORMATS:
        raise ReportError(f"unknown format {fmt!r}", path)

    records = [row.as_record(timing) for row in rows]

    if fmt == 'csv':
        frame = pd.DataFrame.from_records(records, columns=ReportRow.columns(timing))
        text = frame.to_csv(index=False, lineterminator='\n')
    else:
        text = json.dumps(records, indent=2) + '\n'

    write_atomic(path, text)
    log.info(f"Wrote {len(rows)} rows to {path}")


def load_rows(path):
    """Read an emitted report back as a list of dicts (missing values as None)."""
    path = Path(path)
    try:
        if path.suffix.lower() == '.json':
            with open(path) as f:
                return json.load(f)
        frame = pd.read_csv(path, float_precision='round_trip')
    except (OSError, ValueError) as e:
        raise ReportError(f"could not read report: {e}", path)

    records = frame.to_dict('records')
    for record in records:
        for key, value in record.items():
            if isinstance(value, float) and math.isnan(value):
                record[key] = None
            elif hasattr(value, 'item'):
                record[key] = value.item()
    return records
