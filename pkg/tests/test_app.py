import logging

import numpy as np
import pytest

from resil.app import Campaign, artificial_correct, main, parse_args, run_campaign, stencil_checked
from resil.bench.common import BenchReport
from resil.bench.stencil import StencilConfig, field_matches, load_field, reference_solution
from resil.errors import ConfigError
from resil.faults import FaultKind, Outcome
from resil.reporting import load_rows

TINY_STENCIL = ['--bench', 'stencil', '--subdomains', '4', '--points', '32', '--iterations', '6',
                '--steps', '3', '--cores', '2', '--reps', '1']


@pytest.fixture(autouse=True)
def clean_environment(fresh_settings):
    """Clear RESIL_* overrides and drop the handler main() installs."""
    fresh_settings()
    root = logging.getLogger()
    before, level = list(root.handlers), root.level
    yield
    for handler in list(root.handlers):
        if handler not in before:
            root.removeHandler(handler)
    root.setLevel(level)


# =============================================================================
# Argument parsing
# =============================================================================

def test_single_cell_campaign():
    campaign = parse_args(['--bench', 'artificial', '--variant', 'async_replay',
                           '--error-p', '0.05', '--cores', '4'])
    cells = campaign.cells()
    assert len(cells) == 1
    cfg = cells[0].validate()
    assert cfg.variant.value == 'async_replay'
    assert (cfg.error_p, cfg.cores, cfg.grain_us, cfg.replay_n) == (0.05, 4, 200.0, 3)
    assert campaign.output_path == 'results.csv'
    assert campaign.repetitions == 10


def test_probability_out_of_range_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        parse_args(['--error-p', '1.5'])
    assert info.value.code == 2
    assert '--error-p' in capsys.readouterr().err


def test_unknown_variant_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        parse_args(['--bench', 'stencil', '--variant', 'async_replay'])
    assert info.value.code == 2
    assert '--variant' in capsys.readouterr().err


def test_geometry_that_cannot_hold_ghosts_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        parse_args(['--bench', 'stencil', '--points', '6', '--steps', '3'])
    assert info.value.code == 2
    assert '--points' in capsys.readouterr().err


def test_stencil_case_geometry():
    campaign = parse_args(['--bench', 'stencil', '--case', 'A', '--variant', 'replay'])
    cfg = campaign.cells()[0]
    assert (cfg.subdomains, cfg.points, cfg.iterations, cfg.steps) == (128, 16_000, 8192, 128)


def test_case_overrides():
    cfg = parse_args(['--bench', 'stencil', '--case', 'B', '--iterations', '2']).cells()[0]
    assert (cfg.subdomains, cfg.iterations) == (256, 2)


def test_default_variants_cover_the_bench():
    assert len(parse_args(['--bench', 'stencil']).variants) == 5
    assert 'baseline' in parse_args([]).variants


def test_cartesian_product_of_axes():
    campaign = parse_args(['--variant', 'async_replay', '--variant', 'async_replicate',
                           '--error-p', '0', '--error-p', '0.1', '--cores', '1', '--cores', '2',
                           '--n', '2', '--n', '4', '--format', 'json'])
    assert len(campaign.cells()) == 16
    assert campaign.output_path == 'results.json'


def test_environment_seed_wins(fresh_settings, monkeypatch):
    monkeypatch.setenv('RESIL_SEED', '99')
    fresh_settings()
    assert parse_args(['--seed', '5']).seed == 99


def test_seed_flag_without_environment():
    assert parse_args(['--seed', '5']).seed == 5


def test_script_flag():
    campaign = parse_args(['--script', 'loud_fault, succeed'])
    assert campaign.script == [Outcome.LOUD_FAULT, Outcome.SUCCEED]
    with pytest.raises(SystemExit):
        parse_args(['--script', 'explode'])


def test_campaign_validation_names_the_field():
    with pytest.raises(ConfigError) as info:
        Campaign(repetitions=0, cores=[1]).validate()
    assert info.value.field == 'reps'


# =============================================================================
# Correctness rules
# =============================================================================

def artificial_cell(**changes):
    base = dict(variants=['async_replay'], cores=[1], error_ps=[0.0], tasks=10)
    base.update(changes)
    return Campaign(**base).validate().cells()[0].validate()


def test_artificial_correctness_rules():
    clean = BenchReport('x')
    wrong = BenchReport('x', wrong_results=3)
    failed = BenchReport('x', failed_tasks=1)

    assert artificial_correct(artificial_cell(), clean)
    assert not artificial_correct(artificial_cell(), failed)
    assert artificial_correct(artificial_cell(error_ps=[0.2]), failed)
    assert not artificial_correct(artificial_cell(error_ps=[0.2]), wrong)

    silent = dict(error_ps=[0.2], fault_kind=FaultKind.SILENT)
    assert artificial_correct(artificial_cell(**silent), wrong)
    assert not artificial_correct(artificial_cell(variants=['async_replay_validate'], **silent), wrong)


def test_stencil_checked():
    assert stencil_checked(StencilConfig(error_p=0.0).validate())
    assert not stencil_checked(StencilConfig(error_p=0.1).validate())
    assert stencil_checked(StencilConfig(variant='replay', error_p=0.1).validate())
    assert not stencil_checked(StencilConfig(variant='replay', error_p=0.1, fault_kind='silent').validate())
    assert stencil_checked(StencilConfig(variant='replay_checksum', error_p=0.1, fault_kind='silent').validate())


# =============================================================================
# Campaigns
# =============================================================================

def test_campaign_rows_per_cell():
    campaign = Campaign(variants=['async_replay', 'async_replicate'], error_ps=[0.0, 0.05, 0.3],
                        cores=[2], grains=[0.0], tasks=50, repetitions=2)
    rows = run_campaign(campaign)
    assert len(rows) == 6
    assert all(row.runs_averaged == 2 for row in rows)
    assert all(row.ok for row in rows)
    assert {row.variant for row in rows} == {'async_replay', 'async_replicate'}
    replicate = [row for row in rows if row.variant == 'async_replicate']
    assert all(row.executions_per_task == 3.0 for row in replicate)


def test_scripted_campaign_without_timing_is_reproducible(tmp_path):
    outputs = []
    for name in ('first.csv', 'second.csv'):
        path = tmp_path / name
        code = main(['--variant', 'async_replay', '--variant', 'async_replay_validate', '--cores', '1',
                     '--tasks', '40', '--grain-us', '0', '--reps', '2', '--script', 'loud_fault,succeed',
                     '--no-timing', '--out', str(path)])
        assert code == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]

    rows = load_rows(tmp_path / 'first.csv')
    assert [row['executions'] for row in rows] == [160, 160]
    assert 'wall_time_mean' not in rows[0]


def test_unprotected_stencil_cell_fails_the_run(tmp_path):
    path = tmp_path / 'out.json'
    code = main(TINY_STENCIL + ['--variant', 'pure_dataflow', '--error-p', '0.5', '--seed', '3',
                                '--format', 'json', '--out', str(path)])
    assert code == 1
    rows = load_rows(path)
    assert rows[0]['status'] == 'error'


def test_protected_stencil_cells_pass(tmp_path):
    path = tmp_path / 'out.csv'
    code = main(TINY_STENCIL + ['--variant', 'pure_dataflow', '--variant', 'replay', '--variant', 'replicate',
                                '--error-p', '0.0', '--out', str(path)])
    assert code == 0
    rows = load_rows(path)
    assert [row['variant'] for row in rows] == ['pure_dataflow', 'replay', 'replicate']
    assert all(row['correct'] for row in rows)
    assert rows[1]['baseline_wall_time'] is not None


def test_dump_field_writes_the_final_field(tmp_path):
    field_path = tmp_path / 'final.bin'
    code = main(TINY_STENCIL + ['--variant', 'replay', '--error-p', '0.2', '--n', '10',
                                '--out', str(tmp_path / 'out.csv'), '--dump-field', str(field_path)])
    assert code == 0

    field, subdomains, points = load_field(field_path)
    assert (subdomains, points) == (4, 32)
    cfg = StencilConfig(subdomains=4, points=32, iterations=6, steps=3)
    assert field_matches(field, reference_solution(cfg))
    assert np.all(np.isfinite(field))


def test_dump_field_names_each_cell(tmp_path):
    code = main(TINY_STENCIL + ['--variant', 'pure_dataflow', '--variant', 'replay',
                                '--out', str(tmp_path / 'out.csv'), '--dump-field', str(tmp_path / 'f.csv')])
    assert code == 0
    dumped = sorted(p.name for p in tmp_path.glob('f-*.csv'))
    assert len(dumped) == 2
    assert dumped[0].startswith('f-pure_dataflow-c2-p0-n')


def test_unwritable_report_returns_failure(tmp_path):
    code = main(['--variant', 'baseline', '--cores', '1', '--tasks', '5', '--grain-us', '0', '--reps', '1',
                 '--out', str(tmp_path / 'missing' / 'out.csv')])
    assert code == 1


def test_unwritable_field_dump_returns_failure(tmp_path):
    path = tmp_path / 'out.csv'
    code = main(TINY_STENCIL + ['--variant', 'replay', '--out', str(path),
                                '--dump-field', str(tmp_path / 'missing' / 'final.bin')])
    assert code == 1
    rows = load_rows(path)
    assert rows[0]['status'] == 'error'
    assert 'ReportError' in rows[0]['error']


def test_scripted_campaign_is_reproducible_on_many_cores(tmp_path):
    outputs = []
    for name in ('first.csv', 'second.csv'):
        path = tmp_path / name
        code = main(['--variant', 'async_replay', '--variant', 'async_replicate', '--cores', '4', '--cores', '8',
                     '--tasks', '600', '--n', '2', '--grain-us', '50', '--grain-mode', 'sleep', '--reps', '2',
                     '--script', 'loud_fault,loud_fault,succeed', '--no-timing', '--out', str(path)])
        assert code == 0
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]

    rows = load_rows(tmp_path / 'first.csv')
    replay = [row for row in rows if row['variant'] == 'async_replay']
    assert [(row['executions'], row['failed_tasks']) for row in replay] == [(2400, 1200)] * 2
