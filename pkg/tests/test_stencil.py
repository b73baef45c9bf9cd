import statistics

import numpy as np
import pytest

from resil.bench.stencil import (
    CASES,
    FIELD_HEADER,
    ChecksumWitness,
    StencilConfig,
    Subdomain,
    SubdomainResult,
    conservation_drift,
    dump_field,
    field_matches,
    initial_field,
    load_field,
    lw_step,
    reference_solution,
    run_stencil,
    split_field,
    subdomain_task,
    validate_checksum,
)
from resil.errors import ConfigError, InjectedFault, ReportError, TaskError
from resil.faults import FailureCounter, FaultKind, FaultModel, Outcome


def desk(**overrides):
    overrides.setdefault('cores', 4)
    return StencilConfig.case('desk', **overrides)


def tiny(**overrides):
    base = dict(subdomains=4, points=32, iterations=6, steps=3, cores=2)
    base.update(overrides)
    return StencilConfig(**base)


def textbook_lax_wendroff(u, nu):
    """u'_j = u_j - nu/2 (u_j+1 - u_j-1) + nu^2/2 (u_j+1 - 2 u_j + u_j-1)"""
    u = np.asarray(u, dtype=float)
    left, mid, right = u[:-2], u[1:-1], u[2:]
    return mid - 0.5 * nu * (right - left) + 0.5 * nu * nu * (right - 2 * mid + left)


@pytest.fixture(scope='module')
def desk_reference():
    return reference_solution(desk())


# =============================================================================
# Numerics
# =============================================================================

def test_unit_courant_is_an_exact_shift():
    u = np.random.default_rng(0).normal(size=50)
    out = lw_step(u, 1.0)
    assert np.array_equal(out, u[:-2])


@pytest.mark.parametrize('nu', [0.1, 0.5, 0.9, 1.0])
def test_constant_input_stays_constant(nu):
    assert lw_step(np.full(20, 3.25), nu) == pytest.approx(np.full(18, 3.25), rel=1e-15)


def test_hand_evaluated_step():
    assert lw_step([0.0, 1.0, 0.0], 0.5)[0] == 0.75


@pytest.mark.parametrize('nu', [0.3, 0.75])
def test_flux_form_matches_textbook_update(nu):
    u = np.random.default_rng(1).uniform(-1, 1, 100)
    assert np.allclose(lw_step(u, nu), textbook_lax_wendroff(u, nu), rtol=0, atol=1e-14)


def test_step_needs_three_cells():
    with pytest.raises(ValueError):
        lw_step([1.0, 2.0], 0.5)


def test_subdomain_is_read_only():
    sub = Subdomain(0, [1.0, 2.0])
    with pytest.raises(ValueError):
        sub.values[0] = 5.0


# =============================================================================
# Subdomain task and checksum
# =============================================================================

def test_unit_shift_across_subdomain_boundary():
    left = Subdomain(0, [9.0, 9.0, 0.0])
    mid = Subdomain(1, [1.0, 2.0, 3.0])
    right = Subdomain(2, [4.0, 9.0, 9.0])
    result = subdomain_task(left, mid, right, steps=1, courant=1.0)
    assert result.subdomain.values.tolist() == [0.0, 1.0, 2.0]
    assert result.subdomain.index == 1


def test_multi_step_task_matches_repeated_global_steps():
    rng = np.random.default_rng(2)
    field = rng.uniform(-1, 1, 3 * 40)
    left, mid, right = split_field(field, 3)
    result = subdomain_task(left, mid, right, steps=5, courant=0.8)

    u = field.copy()
    for _ in range(5):
        u = lw_step(np.concatenate((u[-1:], u, u[:1])), 0.8)
    assert np.array_equal(result.subdomain.values, u[40:80])


def test_witness_balances_for_fault_free_task():
    rng = np.random.default_rng(3)
    for _ in range(20):
        left, mid, right = split_field(rng.normal(0, 10, 3 * 64), 3)
        result = subdomain_task(left, mid, right, steps=8, courant=0.9)
        witness = result.witness
        assert abs(witness.residual) <= 1e-9 * max(1.0, float(np.sum(np.abs(mid.values))))
        assert validate_checksum(result)


def test_silent_corruption_breaks_the_witness():
    subs = split_field(initial_field(tiny()), 4)
    counter = FailureCounter()
    model = FaultModel.scripted([Outcome.SILENT_CORRUPT])
    result = subdomain_task(subs[0], subs[1], subs[2], 3, 0.9, model, counter)
    assert counter.value == 1
    assert not validate_checksum(result)


def test_loud_fault_raises():
    subs = split_field(initial_field(tiny()), 4)
    counter = FailureCounter()
    with pytest.raises(InjectedFault):
        subdomain_task(subs[0], subs[1], subs[2], 3, 0.9, FaultModel.scripted([Outcome.LOUD_FAULT]), counter)
    assert counter.value == 1


def test_task_rejects_too_wide_ghost_region():
    sub = Subdomain(0, np.zeros(4))
    with pytest.raises(ValueError):
        subdomain_task(sub, sub, sub, steps=2, courant=0.5)


def test_validator_cases():
    sub = Subdomain(0, np.zeros(8))
    assert validate_checksum(subdomain_task(sub, sub, sub, 2, 0.9))

    result = subdomain_task(*split_field(np.linspace(0, 1, 24), 3), 2, 0.9)
    values = result.subdomain.values.copy()
    values[3] += 1.0
    w = result.witness
    perturbed = ChecksumWitness(w.input_sum, w.left_flux_sum, w.right_flux_sum, float(np.sum(values)))
    assert not validate_checksum(SubdomainResult(Subdomain(1, values), perturbed))
    assert not validate_checksum(SubdomainResult(sub, None))


# =============================================================================
# Configuration
# =============================================================================

def test_case_task_counts():
    assert StencilConfig.case('A').task_count == 1_048_576
    assert StencilConfig.case('B').task_count == 2_097_152
    a = StencilConfig.case('A')
    assert (a.subdomains, a.points, a.iterations, a.steps) == (128, 16_000, 8192, 128)
    assert set(CASES) == {'A', 'B', 'desk'}


@pytest.mark.parametrize('changes, field', [
    ({'points': 6, 'steps': 3}, 'points'),
    ({'courant': 0.0}, 'courant'),
    ({'courant': 1.2}, 'courant'),
    ({'iterations': 0}, 'iterations'),
    ({'error_p': 1.0}, 'error_p'),
    ({'boundary': 'reflective'}, 'boundary'),
])
def test_config_validation(changes, field):
    with pytest.raises(ConfigError) as info:
        tiny(**changes).validate()
    assert info.value.field == field


def test_unknown_case():
    with pytest.raises(ConfigError):
        StencilConfig.case('C')


# =============================================================================
# Whole runs
# =============================================================================

def test_pure_dataflow_equals_straight_loop(desk_reference):
    final, report = run_stencil(desk())
    assert field_matches(final, desk_reference)
    assert report.tasks_launched == 16 * 64
    assert report.executions == 16 * 64


def test_unit_courant_run_shifts_by_one_subdomain():
    cfg = desk(courant=1.0)
    final, _ = run_stencil(cfg)
    assert np.array_equal(final, np.roll(initial_field(cfg), 512))


def test_global_sum_is_conserved(desk_reference):
    assert conservation_drift(initial_field(desk()), desk_reference) <= 1e-8


def test_fifo_pool_gives_the_same_field(desk_reference):
    final, _ = run_stencil(desk(queue_policy='fifo', cores=3))
    assert field_matches(final, desk_reference)


@pytest.mark.parametrize('error_p', [0.05, 0.3])
def test_replay_hides_loud_faults(desk_reference, error_p):
    final, report = run_stencil(desk(variant='replay', replay_n=10, error_p=error_p, seed=5))
    assert field_matches(final, desk_reference)
    assert report.injected_failures > 0
    assert report.executions == report.tasks_launched + report.injected_failures


def test_checksum_replay_rejects_every_silent_corruption(desk_reference):
    cfg = desk(variant='replay_checksum', replay_n=10, error_p=0.3, fault_kind=FaultKind.SILENT, seed=6)
    final, report = run_stencil(cfg)
    assert field_matches(final, desk_reference)
    assert report.injected_failures > 0
    assert report.rejected_results == report.injected_failures


def test_replicate_checksum_filters_silent_corruption():
    cfg = tiny(variant='replicate_checksum', error_p=0.01, fault_kind=FaultKind.SILENT, seed=2)
    final, report = run_stencil(cfg)
    assert field_matches(final, reference_solution(cfg))
    assert report.rejected_results == report.injected_failures


def test_replicate_executes_three_times_per_task():
    cfg = tiny(variant='replicate')
    final, report = run_stencil(cfg)
    assert report.tasks_launched == 4 * 6
    assert report.executions == 3 * 4 * 6
    assert field_matches(final, reference_solution(cfg))


def test_unprotected_run_surfaces_the_fault():
    cfg = tiny(error_p=0.5, seed=3)
    with pytest.raises(TaskError):
        run_stencil(cfg)


def test_unvalidated_silent_corruption_changes_the_field():
    cfg = tiny(fault_kind=FaultKind.SILENT, script=[Outcome.SILENT_CORRUPT, Outcome.SUCCEED])
    final, report = run_stencil(cfg)
    assert report.injected_failures > 0
    assert not field_matches(final, reference_solution(cfg))


def test_scripted_replay_counts():
    cfg = tiny(variant='replay', script=[Outcome.LOUD_FAULT, Outcome.SUCCEED], cores=1)
    final, report = run_stencil(cfg)
    assert report.executions == 2 * cfg.task_count
    assert report.injected_failures == cfg.task_count
    assert field_matches(final, reference_solution(cfg))


# =============================================================================
# Field files
# =============================================================================

@pytest.mark.parametrize('fmt, name', [('binary', 'field.bin'), ('csv', 'field.csv')])
def test_field_dump_round_trip(tmp_path, fmt, name):
    field = np.random.default_rng(4).normal(size=4 * 8)
    path = tmp_path / name
    dump_field(field, 4, 8, path, fmt)
    loaded, subdomains, points = load_field(path)
    assert (subdomains, points) == (4, 8)
    assert np.array_equal(loaded, field)


def test_binary_field_layout(tmp_path):
    path = tmp_path / 'field.bin'
    dump_field(np.arange(6, dtype=float), 2, 3, path)
    raw = path.read_bytes()
    assert FIELD_HEADER.size == 16
    assert raw[:4] == b'RST1'
    assert FIELD_HEADER.unpack_from(raw) == (b'RST1', 2, 3, 0)
    assert len(raw) == 16 + 6 * 8
    assert np.frombuffer(raw, '<f8', offset=16).tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


def test_dump_rejects_wrong_size(tmp_path):
    with pytest.raises(ValueError):
        dump_field(np.zeros(5), 2, 3, tmp_path / 'f.bin')


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / 'junk.csv'
    path.write_text("hello\n1.0\n")
    with pytest.raises(ReportError):
        load_field(path)


def test_load_rejects_truncated_binary(tmp_path):
    path = tmp_path / 'short.bin'
    dump_field(np.zeros(6), 2, 3, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ReportError):
        load_field(path)


@pytest.mark.slow
def test_replicate_costs_between_one_and_a_half_and_four_times():
    ratios = []
    for _ in range(3):
        _, plain = run_stencil(desk())
        _, replicated = run_stencil(desk(variant='replicate'))
        ratios.append(replicated.wall_time / plain.wall_time)
    assert 1.5 <= statistics.median(ratios) <= 4.0
