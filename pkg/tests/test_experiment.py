import json
from pathlib import Path

import pytest

from services.channel import generate_realization, snr_to_total_power, trial_seed
from services.dual_solver import solve
from services.experiment import (
    CSV_COLUMNS,
    IMPROVEMENT_COLUMNS,
    CertificationInstance,
    ExperimentSpec,
    ResultRow,
    certify,
    experiment_header,
    improvement_rows,
    load_experiment_spec,
    read_results_csv,
    run_experiment,
    write_improvement_csv,
    write_results_csv,
)
from services.oracle import OracleLimitError
from services.schema import NoiseModel, SolverConfig, SystemGeometry

ROOT = Path(__file__).resolve().parent.parent


def small_spec(**changes) -> ExperimentSpec:
    values = dict(
        geometry={"num_users": 2},
        N_values=[2, 3],
        snr_dB_values=[10.0, 20.0],
        schemes=["proposed", "conventional-df"],
        trials=3,
        root_seed=42,
    )
    values.update(changes)
    return ExperimentSpec(**values)


def test_single_trial_matches_a_direct_solve():
    spec = small_spec(N_values=[4], snr_dB_values=[10.0], schemes=["proposed"], trials=1)
    [row] = run_experiment(spec)
    ch = generate_realization(SystemGeometry(num_users=2), NoiseModel(), 4, trial_seed(42, 0))
    direct = solve(ch, SolverConfig(total_power=snr_to_total_power(10.0, 4)))
    assert row.mean_rate == direct.primal_rate
    assert row.stderr_rate == 0.0
    assert row.P_t == pytest.approx(40.0)
    assert row.trials == 1


def test_rows_are_sorted_and_complete():
    rows = run_experiment(small_spec())
    keys = [(r.scheme, r.N, r.snr_dB) for r in rows]
    assert keys == sorted(keys)
    assert len(rows) == 2 * 2 * 2
    assert all(r.trials == 3 and r.stderr_rate >= 0 for r in rows)


def test_proposed_dominates_conventional_in_every_cell():
    rows = run_experiment(small_spec(snr_dB_values=[4.0, 10.0]))
    by_cell = {(r.scheme, r.N, r.snr_dB): r.mean_rate for r in rows}
    for (scheme, n, snr), rate in by_cell.items():
        if scheme == "proposed":
            assert rate >= by_cell[("conventional-df", n, snr)] - 1e-6


def test_same_root_seed_gives_identical_files(tmp_path):
    spec = small_spec()
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for path in paths:
        write_results_csv(run_experiment(spec), str(path), experiment_header(spec))
    assert paths[0].read_text() == paths[1].read_text()


def test_csv_header_and_comments(tmp_path):
    spec = small_spec(trials=1, N_values=[2], snr_dB_values=[0.0])
    path = tmp_path / "out.csv"
    write_results_csv(run_experiment(spec), str(path), experiment_header(spec))
    lines = path.read_text().splitlines()
    comments = [line for line in lines if line.startswith("#")]
    assert any("snr_definition" in line for line in comments)
    assert any(line == "# root_seed: 42" for line in comments)
    assert lines[len(comments)] == ",".join(CSV_COLUMNS)
    df = read_results_csv(str(path))
    assert list(df.columns) == CSV_COLUMNS
    assert len(df) == 2


def test_power_axis_given_directly():
    rows = run_experiment(small_spec(snr_dB_values=None, P_t_values=[10.0], schemes=["ep-no-sp"], trials=1))
    assert {r.P_t for r in rows} == {10.0}


def test_exactly_one_power_axis():
    with pytest.raises(ValueError):
        small_spec(P_t_values=[10.0])
    with pytest.raises(ValueError):
        small_spec(snr_dB_values=None)


def test_unknown_scheme_is_rejected():
    with pytest.raises(ValueError):
        small_spec(schemes=["greedy"])


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        small_spec(trials=0)


def test_oracle_beyond_limits_is_refused():
    with pytest.raises(OracleLimitError):
        run_experiment(small_spec(N_values=[6], schemes=["oracle"], trials=1))


def test_oracle_scheme_runs_on_small_cells():
    rows = run_experiment(small_spec(N_values=[2], snr_dB_values=[10.0], schemes=["oracle", "proposed"], trials=2))
    rates = {r.scheme: r.mean_rate for r in rows}
    assert rates["oracle"] >= rates["proposed"] - 1e-9


def test_load_spec_from_json(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps({"N_values": [2], "P_t_values": [10.0], "trials": 2}))
    spec = load_experiment_spec(str(path))
    assert spec.trials == 2
    assert spec.schemes == ["proposed"]


@pytest.mark.parametrize("name", ["fig2.toml", "fig3.toml"])
def test_shipped_experiment_specs_load(name):
    spec = load_experiment_spec(str(ROOT / "experiments" / name))
    assert "proposed" in spec.schemes
    assert "conventional-df" in spec.schemes


def test_certify_small_run(tmp_path):
    report = certify(3, 2, 2, 10.0, root_seed=1, dump_dir=str(tmp_path))
    assert len(report.instances) == 3
    assert report.dual_bound_ok
    assert report.budget_ok
    for instance in report.instances:
        assert instance.ratio <= 1.0 + 1e-9


@pytest.mark.slow
def test_thread_count_does_not_change_results():
    spec = small_spec(trials=8)
    assert run_experiment(spec, threads=1) == run_experiment(spec, threads=2)


def _row(scheme, n, snr, rate):
    return ResultRow(scheme=scheme, N=n, snr_dB=snr, P_t=10.0, mean_rate=rate, stderr_rate=0.0,
                     mean_iterations=1.0, trials=1)


def test_improvement_rows_pair_cells(tmp_path):
    rows = [
        _row("proposed", 8, 10.0, 3.0),
        _row("conventional-df", 8, 10.0, 2.0),
        _row("proposed", 4, 10.0, 1.5),
        _row("conventional-df", 4, 10.0, 0.0),
        _row("proposed", 4, 20.0, 2.0),
    ]
    table = improvement_rows(rows)
    assert [(r.N, r.snr_dB) for r in table] == [(4, 10.0), (8, 10.0)]
    assert table[0].mean_gain == 1.5
    assert table[0].improvement_pct == 0.0
    assert table[1].improvement_pct == pytest.approx(50.0)
    path = tmp_path / "gain.csv"
    write_improvement_csv(table, str(path))
    assert path.read_text().splitlines()[0] == ",".join(IMPROVEMENT_COLUMNS)


def test_dual_bound_is_relative():
    instance = CertificationInstance(seed=0, oracle_rate=100.0, solver_rate=99.0, dual_value=99.995,
                                     ratio=0.99, budget_error=0.0)
    assert instance.dual_bound_holds(1e-4)
    assert not instance.model_copy(update={"dual_value": 99.98}).dual_bound_holds(1e-4)


@pytest.mark.slow
def test_certify_threads_do_not_change_instances():
    serial = certify(4, 3, 2, 10.0, root_seed=5)
    parallel = certify(4, 3, 2, 10.0, root_seed=5, threads=2)
    assert serial.instances == parallel.instances
