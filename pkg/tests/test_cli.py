"""End-to-end command-line runs on tiny problems."""

import csv

import pytest

from sisqo.cli import main
from sisqo.harness import CSV_COLUMNS, load_results

# a QP small enough that every verb finishes in well under a second
_TINY = ["problem.n=6", "problem.m=2", "oracle.kind=exact",
         "harness.seeds=0", "harness.max_outer_iterations=60"]


def test_run_writes_results(tmp_path):
    out = tmp_path / "run.csv"
    code = main(["run", "-c", "qp_gaussian", "-o", str(out)] + _TINY)
    assert code == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 2
    assert rows[1][1] == "sisqo"
    assert rows[1][-1] == "converged"


def test_run_single_seed_flag(tmp_path):
    out = tmp_path / "seeded.csv"
    code = main(["run", "-c", "qp_gaussian", "-o", str(out), "--seed", "7",
                 "harness.seeds=0 1 2"] + _TINY[:-2])
    assert code == 0
    loaded = load_results(str(out))
    assert [r.seed for r in loaded] == [7]


def test_compare_emits_both_strategies(tmp_path):
    out = tmp_path / "pairs.csv"
    code = main(["compare", "-c", "qp_gaussian", "-o", str(out),
                 "oracle.kind=gaussian", "oracle.eps_n=1e-2",
                 "problem.n=6", "problem.m=2", "harness.seeds=0",
                 "harness.max_outer_iterations=60"])
    assert code == 0
    loaded = load_results(str(out))
    assert sorted({r.strategy for r in loaded}) == ["sisqo", "sisqo_exact"]


def test_sweep_covers_noise_levels(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "-c", "qp_gaussian", "-o", str(out),
                 "oracle.kind=gaussian", "problem.n=6", "problem.m=2",
                 "harness.seeds=0", "harness.eps_n_list=1e-3 1e-2",
                 "harness.max_outer_iterations=60"])
    assert code == 0
    loaded = load_results(str(out))
    assert sorted({r.eps_n for r in loaded}) == [1e-3, 1e-2]
    assert len(loaded) == 4


def test_validate_passes_on_library_problems():
    assert main(["validate", "-c", "qp_gaussian"] + _TINY) == 0
    assert main(["validate", "-c", "control_finite_sum",
                 "problem.mesh_size=4"]) == 0


def test_bad_config_paths_exit_2(tmp_path):
    assert main(["run", "-c", "no_such_profile"]) == 2
    assert main(["run", "-c", "qp_gaussian", "bogus-override"]) == 2
    assert main(["run", "-c", "qp_gaussian", "solver.warp_factor=9"]) == 2
    assert main(["run", "-c", "qp_gaussian", "problem.kind=rosenbrock"]) == 2


def test_unwritable_output_exits_1(tmp_path):
    out = tmp_path / "missing_dir" / "run.csv"
    code = main(["run", "-c", "qp_gaussian", "-o", str(out)] + _TINY)
    assert code == 1


def test_missing_verb_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2
    capsys.readouterr()
