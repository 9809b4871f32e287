import subprocess
import sys

import pytest

import oracle_env
from relsym.cli import main
from relsym.induce import LiftedKey, LiftedOperator, save_operators

SMALL = ["--set", "n_samples=1500", "--set", "epochs=2", "--set", "eval_pairs=3",
         "--set", "min_support=3", "--set", "eval_actions=1", "--set", "timeout_s=1"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    assert main(["pipeline", "--workdir", str(wd), *SMALL]) == 0
    return wd


def test_pipeline_writes_every_stage(workdir):
    for name in ("dataset.jsonl", "model.npz", "model.metrics.jsonl", "symbolic.jsonl",
                 "operators.json", "domain.pddl", "plan.txt", "plan.problem.pddl", "report.tsv"):
        assert (workdir / name).stat().st_size > 0, name
    report = (workdir / "report.tsv").read_text()
    assert report.startswith("# effect_mse\t")
    assert "objects\tactions\tpairs\tsuccess_rate" in report
    assert "; status=" in (workdir / "plan.txt").read_text()


def test_stage_rerun_is_byte_identical(workdir, tmp_path):
    args = ["--workdir", str(workdir), *SMALL]
    for stage, name in (("symbolize", "symbolic.jsonl"), ("induce", "operators.json"),
                        ("emit", "domain.pddl")):
        out = tmp_path / name
        assert main([stage, *args, "--out", str(out)]) == 0
        assert out.read_bytes() == (workdir / name).read_bytes(), stage
    out = tmp_path / "d.jsonl"
    assert main(["collect", *args, "--out", str(out)]) == 0
    assert out.read_bytes() == (workdir / "dataset.jsonl").read_bytes()


def test_unknown_config_key(tmp_path, capsys):
    assert main(["collect", "--workdir", str(tmp_path), "--set", "bogus_key=1"]) == 2
    assert "bogus_key" in capsys.readouterr().err
    cfg = tmp_path / "c.cfg"
    cfg.write_text("epochs = 3\nlearning_rat = 0.1\n")
    assert main(["collect", "--workdir", str(tmp_path), "--config", str(cfg)]) == 2
    assert "learning_rat" in capsys.readouterr().err


def test_invalid_config_value(tmp_path, capsys):
    assert main(["collect", "--workdir", str(tmp_path), "--set", "epochs=-1"]) == 2
    assert "epochs" in capsys.readouterr().err


def test_missing_input_fails(tmp_path, capsys):
    assert main(["induce", "--workdir", str(tmp_path)]) == 2
    assert "does not exist" in capsys.readouterr().err


def test_unsolvable_plan_exits_zero(workdir, tmp_path):
    # a single operator without effects cannot change anything
    key = LiftedKey.from_literals("left", "left", ("?a", "?b"), True,
                                  [("p0", "?a"), ("p0", "?b")], 1, 3)
    ops_path = tmp_path / "ops.json"
    save_operators(ops_path, [LiftedOperator(key, support=1)])
    out = tmp_path / "plan.txt"
    statuses = set()
    for seed in range(6):
        code = main(["plan", "--workdir", str(workdir), "--seed", str(seed), "--in", str(ops_path),
                     "--out", str(out), "--objects", "3", "--actions", "2", *SMALL])
        assert code == 0
        statuses.add(out.read_text().splitlines()[-1].split()[1])
    assert "status=Unsolvable" in statuses


def test_induce_stage_on_symbolic_file(tmp_path):
    from relsym.symbols import save_symbolic
    save_symbolic(tmp_path / "symbolic.jsonl", oracle_env.generate(300, 0), 1, 3)
    assert main(["induce", "--workdir", str(tmp_path), "--set", "min_support=5"]) == 0
    assert main(["emit", "--workdir", str(tmp_path), "--set", "min_support=5"]) == 0
    assert (tmp_path / "domain.pddl").read_text().count("(:action") == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "relsym", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "pipeline" in proc.stdout
