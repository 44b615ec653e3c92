import subprocess
import sys

import pytest

from ksvrg.cli import main
from ksvrg.data import load_svmlight, synth_logistic
from ksvrg.harness import read_csv, read_manifest


def test_run_example(tmp_path):
    out = tmp_path / "t.csv"
    rc = main(["run", "--method", "ksvrg-v1", "--k", "10", "--eta", "theory", "--dataset", "synth",
               "--n", "1000", "--d", "20", "--outer-loops", "50", "--seeds", "1", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 52
    assert len(read_csv(out)) == 51
    assert read_manifest(f"{out}.manifest")["rows"] == "51"


def test_missing_out_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        main(["run", "--method", "ksvrg-v1", "--eta", "0.1"])
    assert e.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_rejected():
    with pytest.raises(SystemExit) as e:
        main(["run", "--method", "sgd", "--eta", "0.1", "--out", "x", "--bogus"])
    assert e.value.code == 2


@pytest.mark.parametrize("argv", [
    ["run", "--method", "ksvrg-v1", "--eta", "theory", "--loss", "sigmoid", "--n", "50", "--d", "3", "--out", "{out}"],
    ["run", "--method", "ksvrg-v2", "--eta", "theory", "--q", "3", "--k", "2", "--n", "50", "--d", "3", "--out", "{out}"],
    ["verify", "--theorem", "3", "--n", "10", "--report", "{out}"],
    ["verify", "--theorem", "1", "--q", "10", "--k", "10", "--n", "1000", "--report", "{out}"],
    ["solve-ref", "--loss", "sigmoid", "--n", "20", "--d", "2", "--out", "{out}"],
])
def test_precondition_exit_2(argv, tmp_path, capsys):
    out = str(tmp_path / "o")
    assert main([a.format(out=out) for a in argv]) == 2
    assert "usage" in capsys.readouterr().err


def test_negative_eta_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["run", "--method", "sgd", "--eta", "-1", "--out", "x"])
    assert e.value.code == 2


def test_runtime_error_exit_1(tmp_path):
    assert main(["run", "--method", "sgd", "--eta", "0.1", "--dataset", str(tmp_path / "none.svm"), "--out", str(tmp_path / "o.csv")]) == 1
    bad = tmp_path / "bad.svm"
    bad.write_text("1 2:abc\n")
    assert main(["run", "--method", "sgd", "--eta", "0.1", "--dataset", str(bad), "--out", str(tmp_path / "o.csv")]) == 1


def test_synth_round_trip(tmp_path):
    p = tmp_path / "s.svm"
    assert main(["synth", "--n", "30", "--d", "4", "--seed", "2", "--out", str(p)]) == 0
    assert load_svmlight(p).equals(synth_logistic(30, 4, 2))


def test_solve_ref_then_run(tmp_path):
    ref = tmp_path / "ref.txt"
    data = tmp_path / "s.svm"
    main(["synth", "--n", "80", "--d", "4", "--out", str(data)])
    assert main(["solve-ref", "--dataset", str(data), "--out", str(ref)]) == 0
    out = tmp_path / "t.csv"
    assert main(["run", "--dataset", str(data), "--method", "saga", "--eta", "0.1", "--ref", str(ref),
                 "--outer-loops", "5", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert all(r.residual == r.residual and r.residual >= -1e-12 for r in rows)


def test_ref_tol_populates_residual(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["run", "--n", "60", "--d", "3", "--method", "ksvrg-v2", "--k", "3", "--eta", "theory",
                 "--ref-tol", "1e-10", "--outer-loops", "3", "--out", str(out)]) == 0
    assert all(r.residual == r.residual for r in read_csv(out))


def test_byte_identical_csv(tmp_path):
    argv = ["run", "--n", "120", "--d", "4", "--method", "ksvrg-v1", "--method", "svrg", "--method", "k2svrg",
            "--k", "3", "--k", "6", "--eta", "0.2", "--outer-loops", "4", "--seeds", "1,2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--jobs", "2", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_wall_time_opt_in(tmp_path):
    out = tmp_path / "w.csv"
    main(["run", "--n", "50", "--d", "3", "--method", "sgd", "--eta", "0.1", "--outer-loops", "2",
          "--record-wall-time", "--out", str(out)])
    assert all(r.wall_ms >= 0 for r in read_csv(out))


def test_verify_convex_passes(tmp_path):
    rep = tmp_path / "rep.txt"
    assert main(["verify", "--theorem", "2", "--n", "200", "--d", "5", "--k", "4", "--seeds", "0,1,2,3,4,5",
                 "--outer-loops", "8", "--report", str(rep)]) == 0
    assert "result = pass" in rep.read_text()
    assert (tmp_path / "rep.txt.csv").read_text().startswith("outer_loop,")


def test_verify_nonconvex_passes(tmp_path):
    rep = tmp_path / "rep3.txt"
    assert main(["verify", "--theorem", "3", "--n", "64", "--d", "5", "--seeds", "0,1", "--outer-loops", "10",
                 "--report", str(rep)]) == 0
    text = rep.read_text()
    assert "theorem = 3" in text and "result = pass" in text


def test_help_lists_subcommands():
    proc = subprocess.run([sys.executable, "-m", "ksvrg.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("run", "solve-ref", "verify", "synth"):
        assert sub in proc.stdout
