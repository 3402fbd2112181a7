import io
import sys

import numpy as np
import pytest

from costream import netspec as ns, stack_ready
from costream.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_report_delay(capsys, tmp_path):
    spec = tmp_path / "d.json"
    spec.write_text('{"input": {"channels": 1}, "net": {"type": "delay", "params": {"d": 3}}}')
    code, out, _ = run_cli(capsys, "report", str(spec))
    assert code == 0
    assert out.splitlines()[-1] == "s_NN=1 r_NN=1/1 d_NN=3"


def test_report_validation_error(capsys, tmp_path):
    spec = tmp_path / "bad.json"
    spec.write_text('{"input": {"channels": 1}, "net": {"type": "sequential", "params": {"children": []}}}')
    code, _, err = run_cli(capsys, "report", str(spec))
    assert code == 2
    assert "net.children" in err


def test_missing_file_is_usage_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "report", str(tmp_path / "nope.json"))
    assert code == 2 and "cannot read" in err


def test_check_random(capsys):
    code, out, _ = run_cli(capsys, "check", "--random", "--seed", "7", "--trials", "20")
    assert code == 0
    assert out.splitlines()[-1].startswith("20/20 passed, max rel err")


def test_check_spec_and_fault_injection(capsys, fixtures):
    spec = str(fixtures / "residual_example.json")
    assert run_cli(capsys, "check", spec, "--trials", "3")[0] == 0
    code, out, _ = run_cli(capsys, "check", spec, "--seed", "4", "--trials", "2", "--inject-fault", "3")
    assert code == 1
    assert "FAIL seed=4" in out
    assert "--seed 4 --trials 1" in out


def test_check_needs_exactly_one_source(capsys, fixtures):
    assert run_cli(capsys, "check")[0] == 2
    assert run_cli(capsys, "check", str(fixtures / "worked_example.json"), "--random")[0] == 2


def test_bench(capsys, tmp_path):
    spec = tmp_path / "s.json"
    conv = {"type": "conv", "params": {"out_channels": 2, "kernel_t": 3}}
    spec.write_text(ns.serialize(ns.parse(
        '{"input": {"channels": 2}, "net": {"type": "sequential", "params": {"children": [%s, %s, %s]}}}'
        % ((str(conv).replace("'", '"'),) * 3))))
    code, out, _ = run_cli(capsys, "bench", str(spec), "--steps", "64")
    assert code == 0
    rows = dict(line.split(None, 1) if "  " not in line else [p.strip() for p in line.split("  ", 1)]
                for line in out.splitlines())
    assert rows["redundancy_ratio"].startswith("60 ")
    assert rows["flops_step"] == rows["flops_step (instrumented)"]
    assert "per-prediction ratio" not in rows


def test_bench_strided_has_per_prediction_line(capsys, fixtures):
    code, out, _ = run_cli(capsys, "bench", str(fixtures / "worked_example.json"), "--steps", "32")
    assert code == 0 and "per-prediction ratio" in out


def test_run_delay_rows(capsys, fixtures):
    code, out, _ = run_cli(capsys, "run", str(fixtures / "delay2.json"), "--input", str(fixtures / "abc_input.csv"))
    assert code == 0
    assert out == "y0\nempty\nempty\n1.5\n"


def test_run_matches_library_forward(capsys, fixtures, tmp_path):
    out_path = tmp_path / "out.csv"
    spec = fixtures / "worked_example.json"
    code, _, _ = run_cli(capsys, "run", str(spec), "--input", str(fixtures / "worked_input.csv"),
                         "--output", str(out_path), "--pad-end")
    assert code == 0
    rows = out_path.read_text().splitlines()[1:]
    x = np.loadtxt(fixtures / "worked_input.csv", skiprows=1).reshape(1, 1, -1)
    net = ns.build(ns.load(spec))
    got = [float(r) for r in rows if r != "empty"]
    # printed values parse back to the exact step outputs
    assert got == list(stack_ready(net.forward_steps(x, pad_end=True))[0, 0])
    np.testing.assert_allclose(got, net.forward(x)[0, 0], rtol=1e-12)
    assert rows[:4] == ["empty"] * 4
    assert len(rows) == 20 + 2


def test_run_is_deterministic(capsys, fixtures):
    args = ("run", str(fixtures / "worked_example.json"), "--input", str(fixtures / "worked_input.csv"))
    assert run_cli(capsys, *args)[1] == run_cli(capsys, *args)[1]


def test_run_reads_stdin(capsys, fixtures, monkeypatch):
    monkeypatch.setattr(sys, "stdin", io.StringIO("c0\n1\n2\n3\n"))
    code, out, _ = run_cli(capsys, "run", str(fixtures / "delay2.json"))
    assert code == 0 and out == "y0\nempty\nempty\n1.0\n"


@pytest.mark.parametrize("text,msg", [
    ("c0\n1\nx\n", "line 3: malformed number"),
    ("c0\n1\n1,2\n", "line 3: expected 1 values, got 2"),
    ("a0\n1\n", "line 1: header must be c0"),
    ("", "line 1: missing header"),
])
def test_run_input_errors(capsys, fixtures, tmp_path, text, msg):
    f = tmp_path / "in.csv"
    f.write_text(text)
    code, _, err = run_cli(capsys, "run", str(fixtures / "delay2.json"), "--input", str(f))
    assert code == 2 and msg in err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["check", "--random", "--trials", "0"])
    assert info.value.code == 2


def test_help_documents_generator_bounds(capsys):
    with pytest.raises(SystemExit):
        main(["check", "--help"])
    out = capsys.readouterr().out
    for text in ("depth <= 6", "branches <= 3", "kernel_t <= 5", "channels <= 4", "stride <= 3"):
        assert text in " ".join(out.split())
