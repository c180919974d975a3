from pathlib import Path

import pytest

from mqtm import formats
from mqtm.cli import main

DATA = Path(__file__).resolve().parents[1] / "data"


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_run_write0(capsys):
    code, out, _ = _run(capsys, "run", DATA / "write0.machine", "--input", "1", "--seed", 7)
    assert code == 0
    assert out.startswith("seed: 7\nmachine: write-0\ninput: |1>\n")
    assert "status: halted" in out
    assert out.rstrip().endswith("output: |0>")


def test_run_is_reproducible(capsys):
    args = ("run", DATA / "write0.machine", "--input", "0.6,0.8", "--seed", 123)
    first = _run(capsys, *args)[1]
    assert _run(capsys, *args)[1] == first
    other = _run(capsys, "run", DATA / "write0.machine", "--input", "0.6,0.8", "--seed", 124)[1]
    assert other.splitlines()[0] != first.splitlines()[0]


def test_run_step_limit(capsys):
    code, out, _ = _run(capsys, "run", DATA / "write0.machine", "--input", "1", "--max-steps", 1)
    assert code == 2
    assert "status: step_limit after 1 steps" in out


def test_parse_error_exit(capsys, tmp_path):
    bad = tmp_path / "bad.machine"
    bad.write_text("name: x\nbogus: 1\n")
    code, _, err = _run(capsys, "run", bad)
    assert code == 1 and "line 2" in err
    code, _, err = _run(capsys, "run", tmp_path / "missing.machine")
    assert code == 1 and "cannot read" in err


def test_runtime_error_exit(capsys, tmp_path):
    # a head stepping off a one-cell tape
    m = tmp_path / "off.machine"
    m.write_text("tapes:\n  t 1\nheads:\n  h0 t 0\nobservables: Z\ninitial: s init\n"
                 "delta:\n  s init -> s Z 0\n  s +1 -> s Z +1\n")
    code, _, err = _run(capsys, "run", m)
    assert code == 3 and "runtime error" in err


def test_empty_machine(capsys):
    code, out, _ = _run(capsys, "run", DATA / "empty.machine", "--input", "0")
    assert code == 0 and "status: halted after 0 steps" in out
    code, out, _ = _run(capsys, "tree", DATA / "empty.machine", "--input", "0")
    assert code == 0 and "bounds: 1.00 1.00" in out


def test_tree_write0(capsys):
    code, out, _ = _run(capsys, "tree", DATA / "write0.machine", "--input", "1", "--depth", 10)
    assert code == 0
    lines = out.splitlines()
    assert lines[-3:] == ["bounds: 0.97 1.00", "exact: 31/2^5 1", "decimal: 0.9688 1.0000"]
    assert "max-children: 2 (limit 2)" in out


def test_tree_rejects_haar(capsys):
    code, _, _ = _run(capsys, "tree", DATA / "write0.machine", "--policy", "haar")
    assert code == 3


def test_distribution(capsys):
    code, out, _ = _run(capsys, "distribution", DATA / "transfer.machine", "--input", "1", "--depth", 5)
    assert code == 0
    # outputs are not frame corrected: the X byproduct flips half of the mass
    rows = [line.split() for line in out.splitlines() if line[0].isdigit()]
    assert sorted(r[1] for r in rows) == ["|0>", "|1>"]
    assert all(r[0] == "0.500000000000" for r in rows)
    assert "exact: 1 1" in out


def test_sample(capsys, tmp_path):
    target = tmp_path / "report.txt"
    code, out, _ = _run(capsys, "sample", DATA / "write0.machine", "--input", "1", "--trials", 20, "-o", target)
    assert code == 0 and out == ""
    text = target.read_text()
    assert "halted: 20/20" in text and "output |0>: 20" in text


def test_compile_empty_circuit(capsys):
    code, out, _ = _run(capsys, "compile", DATA / "empty.circuit")
    assert code == 0
    m = formats.parse_machine(out)
    assert m.delta == {}


def test_compile_then_verify(capsys, tmp_path):
    code, out, _ = _run(capsys, "compile", DATA / "h.circuit")
    assert code == 0
    m = formats.parse_machine(out)
    assert len(m.states) == 58
    code, out, _ = _run(capsys, "verify-circuit", DATA / "h.circuit", "--trials", 50)
    assert code == 0 and "halted: 50/50" in out and out.rstrip().endswith("PASS")


def test_verify_circuit_bell_t(capsys):
    code, out, _ = _run(capsys, "verify-circuit", DATA / "bell_t.circuit", "--trials", 10, "--seed", 5)
    assert code == 0 and out.rstrip().endswith("PASS")


def test_compile_tm_not_then_run(capsys, tmp_path):
    code, out, _ = _run(capsys, "compile-tm", DATA / "not.tm")
    assert code == 0
    machine = tmp_path / "not.machine"
    machine.write_text(out)
    code, out, _ = _run(capsys, "run", machine, "--input", "0", "--seed", 3)
    assert code == 0 and out.rstrip().endswith("output: |1>")


def test_verify_protocol_teleport(capsys):
    code, out, _ = _run(capsys, "verify-protocol", "teleport", "--trials", 2000, "--seed", 9)
    assert code == 0
    assert "identity-frame probability: 0.250000000000" in out


def test_verify_protocol_bell_prep(capsys):
    code, out, _ = _run(capsys, "verify-protocol", "bell-prep", "--trials", 10)
    assert code == 0 and "paths: 64/64" in out


@pytest.mark.parametrize("name", ["transfer", "write"])
def test_verify_protocol_others(capsys, name):
    code, out, _ = _run(capsys, "verify-protocol", name, "--trials", 500)
    assert code == 0 and out.rstrip().endswith("PASS")


def test_bad_flags(capsys):
    with pytest.raises(SystemExit):
        main(["run", str(DATA / "write0.machine"), "--max-steps", "0"])
    with pytest.raises(SystemExit):
        main(["verify-protocol", "nope"])
