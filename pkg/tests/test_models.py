import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mqtm.compiler import A_OBSERVABLES
from mqtm.machine import HeadSpec, TapeSpec, Transition, make_machine, new_run, run
from mqtm.models import (
    O_A,
    O_C,
    O_D,
    O_F,
    ClassicalTM,
    LayoutError,
    MeasurementProgram,
    ModelError,
    ProgramOp,
    compare_with_flat,
    compile_classical_tm,
    corrected_logical_state,
    flat_distribution,
    increment_tm,
    machine_tape_bits,
    make_model,
    not_tm,
    physical_name,
    random_program,
    run_classical_tm,
    simulate_program_on,
    validate_model,
    write_one_tm,
)
from mqtm.quantum_core import StateVector, builtin_observable, fidelity_up_to_global_phase, single_qubit_purity

from . import oracle


def product_state(rng, n):
    return StateVector(oracle.kron_all([oracle.haar(rng) for _ in range(n)]))


# families ---------------------------------------------------------------------------------

def test_observable_sets():
    assert set(O_A) == {"XX", "ZZ", "XZ", "ZX", "XI", "ZI", "XX+YX", "XX+XY"}
    assert tuple(O_A) == tuple(A_OBSERVABLES)
    assert set(O_C) == {"X", "Z"}
    assert "ZX" in O_F and "XZ" in O_F
    for name in O_D:
        assert builtin_observable(name).arity == 2


def test_make_model_c():
    c = make_model("C")
    assert set(c.observable_table()) == {"X", "Z"}
    assert all(c.move_ok((d,)) for d in (-1, 0, 1)) and not c.move_ok((2,))


def test_make_model_f_first_head_fixed():
    f = make_model("F")
    assert f.move_ok((0, 5)) and not f.move_ok((1, 0))
    assert f.tapes[0].length == 1 and f.tapes[1].length is None


def test_make_model_e_and_d():
    e = make_model("E")
    assert e.tapes[0].length == 2 and e.move_ok((-1, 7)) and not e.move_ok((2, 0))
    d = make_model("D")
    assert d.k == 2 and {t.length for t in d.tapes} == {None}


def test_unknown_family():
    with pytest.raises(ModelError):
        make_model("G")


def test_model_b_single_qubit_only():
    b = make_model("B", observables=["X", "Y"])
    assert b.k == 1
    with pytest.raises(ModelError):
        make_model("B", observables=["XX"])


def test_y_rejected_by_c():
    m = make_machine(observables={"Y": builtin_observable("Y")}, delta={("s", "init"): Transition("t", "Y", (0,))},
                     tapes=[TapeSpec("tape")], heads=[HeadSpec("h0", "tape")], initial_state="s")
    problems = validate_model(m, make_model("C"))
    assert any("not in O_C" in p for p in problems)
    assert validate_model(m, make_model("B")) == []


def test_bad_move_rejected_by_f():
    obs = {"ZI": builtin_observable("ZI")}
    m = make_machine(observables=obs, delta={("s", "init"): Transition("t", "ZI", (1, 0))},
                     tapes=[TapeSpec("finite", 1), TapeSpec("tape")],
                     heads=[HeadSpec("h0", "finite"), HeadSpec("h1", "tape")], initial_state="s")
    assert any("outside D_F" in p for p in validate_model(m, make_model("F")))


# classical TMs ----------------------------------------------------------------------------------

def test_tm_validation():
    with pytest.raises(ModelError):
        ClassicalTM(("a",), "b", (), {})
    with pytest.raises(ModelError):
        ClassicalTM(("a", "h"), "a", ("h",), {("a", 0): ("h", 2, 0)})
    with pytest.raises(ModelError):
        ClassicalTM(("a", "h"), "a", ("h",), {("a", 0): ("h", 1, 2)})


@pytest.mark.parametrize("bits", ["000", "001", "011", "101", "111"])
def test_increment_oracle(bits):
    res = run_classical_tm(increment_tm(), bits)
    assert res.halted and res.read(3) == format((int(bits, 2) + 1) % 8, "03b")


def _run_compiled(tm, bits, seed, width):
    rt = new_run(compile_classical_tm(tm), StateVector.basis(bits))
    res = run(rt, np.random.default_rng(seed), 10_000)
    return res, rt, machine_tape_bits(rt, width)


@pytest.mark.parametrize("tm, bits, width", [
    (not_tm(), "0", 1), (not_tm(), "1", 1), (write_one_tm(), "0", 1),
    (increment_tm(), "011", 3), (increment_tm(), "111", 3), (increment_tm(), "010", 3),
])
def test_compiled_tm_matches_oracle(tm, bits, width):
    # [DERIVED] classical simulation is the oracle
    expected = run_classical_tm(tm, bits).read(width)
    for seed in range(25):
        res, rt, got = _run_compiled(tm, bits, seed, width)
        assert res.halted and got == expected
        assert all(single_qubit_purity(rt.register, q) == pytest.approx(1, abs=1e-10)
                   for q in range(rt.register.num_qubits))


def test_compiled_tm_is_in_family_c():
    for tm in (not_tm(), write_one_tm(), increment_tm()):
        m = compile_classical_tm(tm)
        assert validate_model(m, make_model("C")) == []
        # states: start, one read state per TM state, two per rule
        assert len(m.states) == 1 + len(tm.states) + 2 * len(tm.delta)


# programs -------------------------------------------------------------------------------------

def test_program_validation():
    with pytest.raises(ModelError):
        MeasurementProgram.straight([("YY", 0, 1)])
    with pytest.raises(ModelError):
        MeasurementProgram.straight([("XX", 1, 1)])
    with pytest.raises(ModelError):
        MeasurementProgram((ProgramOp("XX", 0, 1, jump_on_minus="nowhere"),))


def test_jumping_program():
    # repeat Z on a |+> qubit until it reads +1
    prog = MeasurementProgram((ProgramOp("XI", 0, 1, label="top"), ProgramOp("ZI", 0, 1, jump_on_minus="top")),
                              max_executed=12)
    dist = flat_distribution(prog, StateVector.basis("00"))
    assert sum(p for p, _ in dist.values()) == pytest.approx(1)
    finished = sum(p for outs, (p, _) in dist.items() if outs[-1] == 1.0)
    assert finished == pytest.approx(1 - 2.0 ** -6)


def test_flat_distribution_matches_dense_oracle():
    rng = np.random.default_rng(3)
    prog = random_program(rng, 4, 3)
    state = product_state(rng, 3)
    dist = flat_distribution(prog, state)
    for outs, (p, st) in dist.items():
        seq = [(builtin_observable(op.observable).matrix, [op.i, op.j]) for op in prog.ops]
        q, ref = oracle.run_projectors(state.amplitudes, seq, outs, 3)
        assert p == pytest.approx(q, abs=1e-12)
        assert oracle.overlap(st.amplitudes, ref) == pytest.approx(1, abs=1e-9)


# reductions --------------------------------------------------------------------------------------

def test_physical_names():
    d = make_model("D")
    assert physical_name(d, "XZ", ["upper", "lower"]) == "XZ"
    assert physical_name(d, "XZ", ["lower", "upper"]) == "ZX"
    assert physical_name(d, "XX+YX", ["lower", "upper"]) == "XX+XY"
    assert physical_name(d, "Z", ["lower"]) == "IZ"
    with pytest.raises(LayoutError):
        physical_name(d, "ZZ", ["upper", "upper"])


def test_d_different_parity_needs_no_teleport(rng):
    prog = MeasurementProgram.straight([("XX", 1, 2)])
    rs = simulate_program_on("D", prog, product_state(rng, 3), rng)
    assert len(rs.log) == 1


def test_d_same_parity_teleports_there_and_back(rng):
    prog = MeasurementProgram.straight([("ZZ", 2, 4)])
    rs = simulate_program_on("D", prog, product_state(rng, 5), rng)
    assert len(rs.log) == 8 + 1 + 8
    assert rs.tapes == ("lower", "upper", "lower", "upper", "lower")


@pytest.mark.parametrize("family", ["D", "E", "F"])
@pytest.mark.parametrize("name", O_A)
def test_single_op_matches_flat(family, name):
    rng = np.random.default_rng(hash(name) % 2**32)
    prog = MeasurementProgram.straight([(name, 0, 1)])
    rep = compare_with_flat(family, prog, product_state(rng, 2))
    assert rep.tv_distance <= 1e-9 and rep.min_fidelity >= 1 - 1e-9


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from("DEF"))
def test_random_programs_match_flat(seed, family):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    prog = random_program(rng, int(rng.integers(1, 5)), n)
    rep = compare_with_flat(family, prog, product_state(rng, n))
    assert rep.tv_distance <= 1e-9 and rep.min_fidelity >= 1 - 1e-9


@pytest.mark.parametrize("family", ["D", "E", "F"])
def test_sampled_reduction_corrected_state_matches_flat(family):
    # frames stay on the qubits; undoing them must land on the flat post-state for that outcome path
    rng = np.random.default_rng(17)
    for _ in range(10):
        prog = random_program(rng, 4, 3)
        state = product_state(rng, 3)
        flat = flat_distribution(prog, state)
        rs = simulate_program_on(family, prog, state, rng)
        p, ref = flat[rs.outcomes]
        assert p > 0
        assert fidelity_up_to_global_phase(corrected_logical_state(rs), ref) >= 1 - 1e-9


def test_reduction_rejects_other_families():
    with pytest.raises(ModelError):
        simulate_program_on("A", MeasurementProgram.straight([("XX", 0, 1)]), StateVector.basis("00"),
                            np.random.default_rng(0))
