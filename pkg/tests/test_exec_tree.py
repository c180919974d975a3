from fractions import Fraction

import numpy as np
import pytest

from mqtm.compiler import Circuit, compile_circuit
from mqtm.exec_tree import (
    build_tree,
    depth_masses,
    dump_tree,
    exact_termination_bounds,
    max_children,
    sample_path,
    termination_probability_bounds,
)
from mqtm.machine import AncillaPolicy, HeadSpec, TapeSpec, Transition, make_machine, new_run, step_forced
from mqtm.protocols import teleport_machine, write_machine
from mqtm.quantum_core import StateVector, ValidationError, builtin_observable, fidelity_up_to_global_phase

WRITE0_DEPTH4 = """\
0 start init - 1 X
1 x +1 +1 0.5 Z
1 x -1 -1 0.5 Z
2 z +1 +1,+1 0.25 halted
2 z -1 +1,-1 0.25 X
2 z +1 -1,+1 0.25 halted
2 z -1 -1,-1 0.25 X
3 x +1 +1,-1,+1 0.125 Z
3 x -1 +1,-1,-1 0.125 Z
3 x +1 -1,-1,+1 0.125 Z
3 x -1 -1,-1,-1 0.125 Z
4 z +1 +1,-1,+1,+1 0.0625 halted
4 z -1 +1,-1,+1,-1 0.0625 truncated
4 z +1 +1,-1,-1,+1 0.0625 halted
4 z -1 +1,-1,-1,-1 0.0625 truncated
4 z +1 -1,-1,+1,+1 0.0625 halted
4 z -1 -1,-1,+1,-1 0.0625 truncated
4 z +1 -1,-1,-1,+1 0.0625 halted
4 z -1 -1,-1,-1,-1 0.0625 truncated
"""


def _looping_machine():
    """Measures Z forever on a fixed cell."""
    delta = {("s", v): Transition("s", "Z", (0,)) for v in ("init", 1.0, -1.0)}
    return make_machine(observables={"Z": builtin_observable("Z")}, delta=delta, tapes=[TapeSpec("tape")],
                        heads=[HeadSpec("h0", "tape", 0)], initial_state="s", name="loop")


def _empty_machine():
    return make_machine(observables={"Z": builtin_observable("Z")}, delta={}, tapes=[TapeSpec("tape")],
                        heads=[HeadSpec("h0", "tape", 0)], initial_state="s", name="empty")


def test_empty_machine_tree():
    tree = build_tree(_empty_machine())
    assert tree.halted and tree.is_leaf
    assert termination_probability_bounds(tree) == (1.0, 1.0)
    assert exact_termination_bounds(tree) == (1, 1)


def test_write0_golden_dump():
    tree = build_tree(write_machine(0), StateVector.basis("1"), max_depth=4)
    assert dump_tree(tree) == WRITE0_DEPTH4


@pytest.mark.parametrize("bit", [0, 1])
def test_write_halting_mass_per_level(bit):
    tree = build_tree(write_machine(bit), StateVector.basis("1"), max_depth=10)
    mass = {}
    for node in tree.walk():
        if node.halted:
            mass[node.depth] = mass.get(node.depth, 0.0) + node.path_probability
            assert node.depth % 2 == 0
    assert sorted(mass) == [2, 4, 6, 8, 10]
    for d, m in mass.items():
        assert m == pytest.approx(2.0 ** (-d // 2), abs=1e-12)
    lo, hi = termination_probability_bounds(tree)
    assert lo == pytest.approx(1 - 2.0**-5, abs=1e-12)
    assert hi == pytest.approx(1.0, abs=1e-12)
    assert exact_termination_bounds(tree) == (Fraction(31, 32), Fraction(1))


def test_infinite_loop_bounds():
    tree = build_tree(_looping_machine(), max_depth=8)
    lo, hi = termination_probability_bounds(tree)
    assert lo == 0.0 and hi == pytest.approx(1.0)
    # Z on |0> is deterministic: a single chain
    assert max_children(tree) == 1


def test_two_head_children_bound_and_conservation():
    cc = compile_circuit(Circuit(1, [("H", (0,))]))
    tree = build_tree(cc.machine, StateVector.basis("0"), max_depth=6)
    assert max_children(tree) <= 4
    for m in depth_masses(tree):
        assert m == pytest.approx(1.0, abs=1e-9)
    for node in tree.walk():
        if node.children:
            assert sum(p for p, _ in node.children.values()) == pytest.approx(1.0, abs=1e-9)


def test_teleport_tree_conservation(rng):
    phi = StateVector.haar_qubit(rng)
    tree = build_tree(teleport_machine(), phi, max_depth=9)
    leaves = [n for n in tree.walk() if n.is_leaf]
    assert all(n.halted for n in leaves)
    assert sum(n.path_probability for n in leaves) == pytest.approx(1.0, abs=1e-9)
    assert max_children(tree) <= 2 ** teleport_machine().k


def test_nodes_replay_with_forced_steps(rng):
    m = write_machine(1)
    phi = StateVector.haar_qubit(rng)
    tree = build_tree(m, phi, max_depth=5)
    for node in tree.walk():
        rt = new_run(m, phi)
        for o in node.outcome_path:
            step_forced(rt, o)
        assert rt.config == node.configuration
        assert fidelity_up_to_global_phase(rt.register, node.register) >= 1 - 1e-12


def test_min_probability_truncates():
    tree = build_tree(write_machine(0), StateVector.basis("1"), max_depth=50, min_path_probability=0.1)
    deepest = max(n.depth for n in tree.walk())
    assert deepest <= 8
    lo, hi = termination_probability_bounds(tree)
    assert lo < hi == pytest.approx(1.0)


def test_nondeterministic_policy_rejected():
    with pytest.raises(ValidationError):
        build_tree(write_machine(0), ancilla_policy=AncillaPolicy("haar", 1))


def test_bad_limits_rejected():
    with pytest.raises(ValidationError):
        build_tree(write_machine(0), max_depth=-1)
    with pytest.raises(ValidationError):
        build_tree(write_machine(0), min_path_probability=0.0)


def test_sample_path_deterministic():
    m = write_machine(0)
    a = sample_path(m, StateVector.basis("1"), np.random.default_rng(11))
    b = sample_path(m, StateVector.basis("1"), np.random.default_rng(11))
    assert [r.measurement.outcome for r in a] == [r.measurement.outcome for r in b]


def test_sample_first_branch_frequency():
    m = write_machine(0)
    tree = build_tree(m, StateVector.basis("1"), max_depth=1)
    p_plus = tree.children[1.0][0]
    rng = np.random.default_rng(2024)
    hits = sum(sample_path(m, StateVector.basis("1"), rng, max_steps=1)[0].measurement.outcome == 1.0
               for _ in range(10_000))
    assert abs(hits / 10_000 - p_plus) <= 0.02
