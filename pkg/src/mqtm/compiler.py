"""Compile circuits over {H, T, CNOT, X, Y, Z} into two-head measurement machines.

Three levels:

* a *gate step* is a fixed measurement pattern over the gate's operands and a
  few ancilla cells producing ``sigma U |phi>`` where ``sigma`` is a Pauli
  class that is an XOR-linear function of the outcome bits;
* a *full simulation* wraps a gate step in a repeat-until-identity loop: while
  the accumulated class is not I, the operand is pushed through an identity
  pattern (two chained state transfers) whose own byproduct multiplies the class;
* a *compiled circuit* chains full simulations gate by gate on one infinite
  tape, adding head moves between consecutive measurements.

Slot convention for a gate step of arity ``r``: operand ``i`` owns the three
slots ``3i, 3i+1, 3i+2``. Slot ``3i`` is where the operand currently lives, the
other two are its ancilla cells. Single-qubit observables (``XI``, ``ZI``) use
their second slot only to park the other head.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .kernels import apply_local
from .machine import AncillaPolicy, HeadSpec, MachineSpec, TapeSpec, Transition, make_machine, new_run, output_window, run, ZERO
from .quantum_core import (
    PauliOp,
    StateVector,
    apply_pauli,
    builtin_observable,
    fidelity_up_to_global_phase,
    outcome_bit,
)

A_OBSERVABLES = ("XX", "ZZ", "XZ", "ZX", "XI", "ZI", "XX+YX", "XX+XY")

_SQ2 = np.sqrt(2.0)
GATE_MATRICES = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / _SQ2,
    "T": np.diag([1, np.exp(1j * np.pi / 4)]).astype(complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
    "CNOT": np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex),
}
GATE_ARITY = {"H": 1, "T": 1, "X": 1, "Y": 1, "Z": 1, "CNOT": 2}


class CompileError(ValueError):
    pass


# circuits -------------------------------------------------------------------------

@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple

    def __str__(self) -> str:
        return " ".join([self.name, *map(str, self.qubits)])


@dataclass(frozen=True)
class Circuit:
    qubit_count: int
    gates: tuple = ()

    def __post_init__(self):
        if self.qubit_count < 1:
            raise CompileError("a circuit needs at least one qubit")
        gates = tuple(g if isinstance(g, Gate) else Gate(g[0], tuple(g[1])) for g in self.gates)
        for g in gates:
            if g.name not in GATE_ARITY:
                raise CompileError(f"unsupported gate {g.name!r}")
            if len(g.qubits) != GATE_ARITY[g.name]:
                raise CompileError(f"{g.name} takes {GATE_ARITY[g.name]} operand(s), got {len(g.qubits)}")
            if len(set(g.qubits)) != len(g.qubits):
                raise CompileError(f"repeated operand in {g}")
            if any(not 0 <= q < self.qubit_count for q in g.qubits):
                raise CompileError(f"operand out of range in {g}")
        object.__setattr__(self, "gates", gates)

    def __len__(self) -> int:
        return len(self.gates)

    def unitary(self) -> np.ndarray:
        """Dense matrix of the whole circuit (qubit 0 most significant)."""
        n = self.qubit_count
        u = np.eye(1 << n, dtype=complex)
        for g in self.gates:
            op = GATE_MATRICES[g.name]
            u = np.stack([apply_local(np.ascontiguousarray(u[:, c]), n, op, g.qubits) for c in range(1 << n)],
                         axis=1)
        return u


# gate steps -----------------------------------------------------------------------

@dataclass(frozen=True)
class GateStep:
    """A fixed measurement pattern realizing ``sigma U`` up to a Pauli class ``sigma``.

    Attributes
    ----------
    measurements : tuple of (observable name, (slot, slot))
    flips : tuple of PauliOp
        Class factor contributed by each measurement when its outcome is -1.
    base : PauliOp
        Class when every outcome is +1.
    outputs : tuple of int
        Slot holding operand ``i`` after the pattern.
    input_frame : PauliOp
        The pattern expects ``input_frame |phi>`` on its operands (I except for T).
    """

    gate: str
    arity: int
    measurements: tuple
    flips: tuple
    base: PauliOp
    outputs: tuple
    input_frame: PauliOp

    @property
    def slot_count(self) -> int:
        return 3 * self.arity

    @property
    def tuple_count(self) -> int:
        return 1 << len(self.measurements)

    def classify(self, outcomes) -> PauliOp:
        """Pauli class (labels only) for a full outcome tuple."""
        if len(outcomes) != len(self.measurements):
            raise ValueError("outcome tuple has the wrong length")
        cls = self.base
        for o, f in zip(outcomes, self.flips):
            if outcome_bit(o):
                cls = cls * f
        return cls.up_to_phase()

    def prefix_classes(self) -> list[set]:
        """Reachable class-before-measurement sets, one per measurement index."""
        sets = [{self.base.labels}]
        for f in self.flips[:-1]:
            prev = sets[-1]
            sets.append(prev | {(PauliOp(c) * f).labels for c in prev})
        return sets

    def final_classes(self) -> set:
        return {self.classify(o).labels for o in itertools.product((1.0, -1.0), repeat=len(self.measurements))}

    @property
    def state_count(self) -> int:
        """Nodes of the step's own automaton: one per (measurement, class so far), plus its final classes."""
        return sum(len(s) for s in self.prefix_classes()) + len(self.final_classes())


def _p(labels: str) -> PauliOp:
    return PauliOp(labels)


def _embed(single: str, i: int, arity: int) -> PauliOp:
    labels = ["I"] * arity
    labels[i] = single
    return PauliOp("".join(labels))


# identity pattern: transfer q -> b, then b -> q (the Z on q serves both transfers)
_ID_MEAS = (("ZI", (1, 2)), ("XX", (0, 1)), ("ZI", (0, 2)), ("XX", (1, 0)), ("ZI", (1, 2)))
_ID_FLIPS = ("X", "Z", "I", "Z", "X")


def step_of_simulation(gate: str) -> GateStep:
    """Measurement pattern for one step of simulation of ``gate``.

    ``H`` prepares a Bell pair on its ancillas (Z⊗Z, X⊗X) and then measures
    X⊗Z, Z⊗X between input and ancilla; the output lands on the second ancilla.
    ``T`` uses the (X⊗X+Y⊗X)/√2 observable, which realizes T† with a Pauli
    byproduct; since X T† X is T up to phase, it expects X|phi> as input and has
    base class X. Pauli gates (and ``I``, used for corrections) are the identity
    pattern with base class equal to the gate. ``MOVE`` is a plain state
    transfer from slot 0 to slot 1.
    """
    if gate == "H":
        return GateStep("H", 1, (("ZZ", (1, 2)), ("XX", (1, 2)), ("XZ", (0, 1)), ("ZX", (0, 1))),
                        tuple(map(_p, "XZXZ")), _p("I"), (2,), _p("I"))
    if gate == "T":
        meas = (("ZI", (1, 2)), ("XX+YX", (0, 1)), ("ZI", (0, 2)), ("XX", (1, 0)), ("ZI", (1, 2)))
        return GateStep("T", 1, meas, tuple(map(_p, _ID_FLIPS)), _p("X"), (0,), _p("X"))
    if gate in ("I", "X", "Y", "Z"):
        return GateStep(gate, 1, _ID_MEAS, tuple(map(_p, _ID_FLIPS)), _p(gate), (0,), _p("I"))
    if gate == "CNOT":
        # control owns slots 0,1,2 and target 3,4,5; one control ancilla is used
        meas = (("XI", (1, 0)), ("ZZ", (0, 1)), ("XX", (1, 3)), ("ZI", (1, 0)))
        return GateStep("CNOT", 2, meas, tuple(map(_p, ("ZI", "IX", "ZI", "IX"))), _p("II"), (0, 3), _p("II"))
    if gate == "MOVE":
        meas = (("ZI", (1, 2)), ("XX", (1, 0)), ("ZI", (0, 2)))
        return GateStep("MOVE", 1, meas, tuple(map(_p, "XZX")), _p("I"), (1,), _p("I"))
    raise CompileError(f"unsupported gate {gate!r}")


def gate_unitary(gate: str) -> np.ndarray:
    if gate in ("I", "MOVE"):
        return np.eye(2, dtype=complex)
    return GATE_MATRICES[gate]


def verify_gate_step(step: GateStep, rng: np.random.Generator, trials: int = 3) -> float:
    """Smallest fidelity of the class-corrected output with ``U|phi>`` over all outcome tuples.

    Operands start in random pure states, ancillas in independent random pure
    states; every outcome tuple with nonzero probability is enumerated.
    """
    from .protocols import enumerate_sequence

    worst = 1.0
    u = gate_unitary(step.gate)
    r = step.arity
    for _ in range(trials):
        cells = [StateVector.haar_qubit(rng) for _ in range(step.slot_count)]
        phi = StateVector.product(cells[3 * i] for i in range(r))
        fed = StateVector.product(cells)
        fed = apply_pauli(fed, step.input_frame, [3 * i for i in range(r)])
        target = StateVector(u @ phi.amplitudes, normalize=True)
        for path in enumerate_sequence(fed, step.measurements):
            cls = step.classify(path.outcomes)
            out, _ = path.state.split(list(step.outputs))
            corrected = apply_pauli(out, cls, range(r))
            worst = min(worst, fidelity_up_to_global_phase(corrected, target))
    return worst


# full simulation automata -----------------------------------------------------------

EXIT = "exit"


@dataclass(frozen=True)
class AutomatonNode:
    name: str
    observable: str
    slots: tuple


@dataclass
class SimulationAutomaton:
    """Finite control of a full simulation. ``transitions[(node, outcome)]`` is a node name or EXIT."""

    gate: str
    nodes: dict
    transitions: dict
    entry: str
    exit: str = EXIT
    steps: tuple = field(default_factory=tuple)

    @property
    def state_count(self) -> int:
        return len(self.nodes)

    def run_forced(self, outcomes) -> list[str]:
        """Node names visited when the given outcomes are observed (stops at exit)."""
        here, seen = self.entry, []
        for o in outcomes:
            if here == self.exit:
                break
            seen.append(here)
            here = self.transitions[(here, float(o))]
        if here == self.exit:
            seen.append(self.exit)
        return seen


def _loop_automaton(step: GateStep, prefix: str = "") -> SimulationAutomaton:
    """Run ``step`` once, then correct operand by operand until the class is I."""
    r = step.arity
    ident = step_of_simulation("I")

    def correction_slots(i):
        out = step.outputs[i]
        others = [s for s in (3 * i, 3 * i + 1, 3 * i + 2) if s != out]
        return (out, others[0], others[1])

    def key_info(key):
        """(observable, slots, flip, successor-key-or-None) for a node key."""
        if key[0] == "U":
            _, j, _ = key
            name, slots = step.measurements[j]
            return name, slots, step.flips[j], len(step.measurements)
        _, i, j, _ = key
        name, local = ident.measurements[j]
        cs = correction_slots(i)
        return name, tuple(cs[s] for s in local), _embed(_ID_FLIPS[j], i, r), len(ident.measurements)

    def route(cls: PauliOp):
        if cls.is_identity_up_to_phase():
            return EXIT
        i = next(idx for idx, ch in enumerate(cls.labels) if ch != "I")
        return ("C", i, 0, cls.labels)

    def label(key):
        if key == EXIT:
            return EXIT
        if key[0] == "U":
            return f"{prefix}U{key[1]}:{key[2]}"
        return f"{prefix}C{key[1]}.{key[2]}:{key[3]}"

    entry = ("U", 0, step.base.labels)
    nodes, trans = {}, {}
    queue, seen = deque([entry]), {entry}
    while queue:
        key = queue.popleft()
        obs, slots, flip, length = key_info(key)
        nodes[label(key)] = AutomatonNode(label(key), obs, slots)
        cls_before = PauliOp(key[-1])
        j = key[-2] if key[0] == "C" else key[1]
        for outcome in (1.0, -1.0):
            cls = cls_before * flip if outcome_bit(outcome) else cls_before
            cls = cls.up_to_phase()
            if j + 1 < length:
                nxt = (*key[:-2], j + 1, cls.labels) if key[0] == "C" else ("U", j + 1, cls.labels)
            else:
                nxt = route(cls)
            trans[(label(key), outcome)] = label(nxt)
            if nxt != EXIT and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return SimulationAutomaton(step.gate, nodes, trans, label(entry), EXIT, (step, ident))


def _chain(first: SimulationAutomaton, second: SimulationAutomaton, gate: str) -> SimulationAutomaton:
    trans = {k: (second.entry if v == EXIT else v) for k, v in first.transitions.items()}
    trans.update(second.transitions)
    return SimulationAutomaton(gate, {**first.nodes, **second.nodes}, trans, first.entry, EXIT,
                               first.steps + second.steps)


def full_simulation(gate: str) -> SimulationAutomaton:
    """Repeat-until-identity automaton for ``gate`` over step slots.

    T first runs a full simulation of X (so the operand holds exactly X|phi>)
    and then the T pattern with its correction loop.
    """
    if gate == "T":
        return _chain(_loop_automaton(step_of_simulation("X"), "x."), _loop_automaton(step_of_simulation("T"), "t."),
                      "T")
    return _loop_automaton(step_of_simulation(gate))


def max_step_states(gate: str) -> int:
    """Largest ``state_count`` among the gate steps a full simulation of ``gate`` uses."""
    names = {"T": ("X", "T")}.get(gate, (gate,))
    counts = []
    for g in names:
        st = step_of_simulation(g)
        counts.append(st.state_count)
        # a correction is a Pauli step on one operand
        counts.extend(step_of_simulation(p).state_count for p in "XYZ")
    return max(counts)


def identity_class_probability(gate: str) -> float:
    """Exact probability that one step of ``gate`` ends in class I, operands |0..0>, ancillas |0>.

    For T the operand is fed X|0>, as it would be after the X full simulation.
    """
    from .protocols import enumerate_sequence

    st = step_of_simulation(gate)
    fed = apply_pauli(StateVector.zeros(st.slot_count), st.input_frame, [3 * i for i in range(st.arity)])
    return sum(p.probability for p in enumerate_sequence(fed, st.measurements)
               if st.classify(p.outcomes).is_identity_up_to_phase())


# whole circuits -------------------------------------------------------------------

@dataclass(frozen=True)
class CompiledCircuit:
    machine: MachineSpec
    circuit: Circuit
    segments: tuple  # (label, automaton state count) per full simulation, in order


def _pool(q: int, n: int) -> tuple:
    return (q, n + 2 * q, n + 2 * q + 1)


def compile_circuit(c: Circuit) -> CompiledCircuit:
    """Lay out and chain the full simulations of ``c`` into one two-head machine.

    Tape layout: logical qubit ``q`` starts at cell ``q``; cells ``n+2q`` and
    ``n+2q+1`` are its ancillas. Steps that move an operand (H) are tracked
    statically; at the end every displaced qubit is moved home by a state
    transfer with the same correction loop. A final Z on an ancilla brings the
    output head back to cell 0. Head ``h0`` is the first tensor factor of every
    observable; ``h1`` is the input and output head.
    """
    n = c.qubit_count
    where = list(range(n))
    segments = []  # (label, automaton, slot -> cell)

    def slot_cells(qubits):
        cells = []
        for q in qubits:
            loc = where[q]
            cells.extend([loc] + [x for x in _pool(q, n) if x != loc])
        return cells

    for gi, g in enumerate(c.gates):
        fs = full_simulation(g.name)
        cells = slot_cells(g.qubits)
        segments.append((f"g{gi}", fs, cells))
        st = step_of_simulation(g.name)
        for i, q in enumerate(g.qubits):
            where[q] = cells[st.outputs[i]]
    for q in range(n):
        if where[q] != q:
            loc = where[q]
            rest = [x for x in _pool(q, n) if x not in (loc, q)]
            segments.append((f"home{q}", full_simulation("MOVE"), [loc, q, rest[0]]))
            where[q] = q

    delta = {}
    positions = {"start": (n, 0)}
    if segments:
        entries = [f"{lab}/{fs.entry}" for lab, fs, _ in segments] + ["finish"]
        positions["finish"] = (n, 0)
        for si, (lab, fs, cells) in enumerate(segments):
            for node in fs.nodes.values():
                positions[f"{lab}/{node.name}"] = tuple(cells[s] for s in node.slots)
        first = entries[0]
        node0 = segments[0][1].nodes[segments[0][1].entry]
        delta[("start", "init")] = Transition(first, node0.observable, _delta_move(positions["start"], positions[first]))
        for si, (lab, fs, cells) in enumerate(segments):
            for (src, outcome), dst in fs.transitions.items():
                s_name = f"{lab}/{src}"
                if dst == EXIT:
                    d_name = entries[si + 1]
                    obs = "ZI" if d_name == "finish" else segments[si + 1][1].nodes[segments[si + 1][1].entry].observable
                else:
                    d_name = f"{lab}/{dst}"
                    obs = fs.nodes[dst].observable
                delta[(s_name, outcome)] = Transition(d_name, obs, _delta_move(positions[s_name], positions[d_name]))
    machine = make_machine(
        observables={name: builtin_observable(name) for name in A_OBSERVABLES},
        delta=delta,
        tapes=[TapeSpec("tape")],
        heads=[HeadSpec("h0", "tape", n), HeadSpec("h1", "tape", 0)],
        initial_state="start",
        input_head="h1",
        output_head="h1",
        name=f"compiled-{len(c.gates)}-gate-circuit",
    )
    return CompiledCircuit(machine, c, tuple((lab, fs.state_count) for lab, fs, _ in segments))


def _delta_move(a: tuple, b: tuple) -> tuple:
    return tuple(y - x for x, y in zip(a, b))


@dataclass
class VerificationReport:
    trials: int
    halted: int
    min_fidelity: float
    failures: list
    fidelities: list

    @property
    def halt_rate(self) -> float:
        return self.halted / self.trials if self.trials else 1.0

    @property
    def passed(self) -> bool:
        return not self.failures


def verify_compiled(c: Circuit, trials: int, max_steps: int, rng: np.random.Generator,
                    compiled: CompiledCircuit | None = None, tol: float = 1e-9,
                    policy: AncillaPolicy = ZERO) -> VerificationReport:
    """Run the compiled machine on random product inputs and compare with the dense circuit.

    Trials that hit ``max_steps`` count as not halted and are not compared.
    """
    cc = compiled or compile_circuit(c)
    u = c.unitary()
    n = c.qubit_count
    halted, fids, failures = 0, [], []
    for t in range(trials):
        phi = StateVector.product(StateVector.haar_qubit(rng) for _ in range(n))
        rt = new_run(cc.machine, phi, 0, policy)
        res = run(rt, rng, max_steps)
        if not res.halted:
            continue
        halted += 1
        out = output_window(rt, n)
        fid = fidelity_up_to_global_phase(out, StateVector(u @ phi.amplitudes, normalize=True))
        fids.append(fid)
        if fid < 1.0 - tol:
            failures.append((t, fid))
    return VerificationReport(trials, halted, min(fids) if fids else 1.0, failures, fids)
