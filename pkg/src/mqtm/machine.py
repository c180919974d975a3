"""Measurement-based quantum Turing machines: definition and execution.

A machine is a classical control automaton ``delta: (state, last outcome) ->
(state, observable, head move)`` driving measurement heads over tapes of
qubits. It halts when ``delta`` has no entry for the current configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .quantum_core import (
    EntangledError,
    MeasurementRecord,
    Observable,
    StateVector,
    ValidationError,
    measure,
    project,
)

INFINITE = None


class MachineError(RuntimeError):
    """Runtime failure of a machine (bounds, head coincidence, capacity)."""


class BoundsError(MachineError):
    pass


class CoincidenceError(MachineError):
    pass


class CapacityError(MachineError):
    pass


class UnmaterializedError(MachineError):
    pass


@dataclass(frozen=True)
class TapeSpec:
    tape_id: str
    length: int | None = INFINITE  # None means infinite, indexed by all integers

    @property
    def infinite(self) -> bool:
        return self.length is None

    def contains(self, cell: int) -> bool:
        return self.length is None or 0 <= cell < self.length


@dataclass(frozen=True)
class HeadSpec:
    head_id: str
    tape_id: str
    initial_cell: int = 0


@dataclass(frozen=True)
class Transition:
    next_state: str
    observable: str
    move: tuple[int, ...]


@dataclass(frozen=True)
class MachineSpec:
    states: frozenset
    observables: Mapping[str, Observable]
    delta: Mapping[tuple, Transition]
    tapes: tuple[TapeSpec, ...]
    heads: tuple[HeadSpec, ...]
    initial_state: str
    initial_outcome: object = "init"
    input_head: str | None = None
    output_head: str | None = None
    moves: frozenset | None = None  # None: every integer k-tuple is allowed
    name: str = "machine"

    @property
    def k(self) -> int:
        return len(self.heads)

    @property
    def outcomes(self) -> frozenset:
        vals = {ev for obs in self.observables.values() for ev in obs.eigenvalues()}
        vals.add(self.initial_outcome)
        return frozenset(vals)

    def tape(self, tape_id: str) -> TapeSpec:
        for t in self.tapes:
            if t.tape_id == tape_id:
                return t
        raise KeyError(tape_id)

    def head(self, head_id: str) -> HeadSpec:
        for h in self.heads:
            if h.head_id == head_id:
                return h
        raise KeyError(head_id)

    def head_index(self, head_id: str) -> int:
        return [h.head_id for h in self.heads].index(head_id)

    @property
    def input_head_id(self) -> str:
        return self.input_head or self.heads[0].head_id

    @property
    def output_head_id(self) -> str:
        return self.output_head or self.heads[0].head_id


def validate(machine: MachineSpec) -> list[str]:
    """Every well-formedness violation of ``machine``; empty when valid."""
    problems = []
    k = machine.k
    if k == 0:
        problems.append("machine has no heads")
    tape_ids = [t.tape_id for t in machine.tapes]
    if len(set(tape_ids)) != len(tape_ids):
        problems.append("duplicate tape id")
    for t in machine.tapes:
        if t.length is not None and t.length < 1:
            problems.append(f"tape {t.tape_id} has length {t.length} < 1")
    head_ids = [h.head_id for h in machine.heads]
    if len(set(head_ids)) != len(head_ids):
        problems.append("duplicate head id")
    for h in machine.heads:
        if h.tape_id not in tape_ids:
            problems.append(f"head {h.head_id} references unknown tape {h.tape_id}")
        elif not machine.tape(h.tape_id).contains(h.initial_cell):
            problems.append(f"head {h.head_id} starts outside tape {h.tape_id}")
    for label in ("input_head", "output_head"):
        hid = getattr(machine, label)
        if hid is not None and hid not in head_ids:
            problems.append(f"{label} {hid} is not a declared head")
    for name, obs in machine.observables.items():
        if obs.arity != k:
            problems.append(f"arity violation: observable {name} has arity {obs.arity}, machine has {k} heads")
    if machine.initial_state not in machine.states:
        problems.append(f"initial state {machine.initial_state} is undeclared")
    outcomes = machine.outcomes
    for (s, v), tr in machine.delta.items():
        where = f"delta({s}, {format_outcome(v)})"
        if s not in machine.states:
            problems.append(f"{where}: domain state {s} is undeclared")
        if v not in outcomes:
            problems.append(f"{where}: outcome {v!r} is not in the outcome alphabet")
        if tr.next_state not in machine.states:
            problems.append(f"range violation: {where} targets undeclared state {tr.next_state}")
        if tr.observable not in machine.observables:
            problems.append(f"range violation: {where} uses undeclared observable {tr.observable}")
        if len(tr.move) != k:
            problems.append(f"range violation: {where} move {tr.move} is not a {k}-tuple")
        elif machine.moves is not None and tuple(tr.move) not in machine.moves:
            problems.append(f"range violation: {where} move {tr.move} is not in the move set")
    return problems


def format_outcome(v) -> str:
    if isinstance(v, str):
        return v
    if float(v) == int(v):
        return f"{int(v):+d}"
    return repr(float(v))


@dataclass(frozen=True)
class Configuration:
    state: str
    last_outcome: object


@dataclass(frozen=True)
class StepRecord:
    pre_config: Configuration
    move: tuple[int, ...]
    cells: tuple[tuple[str, int], ...]
    measurement: MeasurementRecord
    post_config: Configuration


@dataclass(frozen=True)
class AncillaPolicy:
    """How qubits that are not part of the input start out.

    ``zero`` puts them in |0>; ``haar`` draws independent Haar-random
    single-qubit pure states from a generator seeded with ``seed``.
    """

    kind: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "haar"):
            raise ValidationError(f"unknown ancilla policy {self.kind!r}")

    @property
    def deterministic(self) -> bool:
        return self.kind == "zero"


ZERO = AncillaPolicy("zero")


@dataclass
class Runtime:
    machine: MachineSpec
    config: Configuration
    head_positions: dict
    register: StateVector
    cell_map: dict
    policy: AncillaPolicy = ZERO
    step_count: int = 0
    trace: list = field(default_factory=list)
    halted: bool = False
    _ancilla_rng: np.random.Generator | None = None

    def copy(self) -> "Runtime":
        return Runtime(self.machine, self.config, dict(self.head_positions), self.register,
                       dict(self.cell_map), self.policy, self.step_count, list(self.trace),
                       self.halted, self._ancilla_rng)

    def materialize(self, tape_id: str, cell: int) -> int:
        """Register index of a tape cell, creating the qubit on first touch."""
        key = (tape_id, cell)
        idx = self.cell_map.get(key)
        if idx is not None:
            return idx
        tape = self.machine.tape(tape_id)
        if not tape.contains(cell):
            raise BoundsError(f"cell {cell} is outside tape {tape_id}")
        if self.policy.kind == "zero":
            fresh = StateVector.basis("0")
        else:
            if self._ancilla_rng is None:
                self._ancilla_rng = np.random.default_rng(self.policy.seed)
            fresh = StateVector.haar_qubit(self._ancilla_rng)
        self.register = self.register.tensor(fresh)
        idx = self.register.num_qubits - 1
        self.cell_map[key] = idx
        return idx

    def head_cell(self, head_id: str) -> tuple[str, int]:
        return self.machine.head(head_id).tape_id, self.head_positions[head_id]

    def qubit_at(self, tape_id: str, cell: int) -> int:
        try:
            return self.cell_map[(tape_id, cell)]
        except KeyError:
            raise UnmaterializedError(f"cell ({tape_id}, {cell}) was never materialized") from None


class _Halted:
    def __repr__(self) -> str:
        return "HALTED"


HALTED = _Halted()


def new_run(machine: MachineSpec, input_state: StateVector | None = None, input_offset: int = 0,
            ancilla_policy: AncillaPolicy = ZERO) -> Runtime:
    """Place ``input_state`` on consecutive cells of the input head's tape."""
    in_head = machine.head(machine.input_head_id)
    tape = machine.tape(in_head.tape_id)
    if input_state is None:
        input_state = StateVector([1.0])
    n = input_state.num_qubits
    if tape.length is not None and (input_offset < 0 or input_offset + n > tape.length):
        raise CapacityError(f"{n}-qubit input does not fit tape {tape.tape_id} at offset {input_offset}")
    cell_map = {(tape.tape_id, input_offset + i): i for i in range(n)}
    positions = {h.head_id: h.initial_cell for h in machine.heads}
    positions[in_head.head_id] = input_offset
    return Runtime(machine, Configuration(machine.initial_state, machine.initial_outcome),
                   positions, input_state, cell_map, ancilla_policy)


def _prepare_step(rt: Runtime):
    """Shared by sampling and forced steps: move heads, materialize, locate qubits."""
    if rt.halted:
        raise MachineError("runtime already halted")
    tr = rt.machine.delta.get((rt.config.state, rt.config.last_outcome))
    if tr is None:
        return None
    m = rt.machine
    new_pos = {}
    for h, d in zip(m.heads, tr.move):
        cell = rt.head_positions[h.head_id] + d
        if not m.tape(h.tape_id).contains(cell):
            raise BoundsError(f"head {h.head_id} moved to cell {cell} outside tape {h.tape_id}")
        new_pos[h.head_id] = cell
    cells = tuple((h.tape_id, new_pos[h.head_id]) for h in m.heads)
    if len(set(cells)) != len(cells):
        raise CoincidenceError(f"two heads on the same cell at measurement time: {cells}")
    rt.head_positions = new_pos
    qubits = tuple(rt.materialize(t, c) for t, c in cells)
    return tr, cells, qubits


def _finish_step(rt: Runtime, tr: Transition, cells, record: MeasurementRecord, post: StateVector):
    pre = rt.config
    rt.register = post
    rt.config = Configuration(tr.next_state, record.outcome)
    rt.step_count += 1
    step = StepRecord(pre, tr.move, cells, record, rt.config)
    rt.trace.append(step)
    return step


def step(rt: Runtime, rng: np.random.Generator):
    """Apply one transition; returns the StepRecord, or HALTED when delta is undefined."""
    prepared = _prepare_step(rt)
    if prepared is None:
        rt.halted = True
        return HALTED
    tr, cells, qubits = prepared
    record, post = measure(rt.register, rt.machine.observables[tr.observable], qubits, rng)
    return _finish_step(rt, tr, cells, record, post)


def step_forced(rt: Runtime, outcome: float):
    """Apply one transition with a chosen measurement outcome (used by tree building)."""
    prepared = _prepare_step(rt)
    if prepared is None:
        rt.halted = True
        return HALTED
    tr, cells, qubits = prepared
    obs = rt.machine.observables[tr.observable]
    p, post = project(rt.register, obs, qubits, outcome)
    record = MeasurementRecord(obs.name, qubits, outcome, p)
    return _finish_step(rt, tr, cells, record, post)


@dataclass(frozen=True)
class RunResult:
    status: str  # "halted" or "step_limit"
    trace: tuple

    @property
    def halted(self) -> bool:
        return self.status == "halted"


def run(rt: Runtime, rng: np.random.Generator, max_steps: int = 10_000) -> RunResult:
    """Step until delta is undefined or ``max_steps`` transitions have been applied."""
    if max_steps < 1:
        raise ValueError("max_steps must be positive")
    while True:
        if (rt.config.state, rt.config.last_outcome) not in rt.machine.delta:
            rt.halted = True
            return RunResult("halted", tuple(rt.trace))
        if rt.step_count >= max_steps:
            return RunResult("step_limit", tuple(rt.trace))
        step(rt, rng)


def output_window(rt: Runtime, width: int) -> StateVector:
    """Reduced state of ``width`` consecutive cells starting under the output head."""
    if width < 1:
        raise ValueError("width must be positive")
    tape_id, start = rt.head_cell(rt.machine.output_head_id)
    qubits = [rt.qubit_at(tape_id, start + i) for i in range(width)]
    try:
        window, _ = rt.register.split(qubits, tol=1e-9)
    except EntangledError as exc:
        raise EntangledError(f"output window is entangled with the rest of the tape: {exc}") from None
    return window


def cell_state(rt: Runtime, tape_id: str, cell: int) -> StateVector:
    return rt.register.split([rt.qubit_at(tape_id, cell)])[0]


def tape_qubits(rt: Runtime) -> list[int]:
    return sorted(rt.cell_map.values())


def make_machine(*, states: Sequence[str] | None = None, observables: Mapping[str, Observable],
                 delta: Mapping[tuple, Transition], tapes, heads, initial_state: str,
                 initial_outcome="init", input_head=None, output_head=None, moves=None,
                 name: str = "machine") -> MachineSpec:
    """Build a MachineSpec, inferring the state set from delta when not given."""
    if states is None:
        found = {initial_state}
        for (s, _), tr in delta.items():
            found.add(s)
            found.add(tr.next_state)
        states = found
    return MachineSpec(frozenset(states), dict(observables), dict(delta), tuple(tapes), tuple(heads),
                       initial_state, initial_outcome, input_head, output_head,
                       None if moves is None else frozenset(tuple(m) for m in moves), name)
