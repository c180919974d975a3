"""Concrete machine families, the classical Turing machine embedding, and trace-level reductions.

Families A to F fix the tapes, heads, observables and moves a machine may
use. :func:`validate_model` checks a :class:`~mqtm.machine.MachineSpec`
against one of them.

Reductions operate on :class:`MeasurementProgram` traces: a program measured
on a flat register is replayed under the layout restrictions of family D, E or
F by moving operands between tapes (teleportation or state transfer) and
tracking the resulting Pauli frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .machine import HeadSpec, MachineSpec, TapeSpec, Transition, make_machine
from .machine import validate as validate_machine
from .protocols import (
    ProtocolError,
    Register,
    RoundLimitError,
    bell_prepare_frame,
    enumerate_sequence,
    observable_conjugation_sign,
    sigma,
    teleport_frame,
    transfer_frame,
)
from .quantum_core import (
    PauliOp,
    StateVector,
    apply_pauli,
    builtin_observable,
    canonical_observable_name,
    fidelity_up_to_global_phase,
    outcome_bit,
    outcome_distribution,
)

O_A = ("XX", "ZZ", "XZ", "ZX", "XI", "ZI", "XX+YX", "XX+XY")
O_C = ("X", "Z")
O_D = ("XX", "ZZ", "XZ", "ZX", "XI", "ZI", "IX", "IZ", "XX+XY", "XX+YX")
O_E = O_D
# The source list repeats X⊗Z; the second entry is read as Z⊗X.
O_F = ("XX", "ZZ", "XZ", "ZX", "XI", "ZI", "IX", "IZ", "XX+XY")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelFamily:
    """Resources allowed in one model family.

    ``observables`` is None for family B, which accepts any single-qubit observable.
    """

    name: str
    tapes: tuple
    head_tapes: tuple
    observables: tuple | None
    move_ok: Callable[[tuple], bool]
    moves_text: str
    description: str = ""

    @property
    def k(self) -> int:
        return len(self.head_tapes)

    def observable_table(self) -> dict:
        if self.observables is None:
            raise ModelError(f"family {self.name} has no fixed observable table")
        return {name: builtin_observable(name) for name in self.observables}

    def heads(self, initial_cells: Sequence[int] | None = None) -> list[HeadSpec]:
        cells = initial_cells or [0] * self.k
        return [HeadSpec(f"h{i}", t, c) for i, (t, c) in enumerate(zip(self.head_tapes, cells))]


def _any_pair(m):
    return len(m) == 2


def make_model(family: str, *, observables: Sequence[str] | None = None,
               moves: Sequence[int] | None = None) -> ModelFamily:
    """Descriptor of family ``family`` (one of A to F).

    Family B takes optional ``observables`` (single-qubit names) and ``moves``.
    """
    inf = TapeSpec("tape")
    if family == "A":
        return ModelFamily("A", (inf,), ("tape", "tape"), O_A, _any_pair, "Z^2",
                           "one infinite tape, two heads")
    if family == "B":
        obs = None if observables is None else tuple(canonical_observable_name(o) for o in observables)
        if obs is not None and any(builtin_observable(o).arity != 1 for o in obs):
            raise ModelError("family B only has single-qubit observables")
        allowed = None if moves is None else frozenset(moves)
        return ModelFamily("B", (inf,), ("tape",), obs,
                           lambda m: len(m) == 1 and (allowed is None or m[0] in allowed),
                           "Z" if allowed is None else str(sorted(allowed)),
                           "one infinite tape, one head, single-qubit observables")
    if family == "C":
        return ModelFamily("C", (inf,), ("tape",), O_C, lambda m: len(m) == 1 and m[0] in (-1, 0, 1),
                           "{-1,0,1}", "one infinite tape, one head, X and Z")
    if family == "D":
        up, low = TapeSpec("upper"), TapeSpec("lower")
        return ModelFamily("D", (up, low), ("upper", "lower"), O_D, _any_pair, "Z^2",
                           "two infinite tapes, one head each")
    if family == "E":
        return ModelFamily("E", (TapeSpec("finite", 2), inf), ("finite", "tape"), O_E,
                           lambda m: len(m) == 2 and m[0] in (-1, 0, 1), "{-1,0,1} x Z",
                           "a two-qubit tape and an infinite tape")
    if family == "F":
        return ModelFamily("F", (TapeSpec("finite", 1), inf), ("finite", "tape"), O_F,
                           lambda m: len(m) == 2 and m[0] == 0, "{0} x Z",
                           "a one-qubit tape and an infinite tape")
    raise ModelError(f"unknown model family {family!r}")


def validate_model(machine: MachineSpec, model: ModelFamily) -> list[str]:
    """Well-formedness problems plus every use of a resource outside ``model``."""
    problems = list(validate_machine(machine))
    if machine.k != model.k:
        problems.append(f"family {model.name} has {model.k} head(s), machine has {machine.k}")
    tapes = {t.tape_id: t for t in machine.tapes}
    for h, want in zip(machine.heads, model.head_tapes):
        spec = next(t for t in model.tapes if t.tape_id == want)
        got = tapes.get(h.tape_id)
        if got is None or got.length != spec.length:
            problems.append(f"head {h.head_id} must be on a tape of length "
                            f"{'infinite' if spec.length is None else spec.length}")
    if len({h.tape_id for h in machine.heads}) != len(set(model.head_tapes)):
        problems.append(f"family {model.name} places heads on {len(set(model.head_tapes))} distinct tape(s)")
    for name, obs in machine.observables.items():
        if model.observables is None:
            if obs.arity != 1:
                problems.append(f"observable {name} is not single-qubit")
            continue
        key = canonical_observable_name(name)
        if key not in model.observables:
            problems.append(f"observable {name} is not in O_{model.name}")
        elif not np.allclose(obs.matrix, builtin_observable(key).matrix, atol=1e-10):
            problems.append(f"observable {name} does not have the standard matrix")
    for (s, v), tr in machine.delta.items():
        if not model.move_ok(tuple(tr.move)):
            problems.append(f"move {tr.move} in delta({s}, {v}) is outside D_{model.name} = {model.moves_text}")
    return problems


# classical Turing machines ----------------------------------------------------------

@dataclass(frozen=True)
class ClassicalTM:
    """Binary-alphabet Turing machine; ``delta[(state, bit)] = (state', bit', move)``.

    A configuration without a rule halts. Unvisited cells read 0.
    """

    states: tuple
    initial: str
    halt: tuple
    delta: Mapping

    def __post_init__(self):
        sts = set(self.states)
        if self.initial not in sts:
            raise ModelError(f"initial state {self.initial} is not declared")
        for h in self.halt:
            if h not in sts:
                raise ModelError(f"halt state {h} is not declared")
        for (s, b), (s2, b2, d) in self.delta.items():
            if s not in sts or s2 not in sts:
                raise ModelError(f"rule {s} {b} mentions an undeclared state")
            if b not in (0, 1) or b2 not in (0, 1):
                raise ModelError(f"rule {s} {b}: bits must be 0 or 1")
            if d not in (-1, 0, 1):
                raise ModelError(f"rule {s} {b}: move must be -1, 0 or +1")
            if s in self.halt:
                raise ModelError(f"halt state {s} has an outgoing rule")


@dataclass
class TMResult:
    halted: bool
    steps: int
    tape: dict
    head: int
    state: str

    def read(self, width: int, start: int = 0) -> str:
        return "".join(str(self.tape.get(start + i, 0)) for i in range(width))


def run_classical_tm(tm: ClassicalTM, bits: str | Sequence[int], max_steps: int = 10_000) -> TMResult:
    """Reference interpreter, used as the oracle for compiled machines."""
    tape = {i: int(b) for i, b in enumerate(bits)}
    head, state = 0, tm.initial
    for steps in range(max_steps + 1):
        rule = tm.delta.get((state, tape.get(head, 0)))
        if rule is None:
            return TMResult(True, steps, tape, head, state)
        if steps == max_steps:
            break
        state, tape[head], d = rule[0], rule[1], rule[2]
        head += d
    return TMResult(False, max_steps, tape, head, state)


def not_tm() -> ClassicalTM:
    """Flip cell 0 and halt."""
    return ClassicalTM(("q", "h"), "q", ("h",), {("q", 0): ("h", 1, 0), ("q", 1): ("h", 0, 0)})


def write_one_tm() -> ClassicalTM:
    return ClassicalTM(("q", "h"), "q", ("h",), {("q", 0): ("h", 1, 0), ("q", 1): ("h", 1, 0)})


def increment_tm(width: int = 3) -> ClassicalTM:
    """Add one to a ``width``-bit big-endian counter on cells 0..width-1 (overflow wraps).

    The head walks to the last cell, propagates the carry leftwards and then
    returns to cell 0 before halting.
    """
    if width < 1:
        raise ModelError("width must be positive")
    delta = {}
    states = [f"r{i}" for i in range(width)] + [f"c{i}" for i in range(width)] + [f"b{i}" for i in range(width)] + ["h"]
    for i in range(width - 1):
        for b in (0, 1):
            delta[(f"r{i}", b)] = (f"r{i + 1}", b, 1)
    for b in (0, 1):
        delta[(f"r{width - 1}", b)] = (f"c{width - 1}", b, 0)
    for i in range(width):
        # carry into cell i: 1 -> 0 and keep carrying, 0 -> 1 and return
        delta[(f"c{i}", 1)] = (f"c{i - 1}", 0, -1) if i > 0 else ("h", 0, 0)
        delta[(f"c{i}", 0)] = (f"b{i - 1}", 1, -1) if i > 0 else ("h", 1, 0)
    for i in range(width - 1):
        for b in (0, 1):
            delta[(f"b{i}", b)] = (f"b{i - 1}", b, -1) if i > 0 else ("h", b, 0)
    states = [s for s in states if s != f"b{width - 1}"]
    return ClassicalTM(tuple(states), "r0", ("h",), delta)


def compile_classical_tm(tm: ClassicalTM, name: str = "classical-tm") -> MachineSpec:
    """Embed ``tm`` into a family-C machine.

    Reading is a Z measurement. Writing bit ``w`` is the loop X then Z, repeated
    until the Z outcome encodes ``w``; it always runs at least once. States:
    ``start``, one ``read:q`` per TM state and an ``X``/``Z`` pair per TM rule.
    """
    delta = {}
    delta[("start", "init")] = Transition(f"read:{tm.initial}", "Z", (0,))
    for (q, b), (q2, w, d) in tm.delta.items():
        outcome = 1.0 if b == 0 else -1.0
        wx, wz = f"wx:{q}:{b}", f"wz:{q}:{b}"
        delta[(f"read:{q}", outcome)] = Transition(wx, "X", (0,))
        for v in (1.0, -1.0):
            delta[(wx, v)] = Transition(wz, "Z", (0,))
        good = 1.0 if w == 0 else -1.0
        delta[(wz, -good)] = Transition(wx, "X", (0,))
        delta[(wz, good)] = Transition(f"read:{q2}", "Z", (d,))
    states = {"start"} | {f"read:{q}" for q in tm.states}
    for (q, b) in tm.delta:
        states |= {f"wx:{q}:{b}", f"wz:{q}:{b}"}
    return make_machine(states=states, observables={o: builtin_observable(o) for o in O_C}, delta=delta,
                        tapes=[TapeSpec("tape")], heads=[HeadSpec("h0", "tape", 0)], initial_state="start",
                        moves=[(-1,), (0,), (1,)], name=name)


def machine_tape_bits(rt, width: int, start: int = 0) -> str | None:
    """Classical reading of cells ``start..start+width-1``; None if some cell is not a basis state."""
    from .machine import cell_state

    out = []
    for i in range(width):
        try:
            amps = cell_state(rt, "tape", start + i).amplitudes
        except Exception:
            amps = np.array([1.0, 0.0])  # never touched: still |0>
        p1 = abs(amps[1]) ** 2
        if p1 < 1e-9:
            out.append("0")
        elif p1 > 1 - 1e-9:
            out.append("1")
        else:
            return None
    return "".join(out)


# measurement programs -----------------------------------------------------------------

@dataclass(frozen=True)
class ProgramOp:
    """Measure ``observable`` on logical qubits (i, j).

    For the single-qubit observables XI and ZI only ``i`` is measured. When
    ``jump_on_minus`` is set, outcome -1 continues at that label.
    """

    observable: str
    i: int
    j: int
    label: str | None = None
    jump_on_minus: str | None = None

    @property
    def single(self) -> bool:
        return self.observable in ("XI", "ZI")


@dataclass(frozen=True)
class MeasurementProgram:
    ops: tuple
    max_executed: int = 64

    def __post_init__(self):
        labels = [op.label for op in self.ops if op.label is not None]
        if len(set(labels)) != len(labels):
            raise ModelError("duplicate label")
        for k, op in enumerate(self.ops):
            if canonical_observable_name(op.observable) not in O_A:
                raise ModelError(f"op {k}: {op.observable} is not in O_A")
            if op.i == op.j or op.i < 0 or op.j < 0:
                raise ModelError(f"op {k}: operands must be distinct nonnegative indices")
            if op.jump_on_minus is not None and op.jump_on_minus not in labels:
                raise ModelError(f"op {k}: unknown label {op.jump_on_minus}")
        object.__setattr__(self, "ops", tuple(
            ProgramOp(canonical_observable_name(o.observable), o.i, o.j, o.label, o.jump_on_minus) for o in self.ops))

    @classmethod
    def straight(cls, ops: Sequence[tuple]) -> "MeasurementProgram":
        return cls(tuple(ProgramOp(name, i, j) for name, i, j in ops))

    @property
    def num_qubits(self) -> int:
        return 1 + max((max(op.i, op.j) for op in self.ops), default=-1)

    def next_pc(self, pc: int, outcome: float) -> int:
        op = self.ops[pc]
        if op.jump_on_minus is not None and outcome_bit(outcome):
            return next(k for k, o in enumerate(self.ops) if o.label == op.jump_on_minus)
        return pc + 1


def random_program(rng: np.random.Generator, length: int, num_qubits: int) -> MeasurementProgram:
    ops = []
    for _ in range(length):
        i, j = rng.choice(num_qubits, size=2, replace=False)
        ops.append((O_A[rng.integers(len(O_A))], int(i), int(j)))
    return MeasurementProgram.straight(ops)


def flat_distribution(prog: MeasurementProgram, state: StateVector) -> dict:
    """Exact ``{logical outcomes: (probability, final state)}`` of ``prog`` on a flat register."""
    frontier = [(0, (), 1.0, state)]
    done: dict = {}
    while frontier:
        pc, outs, p, st = frontier.pop()
        if pc >= len(prog.ops) or len(outs) >= prog.max_executed:
            done[outs] = (p, st)
            continue
        op = prog.ops[pc]
        for ev, q, post in outcome_distribution(st, builtin_observable(op.observable), (op.i, op.j)):
            frontier.append((prog.next_pc(pc, ev), outs + (ev,), p * q, post))
    return done


# trace-level reductions ------------------------------------------------------------------

_SWAP = {"XX+YX": "XX+XY", "XX+XY": "XX+YX"}


def swap_factors(name: str) -> str:
    """Name of the observable with its two tensor factors exchanged."""
    return _SWAP.get(name, name[::-1])


def _c_factor(name: str) -> int | None:
    """Position (0 or 1) of the non-Pauli factor (X+Y)/√2, if any."""
    return {"XX+YX": 0, "XX+XY": 1}.get(name)


class LayoutError(ProtocolError):
    """A physical measurement that the target family cannot perform."""


def physical_name(model: ModelFamily, name: str, tapes: Sequence[str]) -> str:
    """Observable name in head order for a measurement on qubits lying on ``tapes``.

    Two-qubit observables must straddle the two tapes; single-qubit ones are
    padded with I on the other head. Raises LayoutError if the result is not
    in the family's table.
    """
    first = model.head_tapes[0]
    if len(tapes) == 1:
        phys = name + "I" if tapes[0] == first else "I" + name
    else:
        if tapes[0] == tapes[1]:
            raise LayoutError(f"{name} on two qubits of tape {tapes[0]}")
        phys = name if tapes[0] == first else swap_factors(name)
    if phys not in model.observables:
        raise LayoutError(f"{phys} is not in O_{model.name}")
    return phys


@dataclass(frozen=True)
class Segment:
    """A fixed measurement sequence over the logical qubits plus fresh auxiliaries.

    Logical qubit ``q`` is register qubit ``q``; ``aux`` lists the tapes of the
    fresh qubits appended after them. ``result(outcomes)`` gives the frame
    updates ``{q: byproduct}`` and the logical outcome (or None).
    """

    aux: tuple
    sequence: tuple
    where: tuple
    result: Callable


def _move_segment(family: str, tapes: Sequence[str], q: int, to_tape: str) -> Segment:
    """Teleport (D, E) or state-transfer (F) logical qubit ``q`` onto a fresh qubit of ``to_tape``."""
    n = len(tapes)
    where = list(range(n))
    if family == "F":
        dst = n
        where[q] = dst
        seq = (("Z", (dst,)), ("XX", (dst, q)), ("Z", (q,)))
        return Segment((to_tape,), seq, tuple(where), lambda o: ({q: transfer_frame(*o)}, None))
    a, b, c = n, n + 1, n + 2
    where[q] = a
    seq = (("Z", (a,)), ("Z", (b,)), ("Z", (c,)), ("XX", (c, a)), ("XX", (c, b)), ("Z", (c,)),
           ("ZZ", (q, b)), ("XX", (q, b)))

    def result(o):
        prep = bell_prepare_frame(*o[:6])
        bell = sigma(PauliOp("X"), o[6]) * sigma(PauliOp("Z"), o[7])
        return {q: teleport_frame(PauliOp(prep.labels[:2]), bell)}, None

    return Segment((to_tape, to_tape, tapes[q]), seq, tuple(where), result)


def _measure_segment(op: ProgramOp, n: int, frames: Sequence[PauliOp]) -> Segment:
    if op.single:
        seq = ((op.observable[0], (op.i,)),)
        sign = observable_conjugation_sign(op.observable, [frames[op.i], PauliOp("I")])
    else:
        seq = ((op.observable, (op.i, op.j)),)
        sign = observable_conjugation_sign(op.observable, [frames[op.i], frames[op.j]])
    if sign is None:
        raise ProtocolError(f"frame does not map {op.observable} to ±itself; correct it first")
    return Segment((), seq, tuple(range(n)), lambda o: ({}, o[0] * sign))


@dataclass
class ReductionState:
    """Between segments: logical qubit q is register qubit q, on tape ``tapes[q]``."""

    state: StateVector
    tapes: tuple
    frames: tuple  # PauliOp per logical qubit: actual = frame . ideal
    outcomes: tuple = ()
    probability: float = 1.0
    pc: int = 0
    log: tuple = ()
    rounds: int = 0


def _home_tapes(family: str, n: int) -> tuple:
    if family == "D":
        return tuple("upper" if q % 2 else "lower" for q in range(n))
    return ("tape",) * n


def _other(family: str, tape: str) -> str:
    if family == "D":
        return "lower" if tape == "upper" else "upper"
    return "tape" if tape == "finite" else "finite"


def _mover(family: str, op: ProgramOp, tapes: Sequence[str]) -> int | None:
    """Logical qubit that has to visit the other tape for ``op``, or None.

    The operand carrying the (X+Y)/√2 factor is never moved, so only Pauli
    factors ever see a teleportation byproduct.
    """
    if op.single:
        return None
    c = _c_factor(op.observable)
    if family == "D":
        if tapes[op.i] != tapes[op.j]:
            return None
        return op.i if c == 1 else op.j
    return op.j if c == 0 else op.i


class ReductionRunner:
    """Executes a MeasurementProgram under the layout rules of family D, E or F.

    Per op: move one operand to the other tape (teleportation for D and E,
    state transfer for F), measure, move it back. Outcomes are relabelled by
    the sign the current frames give the observable. Sampled runs (:meth:`sample`)
    keep frames across ops and, before an op whose (X+Y)/√2 operand has a frame
    with an X component, bounce that operand to the other tape and back until
    the X component is gone. Auxiliary qubits are discarded after each segment
    and fresh |0> qubits used for the next, which models resetting a cell by a
    Z measurement.
    """

    def __init__(self, family: str, prog: MeasurementProgram, max_rounds: int = 64):
        if family not in ("D", "E", "F"):
            raise ModelError("reductions target families D, E and F")
        self.family = family
        self.model = make_model(family)
        self.prog = prog
        self.max_rounds = max_rounds

    def _check(self, rs: ReductionState, seg: Segment) -> tuple:
        tapes = list(rs.tapes) + list(seg.aux)
        for t in set(seg.aux):
            cap = next(x.length for x in self.model.tapes if x.tape_id == t)
            occupied = sum(1 for k, x in enumerate(tapes) if x == t and (k >= len(rs.tapes) or k in seg.where))
            if cap is not None and occupied > cap:
                raise LayoutError(f"tape {t} holds at most {cap} qubit(s)")
        return tuple(physical_name(self.model, name, [tapes[p] for p in pos]) for name, pos in seg.sequence)

    def _finish(self, rs: ReductionState, seg: Segment, outcomes, p, state, log) -> ReductionState:
        tapes = list(rs.tapes) + list(seg.aux)
        kept, _ = state.split(list(seg.where), tol=1e-9)
        updates, logical = seg.result(tuple(outcomes))
        frames = list(rs.frames)
        for q, f in updates.items():
            frames[q] = (f * frames[q]).up_to_phase()
        outs = rs.outcomes if logical is None else rs.outcomes + (logical,)
        return ReductionState(kept, tuple(tapes[k] for k in seg.where), tuple(frames), outs,
                              rs.probability * p, rs.pc, rs.log + log, rs.rounds)

    def _widen(self, rs: ReductionState, seg: Segment) -> StateVector:
        st = rs.state
        for _ in seg.aux:
            st = st.tensor(StateVector.basis("0"))
        return st

    def _run_segment(self, rs: ReductionState, seg: Segment, rng) -> ReductionState:
        log = self._check(rs, seg)
        reg = Register(self._widen(rs, seg), rng=rng)
        outs = [reg.measure(name, pos) for name, pos in seg.sequence]
        return self._finish(rs, seg, outs, reg.probability, reg.state, log)

    def _enumerate_segment(self, rs: ReductionState, seg: Segment) -> list[ReductionState]:
        log = self._check(rs, seg)
        paths = enumerate_sequence(self._widen(rs, seg), seg.sequence)
        return [self._finish(rs, seg, p.outcomes, p.probability, p.state, log) for p in paths]

    def _segments(self, op: ProgramOp, rs: ReductionState):
        """Yield segment factories for ``op`` (each needs the state reached so far)."""
        mover = _mover(self.family, op, rs.tapes)
        if mover is None:
            return [lambda cur: _measure_segment(op, len(cur.tapes), cur.frames)]
        home = rs.tapes[mover]
        away = _other(self.family, home)
        return [lambda cur: _move_segment(self.family, cur.tapes, mover, away),
                lambda cur: _measure_segment(op, len(cur.tapes), cur.frames),
                lambda cur: _move_segment(self.family, cur.tapes, mover, home)]

    def _needs_correction(self, op: ProgramOp, frames) -> int | None:
        c = _c_factor(op.observable)
        if c is None:
            return None
        q = (op.i, op.j)[c]
        return q if frames[q].bits()[0][0] else None

    def _start(self, state: StateVector) -> ReductionState:
        n = state.num_qubits
        return ReductionState(state, _home_tapes(self.family, n), tuple(PauliOp("I") for _ in range(n)))

    def sample(self, state: StateVector, rng: np.random.Generator) -> ReductionState:
        """One sampled execution with full frame tracking and no oracle corrections."""
        rs = self._start(state)
        executed = 0
        while rs.pc < len(self.prog.ops) and executed < self.prog.max_executed:
            op = self.prog.ops[rs.pc]
            q = self._needs_correction(op, rs.frames)
            while q is not None:
                if rs.rounds >= self.max_rounds:
                    raise RoundLimitError(f"frame on qubit {q} not corrected in {self.max_rounds} round trips")
                rs.rounds += 1
                home = rs.tapes[q]
                rs = self._run_segment(rs, _move_segment(self.family, rs.tapes, q, _other(self.family, home)), rng)
                rs = self._run_segment(rs, _move_segment(self.family, rs.tapes, q, home), rng)
                q = self._needs_correction(op, rs.frames)
            for factory in self._segments(op, rs):
                rs = self._run_segment(rs, factory(rs), rng)
            rs.pc = self.prog.next_pc(rs.pc, rs.outcomes[-1])
            executed += 1
        return rs

    def distribution(self, state: StateVector) -> dict:
        """Exact ``{logical outcomes: (probability, state)}`` by exhaustive enumeration.

        Every segment is enumerated over all of its outcome paths. Paths that
        end with equal logical outcomes and frames are merged after checking
        that their logical states agree. Between program ops the frames are
        undone with the test oracle, so every op starts frame-free and paths
        with equal outcome prefixes merge again.
        """
        frontier = {(): self._start(state)}
        done: dict = {}
        while frontier:
            nxt_frontier: dict = {}
            for outs, rs in frontier.items():
                if rs.pc >= len(self.prog.ops) or len(outs) >= self.prog.max_executed:
                    done[outs] = (rs.probability, rs.state)
                    continue
                op = self.prog.ops[rs.pc]
                items = [rs]
                for factory in self._segments(op, rs):
                    merged: dict = {}
                    for cur in items:
                        for new in self._enumerate_segment(cur, factory(cur)):
                            _merge_into(merged, (new.outcomes, tuple(f.labels for f in new.frames)), new)
                    items = list(merged.values())
                for cur in items:
                    corrected = ReductionState(corrected_logical_state(cur), cur.tapes,
                                               tuple(PauliOp("I") for _ in cur.frames), cur.outcomes,
                                               cur.probability, self.prog.next_pc(rs.pc, cur.outcomes[-1]))
                    _merge_into(nxt_frontier, cur.outcomes, corrected)
            frontier = nxt_frontier
        return done


def _merge_into(table: dict, key, rs: ReductionState) -> None:
    old = table.get(key)
    if old is None:
        table[key] = rs
        return
    if fidelity_up_to_global_phase(old.state, rs.state) < 1 - 1e-9:
        raise ProtocolError("paths with the same outcomes and frames reached different states")
    old.probability += rs.probability


def simulate_program_on(family: str, prog: MeasurementProgram, state: StateVector,
                        rng: np.random.Generator) -> ReductionState:
    """Sampled execution of ``prog`` under family ``family``'s layout, frames tracked."""
    return ReductionRunner(family, prog).sample(state, rng)


@dataclass
class ReductionReport:
    family: str
    tv_distance: float
    min_fidelity: float
    outcome_sequences: int


def compare_with_flat(family: str, prog: MeasurementProgram, state: StateVector) -> ReductionReport:
    """Total-variation distance and worst state fidelity between reduced and flat executions."""
    flat = flat_distribution(prog, state)
    red = ReductionRunner(family, prog).distribution(state)
    keys = set(flat) | set(red)
    tv = 0.5 * sum(abs(flat.get(k, (0.0, None))[0] - red.get(k, (0.0, None))[0]) for k in keys)
    fid = 1.0
    for k in keys:
        if k in flat and k in red:
            fid = min(fid, fidelity_up_to_global_phase(flat[k][1], red[k][1]))
    return ReductionReport(family, tv, fid, len(keys))


def corrected_logical_state(rs: ReductionState) -> StateVector:
    """Undo the recorded frames (test-oracle use)."""
    st = rs.state
    for q, f in enumerate(rs.frames):
        if not f.is_identity_up_to_phase():
            st = apply_pauli(st, f, [q])
    return st
