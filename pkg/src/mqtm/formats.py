"""Line-oriented text formats for machines, circuits, classical TMs and programs.

All parsers report errors as :class:`ParseError` carrying the 1-based line
number. ``#`` starts a comment anywhere on a line. Dumpers produce text the
matching parser reads back unchanged.

Machine files::

    name: write-0
    tapes:
      tape inf
    heads:
      h0 tape 0
    observables: X Z
    moves: -1 0 +1
    initial: start init
    input-head: h0
    output-head: h0
    delta:
      start init -> x X 0
      x +1 -> z Z 0

Tapes are ``id length`` with ``inf`` for an infinite tape; heads are ``id
tape initial-cell``; moves and delta displacements are comma-joined
k-tuples (``0,-1``). ``moves:`` is optional and means "any move" when left
out. Rows missing from ``delta:`` mean halt.
"""

from __future__ import annotations

import math
import re
from typing import Iterable

import numpy as np

from .compiler import Circuit, Gate
from .machine import HeadSpec, MachineSpec, TapeSpec, Transition, format_outcome, make_machine
from .models import ClassicalTM, MeasurementProgram, ProgramOp
from .quantum_core import StateVector, builtin_observable


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _lines(text: str) -> Iterable[tuple[int, str]]:
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield n, line


def _int(tok: str, n: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", n) from None


def _move(tok: str, n: int) -> tuple[int, ...]:
    return tuple(_int(t, n) for t in tok.split(","))


def _outcome(tok: str, initial_token: str, n: int):
    if tok == initial_token:
        return tok
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"bad outcome token {tok!r}", n) from None


# machines -------------------------------------------------------------------------

_MACHINE_LISTS = ("tapes", "heads", "observables", "moves", "delta")
_MACHINE_SCALARS = ("name", "initial", "input-head", "output-head")


def parse_machine(text: str) -> MachineSpec:
    sections: dict[str, list] = {key: [] for key in _MACHINE_LISTS}
    scalars: dict[str, tuple[int, str]] = {}
    current = None
    for n, line in _lines(text):
        head, sep, rest = line.partition(":")
        key = head.strip()
        if sep and key in _MACHINE_LISTS + _MACHINE_SCALARS and "->" not in head:
            rest = rest.strip()
            if key in _MACHINE_SCALARS:
                if not rest:
                    raise ParseError(f"{key}: needs a value", n)
                scalars[key] = (n, rest)
                current = None
            else:
                current = key
                if rest:
                    sections[key].append((n, rest))
            continue
        if current is None:
            raise ParseError(f"unexpected line {line!r}", n)
        sections[current].append((n, line))

    tapes = []
    for n, row in sections["tapes"]:
        toks = row.split()
        if len(toks) != 2:
            raise ParseError("tape rows are 'id length'", n)
        tapes.append(TapeSpec(toks[0], None if toks[1] == "inf" else _int(toks[1], n)))
    heads = []
    for n, row in sections["heads"]:
        toks = row.split()
        if len(toks) not in (2, 3):
            raise ParseError("head rows are 'id tape [cell]'", n)
        heads.append(HeadSpec(toks[0], toks[1], _int(toks[2], n) if len(toks) == 3 else 0))
    if not tapes or not heads:
        raise ParseError("a machine needs at least one tape and one head")

    if "initial" not in scalars:
        raise ParseError("missing initial: line")
    n0, init = scalars["initial"]
    parts = init.split()
    if len(parts) != 2:
        raise ParseError("initial: expects a state and an outcome token", n0)
    initial_state, initial_token = parts

    observables = {}
    for n, row in sections["observables"]:
        for name in row.split():
            try:
                observables[name] = builtin_observable(name)
            except KeyError:
                raise ParseError(f"unknown observable {name!r}", n) from None

    moves = None
    if sections["moves"]:
        moves = [_move(tok, n) for n, row in sections["moves"] for tok in row.split()]

    delta = {}
    for n, row in sections["delta"]:
        m = re.fullmatch(r"(\S+)\s+(\S+)\s*->\s*(\S+)\s+(\S+)\s+(\S+)", row)
        if m is None:
            raise ParseError("delta rows are \"s v -> s' OBS d1[,d2]\"", n)
        s, v, s2, obs, d = m.groups()
        if obs not in observables:
            raise ParseError(f"observable {obs!r} is not declared", n)
        move = _move(d, n)
        if len(move) != len(heads):
            raise ParseError(f"move {d} has {len(move)} components for {len(heads)} heads", n)
        key = (s, _outcome(v, initial_token, n))
        if key in delta:
            raise ParseError(f"duplicate delta row for {s} {v}", n)
        delta[key] = Transition(s2, obs, move)

    def head_ref(key):
        if key not in scalars:
            return None
        n, hid = scalars[key]
        if hid not in {h.head_id for h in heads}:
            raise ParseError(f"unknown head {hid!r}", n)
        return hid

    name = scalars.get("name", (0, "machine"))[1]
    return make_machine(observables=observables, delta=delta, tapes=tapes, heads=heads,
                        initial_state=initial_state, initial_outcome=initial_token,
                        input_head=head_ref("input-head"), output_head=head_ref("output-head"),
                        moves=moves, name=name)


def _fmt_move(move) -> str:
    return ",".join(str(d) if d <= 0 else f"+{d}" for d in move)


def dump_machine(machine: MachineSpec) -> str:
    out = [f"name: {machine.name}", "tapes:"]
    out += [f"  {t.tape_id} {'inf' if t.length is None else t.length}" for t in machine.tapes]
    out.append("heads:")
    out += [f"  {h.head_id} {h.tape_id} {h.initial_cell}" for h in machine.heads]
    out.append("observables: " + " ".join(sorted(machine.observables)))
    if machine.moves is not None:
        out.append("moves: " + " ".join(_fmt_move(m) for m in sorted(machine.moves)))
    out.append(f"initial: {machine.initial_state} {format_outcome(machine.initial_outcome)}")
    out.append(f"input-head: {machine.input_head_id}")
    out.append(f"output-head: {machine.output_head_id}")
    out.append("delta:")
    rows = sorted(machine.delta.items(), key=lambda kv: (kv[0][0], format_outcome(kv[0][1])))
    for (s, v), tr in rows:
        out.append(f"  {s} {format_outcome(v)} -> {tr.next_state} {tr.observable} {_fmt_move(tr.move)}")
    return "\n".join(out) + "\n"


# circuits -----------------------------------------------------------------------------

def parse_circuit(text: str) -> Circuit:
    """One gate per line (``H 0``, ``CNOT 0 1``); an optional ``qubits: n`` line fixes the width."""
    gates, width, top = [], None, 0
    for n, line in _lines(text):
        if line.startswith("qubits:"):
            width = _int(line.split(":", 1)[1].strip(), n)
            continue
        toks = line.split()
        qubits = tuple(_int(t, n) for t in toks[1:])
        if not qubits:
            raise ParseError(f"gate {toks[0]} has no operands", n)
        gates.append((n, Gate(toks[0].upper(), qubits)))
        top = max(top, max(qubits) + 1)
    try:
        return Circuit(width if width is not None else max(top, 1), tuple(g for _, g in gates))
    except ValueError as exc:
        # locate the offending gate for the message
        for n, g in gates:
            try:
                Circuit(width if width is not None else max(top, 1), (g,))
            except ValueError as inner:
                raise ParseError(str(inner), n) from None
        raise ParseError(str(exc)) from None


def dump_circuit(circuit: Circuit) -> str:
    return "\n".join([f"qubits: {circuit.qubit_count}", *map(str, circuit.gates)]) + "\n"


# classical Turing machines -----------------------------------------------------------------

_DIRS = {"-1": -1, "0": 0, "+1": 1, "1": 1, "L": -1, "S": 0, "R": 1}


def parse_tm(text: str) -> ClassicalTM:
    """``states:``, ``initial:``, ``halt:`` and rows ``s b -> s' b' d`` with d in -1/0/+1 or L/S/R."""
    states = initial = None
    halt: tuple = ()
    delta = {}
    for n, line in _lines(text):
        key, sep, rest = line.partition(":")
        if sep and "->" not in line:
            vals = rest.split()
            if key == "states":
                states = tuple(vals)
            elif key == "initial" and len(vals) == 1:
                initial = vals[0]
            elif key == "halt":
                halt = tuple(vals)
            else:
                raise ParseError(f"unexpected header {line!r}", n)
            continue
        m = re.fullmatch(r"(\S+)\s+([01])\s*->\s*(\S+)\s+([01])\s+(\S+)", line)
        if m is None or m.group(5) not in _DIRS:
            raise ParseError("rules are \"s b -> s' b' d\"", n)
        s, b, s2, b2, d = m.groups()
        if (s, int(b)) in delta:
            raise ParseError(f"duplicate rule for {s} {b}", n)
        delta[(s, int(b))] = (s2, int(b2), _DIRS[d])
    if states is None or initial is None:
        raise ParseError("a TM needs states: and initial: lines")
    try:
        return ClassicalTM(states, initial, halt, delta)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def dump_tm(tm: ClassicalTM) -> str:
    out = ["states: " + " ".join(tm.states), f"initial: {tm.initial}", "halt: " + " ".join(tm.halt)]
    for (s, b), (s2, b2, d) in sorted(tm.delta.items()):
        out.append(f"{s} {b} -> {s2} {b2} {d:+d}" if d else f"{s} {b} -> {s2} {b2} 0")
    return "\n".join(out) + "\n"


# measurement programs -----------------------------------------------------------------------

def parse_program(text: str, max_executed: int = 64) -> MeasurementProgram:
    """Rows ``[label:] OBS i [j] [-> label]``; ``-> label`` jumps there on outcome -1.

    For the single-qubit observables XI and ZI the second index may be left
    out.
    """
    ops = []
    for n, line in _lines(text):
        m = re.fullmatch(r"(?:(\w+):\s*)?(\S+)\s+(\d+)(?:\s+(\d+))?(?:\s*->\s*(\w+))?", line)
        if m is None:
            raise ParseError("program rows are '[label:] OBS i [j] [-> label]'", n)
        label, obs, i, j, jump = m.groups()
        i = int(i)
        if j is None:
            if obs not in ("XI", "ZI"):
                raise ParseError(f"{obs} needs two operands", n)
            j = 1 if i == 0 else 0
        ops.append(ProgramOp(obs, i, int(j), label, jump))
    try:
        return MeasurementProgram(tuple(ops), max_executed)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def dump_program(prog: MeasurementProgram) -> str:
    out = []
    for op in prog.ops:
        row = f"{op.observable} {op.i} {op.j}"
        if op.label:
            row = f"{op.label}: {row}"
        if op.jump_on_minus:
            row += f" -> {op.jump_on_minus}"
        out.append(row)
    return "\n".join(out) + "\n"


# input and state text ---------------------------------------------------------------------

def parse_input(spec: str) -> StateVector:
    """A basis string (``011``, ``|011>``) or comma-separated amplitudes (``0.6,0.8i``, ``1+1i,1-1i``).

    Amplitudes are normalized.
    """
    text = spec.strip()
    basis = text.removeprefix("|").removesuffix(">").removesuffix("⟩")
    if basis == "" and text in ("", "|>"):
        return StateVector([1.0])
    if re.fullmatch(r"[01]+", basis):
        return StateVector.basis(basis)
    try:
        amps = [complex(tok.strip().replace(" ", "").replace("i", "j")) for tok in text.split(",")]
    except ValueError:
        raise ParseError(f"bad input spec {spec!r}") from None
    size = len(amps)
    if size < 2 or size & (size - 1):
        raise ParseError(f"{size} amplitudes is not a power of two")
    if not any(abs(a) > 0 for a in amps):
        raise ParseError("all amplitudes are zero")
    return StateVector(np.array(amps), normalize=True)


def _fmt_real(x: float, digits: int) -> str:
    s = f"{x:.{digits}f}"
    return "0" + s[2:] if s.startswith("-0") and float(s) == 0 else s


def format_complex(z: complex, digits: int = 6) -> str:
    re_s = _fmt_real(z.real, digits)
    im_s = _fmt_real(z.imag, digits)
    sign = "" if im_s.startswith("-") else "+"
    return f"{re_s}{sign}{im_s}i"


def format_state(state: StateVector, digits: int = 6) -> str:
    """``|b>`` for a basis state up to phase; otherwise phase-normalized ``re+imi`` amplitudes."""
    amps = state.amplitudes
    mags = np.abs(amps)
    k = int(np.argmax(mags))
    if abs(mags[k] - 1.0) < 10 ** -(digits + 2) or state.num_qubits == 0:
        return "|" + format(k, f"0{state.num_qubits}b") + ">" if state.num_qubits else "|>"
    first = next(i for i, m in enumerate(mags) if m > 10 ** -(digits + 2))
    phase = amps[first] / mags[first]
    amps = amps / phase
    return "[" + ", ".join(format_complex(complex(a), digits) for a in amps) + "]"


def dyadic_text(f) -> str:
    """``p/2^e`` for a dyadic fraction."""
    if f.denominator == 1:
        return str(f.numerator)
    e = int(math.log2(f.denominator))
    return f"{f.numerator}/2^{e}"


def format_step(index: int, record) -> str:
    """One trace line: configuration change, observable, move, measured cells, outcome."""
    pre, post, m = record.pre_config, record.post_config, record.measurement
    cells = ",".join(f"{t}:{c}" for t, c in record.cells)
    return (f"{index} {pre.state} {format_outcome(pre.last_outcome)} -> {post.state} "
            f"{m.observable_name} {_fmt_move(record.move)} @{cells} = {format_outcome(m.outcome)} "
            f"p={m.probability:.6f}")
