"""Measurement-only subroutines with Pauli byproduct tracking.

Every protocol acts on a :class:`Register` and only ever measures. The
Pauli byproduct ("frame") implied by the outcomes is returned in a
:class:`ProtocolResult`; it is never physically applied. Corrections are
done by measuring again (re-transfer, re-write) until the frame is trivial.

Outcome bits follow b = (1 - outcome) / 2, so ``sigma_x ** b`` is the
identity for outcome +1 and ``sigma_x`` for outcome -1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np

from .quantum_core import (
    MeasurementRecord,
    PauliOp,
    StateVector,
    apply_pauli,
    builtin_observable,
    canonical_observable_name,
    measure,
    outcome_bit,
    fidelity_up_to_global_phase,
    outcome_distribution,
    project,
    single_qubit_purity,
)

if TYPE_CHECKING:
    from .machine import MachineSpec

DEFAULT_MAX_ROUNDS = 64

I1 = PauliOp("I")
X1 = PauliOp("X")
Z1 = PauliOp("Z")


class ProtocolError(RuntimeError):
    pass


class RoundLimitError(ProtocolError):
    """A repeat-until-success loop did not succeed within ``max_rounds``."""


class PreconditionError(ProtocolError):
    pass


class NeedBranch(Exception):
    """Raised by a forced-outcome register that has run out of scripted outcomes."""

    def __init__(self, branches):
        super().__init__("outcome script exhausted")
        self.branches = branches


class Register:
    """A state vector plus a source of measurement outcomes.

    With ``rng`` outcomes are sampled. With ``script`` they are taken from
    the given sequence; once the script is exhausted the next measurement
    raises :class:`NeedBranch` carrying the outcome distribution, which is
    how :func:`enumerate_paths` explores every branch.
    """

    def __init__(self, state: StateVector, rng: np.random.Generator | None = None,
                 script: Sequence[float] | None = None):
        if rng is None and script is None:
            raise ValueError("a register needs an rng or an outcome script")
        self.state = state
        self.rng = rng
        self.script = None if script is None else list(script)
        self._cursor = 0
        self.records: list[MeasurementRecord] = []

    @property
    def probability(self) -> float:
        p = 1.0
        for r in self.records:
            p *= r.probability
        return p

    def measure(self, name: str, positions: Sequence[int]) -> float:
        obs = builtin_observable(name)
        positions = tuple(positions)
        if self.script is None:
            record, self.state = measure(self.state, obs, positions, self.rng)
        elif self._cursor < len(self.script):
            ev = self.script[self._cursor]
            self._cursor += 1
            p, self.state = project(self.state, obs, positions, ev)
            record = MeasurementRecord(obs.name, positions, ev, p)
        else:
            raise NeedBranch([ev for ev, _, _ in outcome_distribution(self.state, obs, positions)])
        self.records.append(record)
        return record.outcome

    def add_qubit(self, fresh: StateVector | None = None) -> int:
        self.state = self.state.tensor(fresh if fresh is not None else StateVector.basis("0"))
        return self.state.num_qubits - 1


@dataclass(frozen=True)
class Path:
    outcomes: tuple
    probability: float
    state: StateVector
    result: object
    records: tuple = ()


def enumerate_paths(protocol: Callable[[Register], object], state: StateVector,
                    max_paths: int = 1 << 16) -> list[Path]:
    """Run ``protocol`` along every outcome path with nonzero probability.

    Adaptive protocols (loops) are fine as long as every path terminates
    within ``max_paths`` explored paths.
    """
    out: list[Path] = []
    stack: list[list[float]] = [[]]
    while stack:
        prefix = stack.pop()
        reg = Register(state, script=prefix)
        try:
            result = protocol(reg)
        except NeedBranch as nb:
            for ev in reversed(nb.branches):
                stack.append(prefix + [ev])
            continue
        out.append(Path(tuple(prefix), reg.probability, reg.state, result, tuple(reg.records)))
        if len(out) > max_paths:
            raise ProtocolError(f"more than {max_paths} outcome paths")
    return out


def run_sequence(reg: Register, sequence: Sequence[tuple[str, Sequence[int]]]) -> tuple[float, ...]:
    return tuple(reg.measure(name, pos) for name, pos in sequence)


def enumerate_sequence(state: StateVector, sequence) -> list[Path]:
    """Exhaustive outcome tree of a fixed (non-adaptive) measurement sequence."""
    frontier = [((), 1.0, state, ())]
    for name, pos in sequence:
        obs = builtin_observable(name)
        nxt = []
        for outs, p, st, recs in frontier:
            for ev, q, post in outcome_distribution(st, obs, pos):
                rec = MeasurementRecord(obs.name, tuple(pos), ev, q)
                nxt.append((outs + (ev,), p * q, post, recs + (rec,)))
        frontier = nxt
    return [Path(o, p, s, None, r) for o, p, s, r in frontier]


# Pauli frames ---------------------------------------------------------------

@dataclass(frozen=True)
class PauliFrame:
    """Pauli byproduct on tracked register qubits: ``op`` acts on ``qubits`` in order."""

    qubits: tuple
    op: PauliOp

    @classmethod
    def identity(cls, qubits: Sequence[int]) -> "PauliFrame":
        return cls(tuple(qubits), PauliOp.identity(len(qubits)))

    @classmethod
    def single(cls, qubit: int, op: PauliOp) -> "PauliFrame":
        return cls((qubit,), op)

    def compose(self, later: "PauliFrame") -> "PauliFrame":
        """Frame of ``later`` applied after ``self`` (matrix product later * self)."""
        if later.qubits != self.qubits:
            raise ValueError("frames act on different qubits")
        return PauliFrame(self.qubits, later.op * self.op)

    def moved_to(self, qubits: Sequence[int]) -> "PauliFrame":
        return PauliFrame(tuple(qubits), self.op)

    @property
    def is_identity(self) -> bool:
        return self.op.is_identity_up_to_phase()


def sigma(op: PauliOp, outcome: float) -> PauliOp:
    """``op ** ((1 - outcome) / 2)``."""
    return op if outcome_bit(outcome) else PauliOp.identity(op.arity)


@dataclass(frozen=True)
class ProtocolResult:
    outcomes: tuple  # MeasurementRecord values
    frame: PauliFrame
    rounds: int = 1
    destination: tuple = ()

    @property
    def outcome_values(self) -> tuple:
        return tuple(r.outcome for r in self.outcomes)


def _new_records(reg: Register, start: int) -> tuple:
    return tuple(reg.records[start:])


def _require_unentangled(reg: Register, qubits: Sequence[int], tol: float = 1e-9) -> None:
    for q in qubits:
        if single_qubit_purity(reg.state, q) < 1.0 - tol:
            raise PreconditionError(f"qubit {q} is entangled with the register")


# classical read / write -------------------------------------------------------

def classical_read(reg: Register, cell: int) -> int:
    """Z-measure and report the classical bit (1 - outcome) / 2."""
    return outcome_bit(reg.measure("Z", [cell]))


def classical_write(reg: Register, cell: int, bit: int,
                    max_rounds: int = DEFAULT_MAX_ROUNDS) -> ProtocolResult:
    """Repeat (X-measure, Z-measure) until the Z outcome encodes ``bit``.

    At least one round is always executed, even if the cell already holds ``bit``.
    """
    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    start = len(reg.records)
    for rounds in range(1, max_rounds + 1):
        reg.measure("X", [cell])
        if outcome_bit(reg.measure("Z", [cell])) == bit:
            return ProtocolResult(_new_records(reg, start), PauliFrame.identity([cell]), rounds, (cell,))
    raise RoundLimitError(f"write of {bit} did not succeed in {max_rounds} rounds")


# state transfer ---------------------------------------------------------------

def transfer_frame(o1: float, o2: float, o3: float) -> PauliOp:
    """Byproduct sigma_x^b3 sigma_z^b2 sigma_x^b1 of a state transfer."""
    return sigma(X1, o3) * sigma(Z1, o2) * sigma(X1, o1)


def state_transfer(reg: Register, src: int, dst: int, check: bool = True) -> ProtocolResult:
    """Move the state of ``src`` onto ``dst``: Z on dst, X⊗X on (dst, src), Z on src.

    ``dst`` ends in ``frame.op`` applied to the former ``src`` state and
    ``src`` is left in a Z eigenstate.
    """
    if src == dst:
        raise PreconditionError("source and destination coincide")
    if check:
        _require_unentangled(reg, [dst])
    start = len(reg.records)
    o1 = reg.measure("Z", [dst])
    o2 = reg.measure("XX", [dst, src])
    o3 = reg.measure("Z", [src])
    return ProtocolResult(_new_records(reg, start), PauliFrame.single(dst, transfer_frame(o1, o2, o3)),
                          1, (dst,))


def state_transfer_until_identity(reg: Register, src: int, dst_pool: Sequence[int],
                                  max_rounds: int = DEFAULT_MAX_ROUNDS) -> ProtocolResult:
    """Transfer repeatedly, bouncing between pool qubits, until the composed frame is trivial.

    The state moves ``src -> pool[0] -> pool[1] -> ...``; a qubit freed by a
    transfer is reused when the pool cycles round.
    """
    if not dst_pool:
        raise PreconditionError("empty destination pool")
    cycle = [q for q in dst_pool if q != src] + [src]
    start = len(reg.records)
    here = src
    op = PauliOp("I")
    for rounds in range(1, max_rounds + 1):
        nxt = cycle[(rounds - 1) % len(cycle)]
        if nxt == here:
            nxt = cycle[rounds % len(cycle)]
        res = state_transfer(reg, here, nxt, check=False)
        op = res.frame.op * op
        here = nxt
        if op.is_identity_up_to_phase():
            return ProtocolResult(_new_records(reg, start), PauliFrame.single(here, op), rounds, (here,))
    raise RoundLimitError(f"state transfer frame not trivial after {max_rounds} rounds")


# Bell measurement, Bell preparation, teleportation ---------------------------------

BELL_MEASURE_SEQUENCE = ("ZZ", "XX")


def bell_measure(reg: Register, p: int, q: int) -> ProtocolResult:
    """Z⊗Z then X⊗X on (p, q). The outcome pair names the Bell state left on (p, q).

    The frame is the Pauli P with (P ⊗ I)|Φ+> equal to the resulting state.
    """
    if p == q:
        raise PreconditionError("Bell measurement needs two distinct qubits")
    start = len(reg.records)
    zz = reg.measure("ZZ", [p, q])
    xx = reg.measure("XX", [p, q])
    return ProtocolResult(_new_records(reg, start), PauliFrame.single(p, sigma(X1, zz) * sigma(Z1, xx)),
                          1, (p, q))


def bell_prepare_frame(i, j, k, l, m, n) -> PauliOp:
    """Byproduct on (a, b, c) after the six-measurement Bell preparation.

    Acts on (|00> + |11>)/√2 ⊗ |0>. The helper ``c`` is left in |b_n>, where
    n is the outcome of its final Z measurement, independently of k.
    """
    fa = sigma(X1, k) * sigma(Z1, l) * sigma(X1, i)
    fb = sigma(X1, n) * sigma(Z1, m) * sigma(X1, j)
    fc = sigma(X1, n)
    return fa.tensor(fb).tensor(fc)


def bell_prepare_cross_tape(reg: Register, a: int, b: int, c: int) -> ProtocolResult:
    """Entangle ``a`` and ``b`` (which may not be measured jointly) through ``c``.

    Sequence: Z(a), Z(b), Z(c), X⊗X(c, a), X⊗X(c, b), Z(c).
    """
    if len({a, b, c}) != 3:
        raise PreconditionError("a, b, c must be distinct")
    start = len(reg.records)
    i = reg.measure("Z", [a])
    j = reg.measure("Z", [b])
    k = reg.measure("Z", [c])
    l = reg.measure("XX", [c, a])
    m = reg.measure("XX", [c, b])
    n = reg.measure("Z", [c])
    full = bell_prepare_frame(i, j, k, l, m, n)
    return ProtocolResult(_new_records(reg, start), PauliFrame((a, b), PauliOp(full.labels[:2])), 1, (a, b))


def teleport_frame(prep: PauliOp, bell: PauliOp) -> PauliOp:
    """Byproduct on the destination given the (a, b) preparation frame and Bell frame.

    With (a, b) in (Fa ⊗ Fb)|Φ+> = (Fa Fb^T ⊗ I)|Φ+> and the Bell measurement on
    (src, b) finding (B ⊗ I)|Φ+>, the destination holds Fa Fb^T B^T |src>
    up to phase. Transposition reverses products and leaves X, Z fixed.
    """
    fa = PauliOp(prep.labels[0])
    fb_t = PauliOp(prep.labels[1])  # X^T = X, Z^T = Z; Y^T = -Y only changes the phase
    return fa * fb_t * bell.up_to_phase()


def teleport(reg: Register, src: int, a: int, b: int, c: int, check: bool = True) -> ProtocolResult:
    """Teleport ``src`` onto ``a``: Bell-prepare (a, b) via ``c``, then Bell-measure (src, b)."""
    if len({src, a, b, c}) != 4:
        raise PreconditionError("src, a, b, c must be distinct")
    if check:
        _require_unentangled(reg, [a, b, c])
    start = len(reg.records)
    prep = bell_prepare_cross_tape(reg, a, b, c)
    bell = bell_measure(reg, src, b)
    op = teleport_frame(prep.frame.op, bell.frame.op)
    return ProtocolResult(_new_records(reg, start), PauliFrame.single(a, op), 1, (a,))


def teleport_until_identity(reg: Register, src: int, hops: Sequence[tuple[int, int, int]],
                            max_rounds: int = DEFAULT_MAX_ROUNDS) -> ProtocolResult:
    """Teleport along ``hops`` (a, b, c triples, cycled) until the composed frame is trivial."""
    start = len(reg.records)
    here = src
    op = PauliOp("I")
    for rounds in range(1, max_rounds + 1):
        a, b, c = hops[(rounds - 1) % len(hops)]
        res = teleport(reg, here, a, b, c, check=False)
        op = res.frame.op * op
        here = a
        if op.is_identity_up_to_phase():
            return ProtocolResult(_new_records(reg, start), PauliFrame.single(here, op), rounds, (here,))
    raise RoundLimitError(f"teleportation frame not trivial after {max_rounds} rounds")


def observable_conjugation_sign(name: str, frame_ops: Sequence[PauliOp]) -> int | None:
    """Sign s with F O F^dagger = s O for F the tensor of ``frame_ops``, or None.

    None means the conjugated observable is not ±O, so outcomes cannot simply be
    relabelled and the frame must be corrected first.
    """
    obs = builtin_observable(canonical_observable_name(name))
    f = np.ones((1, 1), dtype=complex)
    for op in frame_ops:
        f = np.kron(f, op.matrix())
    conj = f @ obs.matrix @ f.conj().T
    if np.allclose(conj, obs.matrix, atol=1e-12):
        return 1
    if np.allclose(conj, -obs.matrix, atol=1e-12):
        return -1
    return None


# the same protocols as machine fragments ---------------------------------------------

def write_machine(bit: int) -> "MachineSpec":
    """One-head machine (observables X, Z) writing ``bit`` under its head, then halting.

    States: ``start``; ``x`` (an X measurement was just made); ``z`` (a Z
    measurement was just made). From ``z`` the machine halts when the outcome
    encodes ``bit`` and measures X again otherwise.
    """
    from .machine import HeadSpec, TapeSpec, Transition, make_machine

    if bit not in (0, 1):
        raise ValueError("bit must be 0 or 1")
    wrong = 1.0 if bit else -1.0
    delta = {
        ("start", "init"): Transition("x", "X", (0,)),
        ("x", 1.0): Transition("z", "Z", (0,)),
        ("x", -1.0): Transition("z", "Z", (0,)),
        ("z", wrong): Transition("x", "X", (0,)),
    }
    return make_machine(observables={"X": builtin_observable("X"), "Z": builtin_observable("Z")}, delta=delta,
                        tapes=[TapeSpec("tape")], heads=[HeadSpec("h0", "tape", 0)], initial_state="start",
                        moves=[(-1,), (0,), (1,)], name=f"write-{bit}")


def transfer_machine() -> "MachineSpec":
    """Family-F fragment: move the input (infinite tape, cell 0) onto the one-qubit tape.

    Z on the finite cell, X⊗X across, Z on the source; the output head is the
    finite tape's head.
    """
    from .machine import HeadSpec, TapeSpec, Transition, make_machine

    delta = {("start", "init"): Transition("t1", "ZI", (0, 0))}
    for v in (1.0, -1.0):
        delta[("t1", v)] = Transition("t2", "XX", (0, 0))
        delta[("t2", v)] = Transition("t3", "IZ", (0, 0))
    names = ("ZI", "XX", "IZ")
    return make_machine(observables={n: builtin_observable(n) for n in names}, delta=delta,
                        tapes=[TapeSpec("finite", 1), TapeSpec("tape")],
                        heads=[HeadSpec("h0", "finite", 0), HeadSpec("h1", "tape", 0)],
                        initial_state="start", input_head="h1", output_head="h0", name="transfer")


# (name, head-0 cell, head-1 cell) on (upper, lower); src = lower 0, a = upper 0, b = upper 1, c = lower 1
_TELEPORT_PLAN = (("ZI", 0, 0), ("ZI", 1, 0), ("IZ", 1, 1), ("XX", 0, 1), ("XX", 1, 1), ("IZ", 1, 1),
                  ("ZZ", 1, 0), ("XX", 1, 0), ("IZ", 0, 1))


def teleport_machine() -> "MachineSpec":
    """Family-D fragment teleporting the input (lower tape, cell 0) to upper cell 0.

    Uses b = upper cell 1 and c = lower cell 1: Bell preparation of (a, b)
    through c, then the Bell measurement of (src, b). A last Z on c, which
    is already a Z eigenstate, only serves to bring the output head home.
    """
    from .machine import HeadSpec, TapeSpec, Transition, make_machine

    delta = {}
    prev, pos = ("start", "init"), (0, 0)
    for k, (name, c0, c1) in enumerate(_TELEPORT_PLAN):
        state = f"m{k}"
        move = (c0 - pos[0], c1 - pos[1])
        keys = [prev] if k == 0 else [(prev, 1.0), (prev, -1.0)]
        for key in keys:
            delta[key] = Transition(state, name, move)
        prev, pos = state, (c0, c1)
    names = sorted({p[0] for p in _TELEPORT_PLAN})
    return make_machine(observables={n: builtin_observable(n) for n in names}, delta=delta,
                        tapes=[TapeSpec("upper"), TapeSpec("lower")],
                        heads=[HeadSpec("h0", "upper", 0), HeadSpec("h1", "lower", 0)],
                        initial_state="start", input_head="h1", output_head="h0", name="teleport")


def fragment_frame(name: str, outcomes: Sequence[float]) -> PauliOp:
    """Byproduct on the destination implied by a fragment's outcome sequence."""
    if name == "transfer":
        return transfer_frame(*outcomes)
    if name == "teleport":
        prep = bell_prepare_frame(*outcomes[:6])
        bell = sigma(X1, outcomes[6]) * sigma(Z1, outcomes[7])
        return teleport_frame(PauliOp(prep.labels[:2]), bell)
    raise ValueError(f"unknown fragment {name!r}")


# self-checks -------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


PROTOCOL_NAMES = ("transfer", "bell-prep", "teleport", "write")


def _image_fidelity(path_state: StateVector, keep: Sequence[int], op: PauliOp, psi: StateVector) -> float:
    got = path_state.split(list(keep))[0]
    return fidelity_up_to_global_phase(got, apply_pauli(psi, op, range(op.arity)))


def _fresh(rng: np.random.Generator, n: int) -> list[StateVector]:
    return [StateVector.haar_qubit(rng) for _ in range(n)]


def check_protocol(name: str, trials: int, seed: int, tol: float = 1e-9) -> list[Check]:
    """Exhaustive path enumeration plus ``trials`` sampled runs of one protocol.

    Every trial draws from its own stream spawned from ``seed``.
    """
    if name not in PROTOCOL_NAMES:
        raise ValueError(f"unknown protocol {name!r}; choose from {', '.join(PROTOCOL_NAMES)}")
    root = np.random.SeedSequence(seed)
    setup, *streams = [np.random.default_rng(s) for s in root.spawn(trials + 1)]
    return {"transfer": _check_transfer, "bell-prep": _check_bell_prep,
            "teleport": _check_teleport, "write": _check_write}[name](setup, streams, tol)


def _summary(fids: Sequence[float], tol: float, what: str, total: int | None = None) -> Check:
    worst = min(fids) if fids else 1.0
    good = sum(f >= 1 - tol for f in fids)
    return Check(what, good == len(fids), f"{good}/{total or len(fids)} fidelity >= 1-{tol:g}, min {worst:.12f}")


def _check_transfer(setup, streams, tol):
    psi = StateVector.haar_qubit(setup)
    start = psi.tensor(StateVector.haar_qubit(setup))
    paths = enumerate_paths(lambda reg: state_transfer(reg, 0, 1), start)
    fids = [_image_fidelity(p.state, [1], p.result.frame.op, psi) for p in paths]
    mass = sum(p.probability for p in paths)
    checks = [_summary(fids, tol, "paths"),
              Check("probability", abs(mass - 1) < 1e-12, f"total {mass:.15f} over {len(paths)} paths")]
    rounds, fids = [], []
    for rng in streams:
        phi = StateVector.haar_qubit(rng)
        reg = Register(StateVector.product([phi, *_fresh(rng, 2)]), rng)
        res = state_transfer_until_identity(reg, 0, [1, 2])
        rounds.append(res.rounds)
        fids.append(_image_fidelity(reg.state, res.destination, I1, phi))
    checks.append(_summary(fids, tol, "until-identity"))
    if rounds:
        checks.append(Check("rounds", True, f"mean {np.mean(rounds):.4f} over {len(rounds)} trials"))
    return checks


def _check_bell_prep(setup, streams, tol):
    start = StateVector.product(_fresh(setup, 3))
    paths = enumerate_paths(lambda reg: bell_prepare_cross_tape(reg, 0, 1, 2), start)
    phi_plus = StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    fids = [_image_fidelity(p.state, [0, 1], p.result.frame.op, phi_plus) for p in paths]
    mass = sum(p.probability for p in paths)
    return [_summary(fids, tol, "paths", 64),
            Check("probability", abs(mass - 1) < 1e-12, f"total {mass:.15f} over {len(paths)} paths")]


def _check_teleport(setup, streams, tol):
    psi = StateVector.haar_qubit(setup)
    start = StateVector.product([psi, *_fresh(setup, 3)])
    paths = enumerate_paths(lambda reg: teleport(reg, 0, 1, 2, 3), start)
    fids = [_image_fidelity(p.state, [1], p.result.frame.op, psi) for p in paths]
    p_id = sum(p.probability for p in paths if p.result.frame.is_identity)
    checks = [_summary(fids, tol, "paths"),
              Check("identity-frame probability", abs(p_id - 0.25) < 1e-12, f"{p_id:.12f} (exact 1/4)")]
    if streams:
        hits = 0
        for rng in streams:
            reg = Register(StateVector.product([StateVector.haar_qubit(rng), *_fresh(rng, 3)]), rng)
            hits += teleport(reg, 0, 1, 2, 3).frame.is_identity
        freq = hits / len(streams)
        slack = 0.015 * max(1.0, np.sqrt(10_000 / len(streams)))  # ±0.015 at 10 000 trials
        checks.append(Check("identity-frame frequency", abs(freq - 0.25) <= slack,
                            f"{freq:.4f} over {len(streams)} trials (tolerance {slack:.4f})"))
    return checks


def _check_write(setup, streams, tol):
    checks = []
    for bit in (0, 1):
        rounds, wrong = [], 0
        for rng in streams:
            reg = Register(StateVector.haar_qubit(rng), rng)
            rounds.append(classical_write(reg, 0, bit).rounds)
            wrong += classical_read(reg, 0) != bit
        mean = float(np.mean(rounds)) if rounds else 0.0
        checks.append(Check(f"write {bit}", wrong == 0,
                            f"{len(streams) - wrong}/{len(streams)} correct, mean rounds {mean:.4f}"))
    return checks
