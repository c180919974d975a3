"""Dense state vectors, observables, Pauli operators and projective measurement.

Basis ordering: qubit 0 is the leftmost tensor factor, i.e. the most
significant bit of the basis index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .kernels import apply_local, norm_sq

NORM_TOL = 1e-10
MERGE_TOL = 1e-9
PROB_FLOOR = 1e-12
MAX_QUBITS = 14


class ValidationError(ValueError):
    """Bad arguments to a quantum-core operation."""


class EntangledError(ValueError):
    """A subsystem that was expected to be pure is entangled with the rest."""


I2 = np.eye(2, dtype=complex)
X2 = np.array([[0, 1], [1, 0]], dtype=complex)
Y2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z2 = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI_MATRICES = {"I": I2, "X": X2, "Y": Y2, "Z": Z2}


class StateVector:
    """Normalized amplitude vector over ``num_qubits`` qubits. Immutable."""

    __slots__ = ("num_qubits", "amplitudes")

    def __init__(self, amplitudes, *, normalize: bool = False):
        amps = np.array(amplitudes, dtype=np.complex128).reshape(-1)
        dim = amps.shape[0]
        n = dim.bit_length() - 1
        if dim < 1 or (1 << n) != dim:
            raise ValidationError(f"amplitude count {dim} is not a power of two")
        if n > MAX_QUBITS:
            raise ValidationError(f"{n} qubits exceeds the {MAX_QUBITS}-qubit limit")
        norm = math.sqrt(norm_sq(amps))
        if normalize:
            if norm < PROB_FLOOR:
                raise ValidationError("cannot normalize the zero vector")
            amps = amps / norm
        elif abs(norm - 1.0) > NORM_TOL:
            raise ValidationError(f"state is not normalized (norm {norm!r})")
        amps.setflags(write=False)
        self.num_qubits = n
        self.amplitudes = amps

    # constructors -----------------------------------------------------
    @classmethod
    def basis(cls, bits: str | Sequence[int]) -> "StateVector":
        bits = [int(b) for b in bits]
        n = len(bits)
        amps = np.zeros(1 << n, dtype=complex)
        index = 0
        for b in bits:
            if b not in (0, 1):
                raise ValidationError(f"bad basis bit {b!r}")
            index = (index << 1) | b
        amps[index] = 1.0
        return cls(amps)

    @classmethod
    def zeros(cls, n: int) -> "StateVector":
        return cls.basis([0] * n)

    @classmethod
    def product(cls, factors: Iterable["StateVector"]) -> "StateVector":
        out = np.ones(1, dtype=complex)
        for f in factors:
            out = np.kron(out, f.amplitudes)
        return cls(out, normalize=True)

    @classmethod
    def haar_qubit(cls, rng: np.random.Generator) -> "StateVector":
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        return cls(v, normalize=True)

    # basic algebra ----------------------------------------------------
    def __len__(self) -> int:
        return self.amplitudes.shape[0]

    def __repr__(self) -> str:
        return f"StateVector(num_qubits={self.num_qubits})"

    def tensor(self, other: "StateVector") -> "StateVector":
        return StateVector(np.kron(self.amplitudes, other.amplitudes), normalize=True)

    def permute(self, order: Sequence[int]) -> "StateVector":
        """New state whose qubit ``i`` is this state's qubit ``order[i]``."""
        psi = self.amplitudes.reshape((2,) * self.num_qubits)
        return StateVector(np.transpose(psi, list(order)).reshape(-1))

    def block_matrix(self, keep: Sequence[int]) -> np.ndarray:
        """Amplitudes reshaped to (2^|keep|, rest) with ``keep`` as row qubits."""
        keep = list(keep)
        rest = [q for q in range(self.num_qubits) if q not in keep]
        psi = self.amplitudes.reshape((2,) * self.num_qubits)
        return np.transpose(psi, keep + rest).reshape(1 << len(keep), -1)

    def block_purity(self, keep: Sequence[int]) -> float:
        s = np.linalg.svd(self.block_matrix(keep), compute_uv=False)
        return float(np.sum(s ** 4))

    def split(self, keep: Sequence[int], tol: float = 1e-9) -> tuple["StateVector", "StateVector"]:
        """Factor into (state of ``keep``, state of the rest), ``keep`` order preserved.

        Raises EntangledError when the block purity is below ``1 - tol``.
        """
        keep = list(keep)
        _check_positions(keep, self.num_qubits)
        if len(keep) == self.num_qubits:
            return self.permute(keep), StateVector([1.0])
        u, s, vh = np.linalg.svd(self.block_matrix(keep), full_matrices=False)
        purity = float(np.sum(s ** 4))
        if purity < 1.0 - tol:
            raise EntangledError(f"qubits {keep} are entangled with the rest (purity {purity:.12f})")
        return StateVector(u[:, 0], normalize=True), StateVector(vh[0, :], normalize=True)

    def discard(self, qubits: Sequence[int], tol: float = 1e-9) -> "StateVector":
        keep = [q for q in range(self.num_qubits) if q not in set(qubits)]
        return self.split(keep, tol)[0]


@dataclass(frozen=True, eq=False)
class Observable:
    name: str
    arity: int
    matrix: np.ndarray
    spectrum: tuple  # ((eigenvalue, projector), ...) eigenvalue descending

    def eigenvalues(self) -> tuple[float, ...]:
        return tuple(ev for ev, _ in self.spectrum)

    def projector(self, eigenvalue: float) -> np.ndarray:
        for ev, proj in self.spectrum:
            if abs(ev - eigenvalue) <= MERGE_TOL:
                return proj
        raise ValidationError(f"{eigenvalue!r} is not an eigenvalue of {self.name}")


@dataclass(frozen=True)
class MeasurementRecord:
    observable_name: str
    qubit_positions: tuple
    outcome: float
    probability: float


def spectral_decompose(matrix) -> list[tuple[float, np.ndarray]]:
    """Eigenvalue/projector pairs of a Hermitian matrix, eigenvalues descending.

    Eigenvalues closer than 1e-9 share one projector.
    """
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("matrix must be square")
    if not np.allclose(m, m.conj().T, atol=NORM_TOL, rtol=0):
        raise ValidationError("matrix is not Hermitian")
    w, v = np.linalg.eigh(m)
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    groups: list[list[int]] = []
    for idx, ev in enumerate(w):
        if groups and abs(w[groups[-1][0]] - ev) <= MERGE_TOL:
            groups[-1].append(idx)
        else:
            groups.append([idx])
    out = []
    for g in groups:
        ev = float(np.mean(w[g]))
        # snap to integers: the builtin observables have exact integer spectra
        if abs(ev - round(ev)) <= MERGE_TOL:
            ev = float(round(ev))
        cols = v[:, g]
        proj = cols @ cols.conj().T
        proj = np.ascontiguousarray(proj)
        proj.setflags(write=False)
        out.append((ev, proj))
    return out


def make_observable(name: str, matrix) -> Observable:
    m = np.ascontiguousarray(np.asarray(matrix, dtype=complex))
    dim = m.shape[0]
    arity = dim.bit_length() - 1
    if (1 << arity) != dim:
        raise ValidationError("observable dimension must be a power of two")
    m.setflags(write=False)
    return Observable(name, arity, m, tuple(spectral_decompose(m)))


def _tensor_string_matrix(labels: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in labels:
        out = np.kron(out, PAULI_MATRICES[ch])
    return out


def canonical_observable_name(name: str) -> str:
    """Strip tensor symbols and whitespace: ``"X⊗I"`` -> ``"XI"``."""
    return name.replace("⊗", "").replace("*", "").replace(" ", "").upper()


_SPECIAL = {
    "XX+YX": (np.kron(X2, X2) + np.kron(Y2, X2)) / math.sqrt(2),
    "XX+XY": (np.kron(X2, X2) + np.kron(X2, Y2)) / math.sqrt(2),
}
_BUILTIN_CACHE: dict[str, Observable] = {}


def builtin_observable(name: str) -> Observable:
    """Look up a named observable.

    Recognized names are tensor strings over ``IXYZ`` of length 1 or 2 and
    the two non-Pauli observables ``XX+YX`` = (X⊗X + Y⊗X)/√2 and
    ``XX+XY`` = (X⊗X + X⊗Y)/√2.
    """
    key = canonical_observable_name(name)
    obs = _BUILTIN_CACHE.get(key)
    if obs is not None:
        return obs
    if key in _SPECIAL:
        obs = make_observable(key, _SPECIAL[key])
    elif 1 <= len(key) <= 2 and all(ch in "IXYZ" for ch in key):
        obs = make_observable(key, _tensor_string_matrix(key))
    else:
        raise KeyError(f"unknown observable {name!r}")
    _BUILTIN_CACHE[key] = obs
    return obs


def _check_positions(positions: Sequence[int], num_qubits: int) -> None:
    if len(set(positions)) != len(positions):
        raise ValidationError(f"repeated position in {tuple(positions)}")
    for p in positions:
        if not 0 <= p < num_qubits:
            raise ValidationError(f"position {p} out of range for {num_qubits} qubits")


def _check_measurement(state: StateVector, obs: Observable, positions: Sequence[int]) -> tuple:
    positions = tuple(int(p) for p in positions)
    if obs.arity != len(positions):
        raise ValidationError(f"{obs.name} has arity {obs.arity} but {len(positions)} positions were given")
    _check_positions(positions, state.num_qubits)
    return positions


def outcome_distribution(state: StateVector, obs: Observable, positions: Sequence[int]):
    """All possible outcomes as ``(eigenvalue, probability, post_state)``.

    Outcomes with probability below 1e-12 are omitted.
    """
    positions = _check_measurement(state, obs, positions)
    out = []
    for ev, proj in obs.spectrum:
        vec = apply_local(state.amplitudes, state.num_qubits, proj, positions)
        p = norm_sq(vec)
        if p < PROB_FLOOR:
            continue
        out.append((ev, p, StateVector(vec / math.sqrt(p))))
    return out


def project(state: StateVector, obs: Observable, positions: Sequence[int], eigenvalue: float):
    """Force the outcome ``eigenvalue``; returns ``(probability, post_state)``."""
    positions = _check_measurement(state, obs, positions)
    proj = obs.projector(eigenvalue)
    vec = apply_local(state.amplitudes, state.num_qubits, proj, positions)
    p = norm_sq(vec)
    if p < PROB_FLOOR:
        raise ValidationError(f"outcome {eigenvalue:+g} of {obs.name} has probability {p:.3g}")
    return p, StateVector(vec / math.sqrt(p))


def measure(state: StateVector, obs: Observable, positions: Sequence[int],
            rng: np.random.Generator) -> tuple[MeasurementRecord, StateVector]:
    positions = tuple(int(p) for p in positions)
    branches = outcome_distribution(state, obs, positions)
    r = rng.random()
    acc = 0.0
    chosen = branches[-1]
    for br in branches:
        acc += br[1]
        if r < acc:
            chosen = br
            break
    ev, p, post = chosen
    return MeasurementRecord(obs.name, positions, ev, p), post


def single_qubit_purity(state: StateVector, position: int) -> float:
    """Tr(rho^2) of the reduced state of one qubit; 1 iff it is unentangled."""
    _check_positions([position], state.num_qubits)
    m = state.block_matrix([position])
    rho = m @ m.conj().T
    return float(np.real(np.trace(rho @ rho)))


def fidelity_up_to_global_phase(a: StateVector, b: StateVector) -> float:
    if a.num_qubits != b.num_qubits:
        raise ValidationError("dimension mismatch")
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes))))


# Pauli operators ---------------------------------------------------------

# single-qubit products: (a, b) -> (phase exponent of i, label)
_PAULI_TABLE = {
    ("I", "I"): (0, "I"), ("I", "X"): (0, "X"), ("I", "Y"): (0, "Y"), ("I", "Z"): (0, "Z"),
    ("X", "I"): (0, "X"), ("X", "X"): (0, "I"), ("X", "Y"): (1, "Z"), ("X", "Z"): (3, "Y"),
    ("Y", "I"): (0, "Y"), ("Y", "X"): (3, "Z"), ("Y", "Y"): (0, "I"), ("Y", "Z"): (1, "X"),
    ("Z", "I"): (0, "Z"), ("Z", "X"): (1, "Y"), ("Z", "Y"): (3, "X"), ("Z", "Z"): (0, "I"),
}
_BITS = {"I": (0, 0), "X": (1, 0), "Z": (0, 1), "Y": (1, 1)}
_FROM_BITS = {v: k for k, v in _BITS.items()}


@dataclass(frozen=True)
class PauliOp:
    """``i**phase_exponent`` times a tensor product of single-qubit Paulis."""

    labels: str
    phase_exponent: int = 0

    def __post_init__(self):
        if any(ch not in "IXYZ" for ch in self.labels):
            raise ValidationError(f"bad Pauli labels {self.labels!r}")
        object.__setattr__(self, "phase_exponent", self.phase_exponent % 4)

    @classmethod
    def identity(cls, n: int = 1) -> "PauliOp":
        return cls("I" * n)

    @classmethod
    def from_bits(cls, x: int, z: int) -> "PauliOp":
        """Single-qubit Pauli X^x Z^z, up to phase."""
        return cls(_FROM_BITS[(x & 1, z & 1)])

    @property
    def arity(self) -> int:
        return len(self.labels)

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        if self.arity != other.arity:
            raise ValidationError("Pauli arity mismatch")
        phase = self.phase_exponent + other.phase_exponent
        labels = []
        for a, b in zip(self.labels, other.labels):
            k, lab = _PAULI_TABLE[(a, b)]
            phase += k
            labels.append(lab)
        return PauliOp("".join(labels), phase)

    def tensor(self, other: "PauliOp") -> "PauliOp":
        return PauliOp(self.labels + other.labels, self.phase_exponent + other.phase_exponent)

    def matrix(self) -> np.ndarray:
        return (1j ** self.phase_exponent) * _tensor_string_matrix(self.labels)

    def bits(self) -> tuple[tuple[int, int], ...]:
        return tuple(_BITS[ch] for ch in self.labels)

    def is_identity_up_to_phase(self) -> bool:
        return set(self.labels) <= {"I"}

    def up_to_phase(self) -> "PauliOp":
        return PauliOp(self.labels)

    def __str__(self) -> str:
        prefix = ("", "i", "-", "-i")[self.phase_exponent]
        return prefix + self.labels


def apply_pauli(state: StateVector, pauli: PauliOp, positions: Sequence[int]) -> StateVector:
    """Apply a Pauli tensor. Test-oracle and bookkeeping use only."""
    positions = tuple(int(p) for p in positions)
    if pauli.arity != len(positions):
        raise ValidationError("Pauli arity does not match positions")
    _check_positions(positions, state.num_qubits)
    vec = apply_local(state.amplitudes, state.num_qubits,
                      np.ascontiguousarray(pauli.matrix()), positions)
    return StateVector(vec, normalize=True)


def apply_unitary(state: StateVector, matrix, positions: Sequence[int]) -> StateVector:
    """Apply a dense unitary. Test-oracle use only."""
    positions = tuple(int(p) for p in positions)
    _check_positions(positions, state.num_qubits)
    m = np.ascontiguousarray(np.asarray(matrix, dtype=complex))
    return StateVector(apply_local(state.amplitudes, state.num_qubits, m, positions), normalize=True)


def outcome_bit(outcome: float) -> int:
    """Classical bit of a ±1 outcome: (1 - outcome) / 2."""
    return 0 if outcome > 0 else 1
