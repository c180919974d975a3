"""Pure numpy versions of the state-vector kernels."""

import numpy as np


def apply_local(state, num_qubits, op, positions):
    k = len(positions)
    if op.shape != (1 << k, 1 << k):
        raise ValueError("operator shape does not match positions")
    if k == 0:
        return state * op[0, 0]
    psi = state.reshape((2,) * num_qubits)
    tensor = op.reshape((2,) * (2 * k))
    moved = np.tensordot(tensor, psi, axes=(list(range(k, 2 * k)), list(positions)))
    # tensordot puts the k output axes first
    moved = np.moveaxis(moved, list(range(k)), list(positions))
    return np.ascontiguousarray(moved).reshape(-1)


def norm_sq(state):
    return float(np.vdot(state, state).real)
