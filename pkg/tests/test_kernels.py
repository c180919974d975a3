import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mqtm import _fallback, kernels

from . import oracle

compiled = pytest.importorskip("mqtm._kernels")


@st.composite
def local_ops(draw):
    n = draw(st.integers(1, 7))
    k = draw(st.integers(1, min(n, 3)))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pos = tuple(int(p) for p in rng.permutation(n)[:k])
    state = np.ascontiguousarray(rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n))
    op = np.ascontiguousarray(rng.normal(size=(1 << k, 1 << k)) + 1j * rng.normal(size=(1 << k, 1 << k)))
    return n, pos, state, op


@given(local_ops())
def test_backends_agree(case):
    n, pos, state, op = case
    a = compiled.apply_local(state, n, op, pos)
    b = _fallback.apply_local(state, n, op, pos)
    assert np.allclose(a, b, atol=1e-12)
    assert compiled.norm_sq(state) == pytest.approx(_fallback.norm_sq(state), rel=1e-12)


@given(local_ops())
def test_fallback_matches_dense_embedding(case):
    n, pos, state, op = case
    if n > 5:
        return
    assert np.allclose(_fallback.apply_local(state, n, op, pos), oracle.embed(op, pos, n) @ state, atol=1e-10)


def test_shape_mismatch_is_rejected():
    state = np.ones(4, dtype=complex)
    op = np.eye(2, dtype=complex)
    for impl in (compiled, _fallback):
        with pytest.raises(ValueError):
            impl.apply_local(state, 2, op, (0, 1))


def test_compiled_backend_selected_by_default():
    assert kernels.BACKEND == "cython"


def test_environment_forces_fallback():
    code = "from mqtm import kernels; print(kernels.BACKEND)"
    env = {**os.environ, "MQTM_PURE_PYTHON": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
