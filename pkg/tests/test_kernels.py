import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from goalgeom import _kernels
from goalgeom.matrixcore import _max_sweeps, _tol

compiled = pytest.importorskip("goalgeom._jacobi", reason="compiled extension not built")


def run_both(stack, accumulate):
    out = []
    for fn in (compiled.jacobi_orthogonalize, _kernels.jacobi_orthogonalize_py):
        w = np.array(stack, order="C")
        p = w.shape[1]
        q = np.tile(np.eye(p), (w.shape[0], 1, 1)) if accumulate \
            else np.empty((w.shape[0], 0, 0))
        sweeps = fn(w, q, accumulate, _tol(w.shape[2]), _max_sweeps(p))
        out.append((w, q, sweeps))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 12), st.integers(0, 2**32 - 1))
def test_backends_agree(b, p, extra, seed):
    stack = np.random.default_rng(seed).standard_normal((b, p, p + extra))
    (wc, qc, sc), (wp, qp, sp) = run_both(stack, True)
    assert sc > 0 and sp > 0
    norms_c = np.sort(np.linalg.norm(wc, axis=2), axis=1)
    norms_p = np.sort(np.linalg.norm(wp, axis=2), axis=1)
    np.testing.assert_allclose(norms_c, norms_p, atol=1e-10)
    for w, q in ((wc, qc), (wp, qp)):
        # rows end up mutually orthogonal and q tracks the same rotation
        gram = np.einsum("bij,bkj->bik", w, w)
        off = gram - np.einsum("bii->bi", gram)[:, :, None] * np.eye(p)
        assert np.abs(off).max() <= 1e-10 * max(1.0, np.abs(gram).max())
        np.testing.assert_allclose(q @ stack, w, atol=1e-10)


def test_zero_rows_skipped():
    stack = np.zeros((2, 3, 4))
    stack[1, 0, 0] = 1.0
    for w, _, sweeps in run_both(stack, False):
        assert sweeps == 1
        np.testing.assert_array_equal(w, stack)


def test_nonconvergence_flag():
    stack = np.random.default_rng(0).standard_normal((3, 4, 6))
    for fn in (compiled.jacobi_orthogonalize, _kernels.jacobi_orthogonalize_py):
        w = np.array(stack, order="C")
        assert fn(w, np.empty((3, 0, 0)), False, 1e-300, 1) == -1


def test_backend_selection_env():
    code = "from goalgeom import _kernels; print(_kernels.BACKEND)"
    env_out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                             env={"GOALGEOM_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert env_out.stdout.strip() == "python"
    assert _kernels.BACKEND in ("cython", "python")
