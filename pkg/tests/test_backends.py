import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdrec import _pykernels

_kernels = pytest.importorskip("gdrec._kernels")


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_pair_counts_agree(n, s, seed):
    rng = np.random.default_rng(seed)
    codes = rng.integers(0, 6, size=(n, s)).astype(np.int8)
    weights = rng.integers(1, 4, size=s).astype(np.int64)
    assert np.array_equal(_kernels.pair_counts_all(codes, weights),
                          _pykernels.pair_counts_all(codes, weights))


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 14), st.integers(0, 2**32 - 1))
def test_nj_joins_agree(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 4))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    d = 0.5 * (d + d.T)
    cj, cf, cw = _kernels.nj_joins(d)
    pj, pf, pw = _pykernels.nj_joins(d)
    assert [j[:3] for j in cj] == [j[:3] for j in pj]
    assert np.allclose([j[3:] for j in cj], [j[3:] for j in pj], rtol=1e-12, atol=1e-14)
    assert cf[:2] == pf[:2] and cf[2] == pytest.approx(pf[2], rel=1e-12, abs=1e-14)
    assert [w[:2] for w in cw] == [w[:2] for w in pw]


def test_nj_ties_break_identically():
    d = np.ones((5, 5)) - np.eye(5)
    assert _kernels.nj_joins(d)[0] == _pykernels.nj_joins(d)[0]


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    env.pop("GDREC_PURE_PYTHON", None)
    if flag:
        env["GDREC_PURE_PYTHON"] = flag
    out = subprocess.run([sys.executable, "-c", "from gdrec import _backend; print(_backend.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_backend_selection():
    assert _backend_in_subprocess(None) == "compiled"
    assert _backend_in_subprocess("1") == "python"
