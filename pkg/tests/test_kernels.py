"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvnad import _fallback, kernels
from mvnad.photometric import standard_rig

ext = pytest.importorskip("mvnad._ext")


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**63 - 1), st.integers(0, 300))
@settings(max_examples=50, deadline=None)
def test_pcg32_parity(state, inc, n):
    inc = inc * 2 + 1
    a, sa = ext.pcg32_fill(state, inc, n)
    b, sb = _fallback.pcg32_fill(state, inc, n)
    assert sa == sb
    assert np.array_equal(np.asarray(a), np.asarray(b))


@given(st.integers(1, 24), st.integers(1, 24), st.floats(0.1, 0.9), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_label_components_parity(h, w, density, seed):
    mask = np.random.default_rng(seed).random((h, w)) < density
    la, na = ext.label_components(mask)
    lb, nb = _fallback.label_components(mask)
    assert na == nb
    assert np.array_equal(np.asarray(la), np.asarray(lb))


@pytest.mark.parametrize("trim", [0, 1])
def test_ps_solve_parity(trim):
    rng = np.random.default_rng(trim)
    lights = standard_rig(6).directions
    stack = rng.random((6, 500))
    ga, ra = ext.ps_solve(lights, stack, trim)
    gb, rb = _fallback.ps_solve(lights, stack, trim)
    assert np.allclose(ga, gb, rtol=0, atol=1e-12)
    assert np.allclose(ra, rb, rtol=0, atol=1e-12)
