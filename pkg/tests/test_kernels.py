import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fblab import _purepy, kernels
from fblab.baselines import TBCC


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 9))
def test_viterbi_backends_agree(seed, steps):
    rng = np.random.default_rng(seed)
    nxt, _ = TBCC.tables()
    branch = rng.standard_normal((3, steps, 64, 2))
    assert np.array_equal(_purepy.viterbi_tailbiting(branch, nxt), kernels.viterbi_tailbiting(branch, nxt))


def test_viterbi_ties_are_deterministic():
    nxt, _ = TBCC.tables()
    branch = np.zeros((2, 6, 64, 2))
    for impl in (_purepy.viterbi_tailbiting, kernels.viterbi_tailbiting):
        assert np.array_equal(impl(branch, nxt), np.zeros((2, 6), dtype=np.uint8))


def test_predecessor_table_rejects_non_binary_trellis():
    with pytest.raises(ValueError):
        _purepy._predecessors(np.zeros((4, 2), dtype=np.int64))
