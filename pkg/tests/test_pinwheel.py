import numpy as np
import pytest

import oracles
from sanet import tensor as T
from sanet.pinwheel import BRANCHES, PinwheelConv, branch_geometry, pinwheel_param_count
from sanet.tensor import Tensor

F64 = np.float64


def test_zero_input_zero_output(rng):
    m = PinwheelConv(2, 8, 3, rng, dtype=F64)
    assert np.all(m(Tensor(np.zeros((1, 2, 6, 6)), dtype=F64)).data == 0)


def test_branch_impulse_strips(rng):
    k = 3
    m = PinwheelConv(1, 4, k, rng, dtype=F64)
    for name in BRANCHES:
        conv = m._children[name]
        conv.w.data[...] = 1.0
        conv.b.data[...] = 0.0
    x = np.zeros((1, 1, 9, 9))
    x[0, 0, 4, 4] = 1.0
    outs = m.branch_outputs(Tensor(x, dtype=F64))
    # an output pixel sees the impulse when the impulse lies in its one-sided window
    expect = {
        "hl": [(4, 4), (4, 5), (4, 6)],  # window extends left, so responders sit right of the impulse
        "hr": [(4, 2), (4, 3), (4, 4)],
        "vt": [(4, 4), (5, 4), (6, 4)],
        "vb": [(2, 4), (3, 4), (4, 4)],
    }
    for name, out in zip(BRANCHES, outs):
        got = sorted(map(tuple, np.argwhere(out.data[0, 0] != 0)))
        assert got == expect[name], name
        kernel, pad = branch_geometry(k)[name]
        conv = m._children[name]
        np.testing.assert_allclose(out.data, oracles.conv2d(x, conv.w.data, conv.b.data, 1, pad), atol=1e-12)


@pytest.mark.parametrize("k", [3, 5])
def test_shape_preserved(rng, k):
    m = PinwheelConv(2, 4, k, rng, dtype=F64)
    for h in range(4, 17, 3):
        for w in range(4, 17, 4):
            assert m(Tensor(rng.standard_normal((1, 2, h, w)), dtype=F64)).shape == (1, 4, h, w)


def test_forward_matches_oracle_composition(rng):
    m = PinwheelConv(3, 8, 5, rng, dtype=F64)
    for name in BRANCHES:
        m._children[name].b.data[...] = rng.standard_normal(2)
    x = rng.standard_normal((2, 3, 6, 7))
    parts = [
        oracles.conv2d(x, m._children[n].w.data, m._children[n].b.data, 1, branch_geometry(5)[n][1])
        for n in BRANCHES
    ]
    cat = np.concatenate(parts, axis=1)
    ref = oracles.conv2d(cat, m.fuse.w.data, None)
    np.testing.assert_allclose(m(Tensor(x, dtype=F64)).data, ref, atol=1e-11)


def test_param_count_closed_form(rng):
    for cin, cout, k in [(1, 16, 3), (16, 16, 5), (8, 32, 3)]:
        assert PinwheelConv(cin, cout, k, rng).num_parameters() == pinwheel_param_count(cin, cout, k)


def test_rejects_bad_config(rng):
    with pytest.raises(ValueError, match="divisible by 4"):
        PinwheelConv(1, 6, 3, rng)
    with pytest.raises(ValueError, match="odd"):
        PinwheelConv(1, 8, 4, rng)
    m = PinwheelConv(2, 4, 3, rng)
    with pytest.raises(ValueError, match="input channels"):
        m(Tensor(np.zeros((1, 3, 5, 5))))
