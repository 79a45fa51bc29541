import numpy as np
import pytest

import oracles
from sanet.safm import SAFM, fusion_weights
from sanet.tensor import Tensor

F64 = np.float64


def _pair(rng, c=3, h=7, w=8, n=1):
    return rng.standard_normal((n, c, h, w)), rng.standard_normal((n, c, h, w))


def safm_oracle(e, d, m: SAFM, lam):
    """Straight-line transcription of the fusion equations in float64."""
    x = np.concatenate([e, d], axis=1)
    pooled = np.concatenate([x.mean(axis=1, keepdims=True), x.max(axis=1, keepdims=True)], axis=1)
    saf = oracles.conv2d(pooled, m.conv7.w.data, m.conv7.b.data, 1, (3, 3, 3, 3))
    y = e * oracles.sigmoid(saf) + d * oracles.sigmoid(1 - saf)
    lifted = oracles.conv2d(y, m.conv1.w.data, m.conv1.b.data)
    return lam * (lifted * x) + x


def test_lambda_zero_is_concat(rng):
    m = SAFM(3, rng, dtype=F64)
    assert m.lam.item() == 0.0
    e, d = _pair(rng)
    out = m(Tensor(e, dtype=F64), Tensor(d, dtype=F64)).data
    assert np.array_equal(out, np.concatenate([e, d], axis=1))


def test_zero_saf_weights(rng):
    m = SAFM(2, rng, dtype=F64)
    m.conv7.w.data[...] = 0
    m.lam.data[...] = 1.0
    m.conv1.w.data[...] = 0
    m.conv1.b.data[...] = 0
    saf = m.attention_map(Tensor(rng.standard_normal((1, 4, 7, 7)), dtype=F64))
    we, wd = fusion_weights(saf)
    assert np.all(we.data == 0.5)
    np.testing.assert_allclose(wd.data, 0.7311, atol=1e-4)


def test_matches_equation_oracle(rng):
    m = SAFM(3, rng, dtype=F64)
    m.lam.data[...] = 1.0
    m.conv7.b.data[...] = 0.3
    m.conv1.b.data[...] = rng.standard_normal(6)
    e, d = _pair(rng, n=2)
    got = m(Tensor(e, dtype=F64), Tensor(d, dtype=F64)).data
    np.testing.assert_allclose(got, safm_oracle(e, d, m, 1.0), rtol=0, atol=1e-6)


def test_no_residual_and_fixed_lambda(rng):
    e, d = _pair(rng)
    fixed = SAFM(3, np.random.default_rng(0), lambda_learnable=False, dtype=F64)
    assert fixed.lam.item() == 1.0
    assert "lambda" not in dict(fixed.named_parameters())
    ref = safm_oracle(e, d, fixed, 1.0)
    np.testing.assert_allclose(fixed(Tensor(e, dtype=F64), Tensor(d, dtype=F64)).data, ref, atol=1e-12)
    nores = SAFM(3, np.random.default_rng(0), residual=False, dtype=F64)
    x = np.concatenate([e, d], axis=1)
    np.testing.assert_allclose(
        nores(Tensor(e, dtype=F64), Tensor(d, dtype=F64)).data, ref - x, atol=1e-12
    )


def test_weight_symmetry_at_half(rng):
    saf = Tensor(np.full((1, 1, 3, 3), 0.5), dtype=F64)
    we, wd = fusion_weights(saf)
    assert np.array_equal(we.data, wd.data)


def test_monotone_weighting(rng):
    s = np.sort(rng.standard_normal(50))
    we, wd = fusion_weights(Tensor(s.reshape(1, 1, 5, 10), dtype=F64))
    assert np.all(np.diff(we.data.ravel()) >= 0)
    assert np.all(np.diff(wd.data.ravel()) <= 0)


def test_shape_errors(rng):
    m = SAFM(3, rng, dtype=F64)
    with pytest.raises(ValueError, match="equal"):
        m(Tensor(np.zeros((1, 3, 7, 7)), dtype=F64), Tensor(np.zeros((1, 3, 8, 7)), dtype=F64))
    with pytest.raises(ValueError, match="channels"):
        m(Tensor(np.zeros((1, 2, 7, 7)), dtype=F64), Tensor(np.zeros((1, 2, 7, 7)), dtype=F64))
    with pytest.raises(ValueError, match=">= 7"):
        m(Tensor(np.zeros((1, 3, 6, 7)), dtype=F64), Tensor(np.zeros((1, 3, 6, 7)), dtype=F64))


def test_param_shapes(rng):
    shapes = {k: v.shape for k, v in SAFM(5, rng).named_parameters()}
    assert shapes == {
        "conv7.w": (1, 2, 7, 7), "conv7.b": (1,), "conv1.w": (10, 5, 1, 1), "conv1.b": (10,), "lambda": (),
    }
