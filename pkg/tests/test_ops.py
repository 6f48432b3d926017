import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from maunet import ops
from maunet.errors import ConfigError, DataError, DimensionError, UsageError
from maunet.gradcheck import gradcheck
from maunet.tensor import Tensor


def probe_sum(out, rng):
    return ops.sum(ops.mul(out, Tensor(rng.standard_normal(out.shape))))


# conv2d -------------------------------------------------------------------


def test_conv_counts_overlapping_ones():
    out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), Tensor([0.0]), 1, 1).data[0, 0]
    assert out[1, 1] == 9
    assert out[0, 1] == out[1, 0] == out[1, 2] == out[2, 1] == 6
    assert out[0, 0] == out[0, 2] == out[2, 0] == out[2, 2] == 4


def test_conv_centered_delta_is_identity(rng):
    x = Tensor(rng.standard_normal((2, 1, 5, 7)))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(x, Tensor(k), None, 1, 1).data, x.data)


def test_conv_is_cross_correlation():
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0
    k = np.arange(9.0).reshape(1, 1, 3, 3)
    out = ops.conv2d(Tensor(x), Tensor(k), None, 1, 1).data
    # input impulse at (0,0) lands on output (1,1) through kernel tap (0,0)
    assert out[0, 0, 1, 1] == k[0, 0, 0, 0]
    assert out[0, 0, 0, 0] == k[0, 0, 1, 1]


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-6), (np.float64, 1e-12)])
def test_conv_matches_loop_oracle(rng, dtype, tol):
    x = rng.standard_normal((2, 3, 8, 8)).astype(dtype)
    w = rng.standard_normal((4, 3, 3, 3)).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    for stride, pad, xin in ((1, 1, x), (1, 0, x), (2, 1, np.pad(x, ((0, 0), (0, 0), (0, 1), (0, 1))))):
        got = ops.conv2d(Tensor(xin), Tensor(w), Tensor(b), stride, pad).data
        assert oracles.rel_err(got, oracles.conv2d(xin, w, b, stride, pad)) <= tol


def test_conv_errors():
    x = Tensor(np.ones((1, 2, 8, 8)))
    with pytest.raises(DimensionError, match="axis C"):
        ops.conv2d(x, Tensor(np.ones((1, 3, 3, 3))))
    with pytest.raises(ConfigError, match="odd"):
        ops.conv2d(x, Tensor(np.ones((1, 2, 2, 2))))
    with pytest.raises(ConfigError, match="axis H"):
        ops.conv2d(x, Tensor(np.ones((1, 2, 3, 3))), None, stride=2, padding=1)
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.ones((2, 8, 8))), Tensor(np.ones((1, 2, 3, 3))))


def test_conv_gradcheck(rng):
    inputs = {"x": Tensor(rng.standard_normal((2, 3, 9, 9))), "w": Tensor(rng.standard_normal((4, 3, 3, 3))),
              "b": Tensor(rng.standard_normal(4))}
    probe = rng.standard_normal((2, 4, 5, 5))
    fn = lambda p: ops.sum(ops.mul(ops.conv2d(p["x"], p["w"], p["b"], 2, 1), Tensor(probe)))
    report = gradcheck(fn, inputs, tol=1e-4)
    assert report.passed, str(report)


# max_pool2d ---------------------------------------------------------------


def test_maxpool_examples():
    assert ops.max_pool2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2).data.tolist() == [[[[4.0]]]]
    const = ops.max_pool2d(Tensor(np.full((1, 2, 4, 6), 3.5)), 2).data
    assert const.shape == (1, 2, 2, 3) and (const == 3.5).all()


def test_maxpool_matches_scan_oracle(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    np.testing.assert_array_equal(ops.max_pool2d(Tensor(x), 2).data, oracles.max_pool2d(x, 2))


def test_maxpool_tie_routes_to_first():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    from maunet.tensor import Tape, backward

    with Tape() as tape:
        loss = ops.sum(ops.max_pool2d(x, 2))
    assert backward(tape, loss)[x.id].tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]


def test_maxpool_indivisible():
    with pytest.raises(ConfigError):
        ops.max_pool2d(Tensor(np.ones((1, 1, 5, 4))), 2)


def test_maxpool_gradcheck(rng):
    probe = rng.standard_normal((2, 3, 4, 4))
    fn = lambda p: ops.sum(ops.mul(ops.max_pool2d(p["x"], 2), Tensor(probe)))
    assert gradcheck(fn, {"x": Tensor(rng.standard_normal((2, 3, 8, 8)))}).passed


# bilinear_upsample --------------------------------------------------------


@given(h=st.integers(1, 5), w=st.integers(1, 5), fh=st.integers(0, 6), fw=st.integers(0, 6),
       c=st.floats(-10, 10, allow_nan=False))
@settings(max_examples=40, deadline=None)
def test_upsample_preserves_constants(h, w, fh, fw, c):
    out = ops.bilinear_upsample(Tensor(np.full((1, 2, h, w), c)), h + fh, w + fw).data
    np.testing.assert_allclose(out, c, rtol=1e-12, atol=1e-12)


def test_upsample_same_size_is_identity(rng):
    x = rng.standard_normal((2, 3, 5, 4)).astype(np.float32)
    np.testing.assert_array_equal(ops.bilinear_upsample(Tensor(x), 5, 4).data, x)


def test_upsample_2x2_to_4x4_closed_form():
    grid = np.array([[0.0, 2.0], [4.0, 6.0]])
    out = ops.bilinear_upsample(Tensor(grid[None, None]), 4, 4).data[0, 0]
    # source coordinate (d + 0.5) / 2 - 0.5 -> -0.25, 0.25, 0.75, 1.25, clamped to [0, 1]
    src = [0.0, 0.25, 0.75, 1.0]
    expected = np.array([[grid[0, 0] * (1 - sy) * (1 - sx) + grid[0, 1] * (1 - sy) * sx
                          + grid[1, 0] * sy * (1 - sx) + grid[1, 1] * sy * sx for sx in src] for sy in src])
    np.testing.assert_allclose(out, expected, atol=1e-6)
    np.testing.assert_allclose(out, oracles.bilinear(grid[None, None], 4, 4)[0, 0], atol=1e-12)
    assert out[0].tolist() == [0.0, 0.5, 1.5, 2.0]


def test_upsample_rejects_downsampling():
    with pytest.raises(ConfigError):
        ops.bilinear_upsample(Tensor(np.ones((1, 1, 4, 4))), 2, 4)


def test_upsample_gradcheck(rng):
    probe = rng.standard_normal((2, 2, 11, 8))
    fn = lambda p: ops.sum(ops.mul(ops.bilinear_upsample(p["x"], 11, 8), Tensor(probe)))
    assert gradcheck(fn, {"x": Tensor(rng.standard_normal((2, 2, 3, 4)))}).passed


# softmax ------------------------------------------------------------------


def test_softmax_examples():
    np.testing.assert_array_equal(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = ops.softmax(Tensor([1000.0, 0.0])).data
    assert abs(out[0] - 1.0) <= 1e-12 and abs(out[1]) <= 1e-12


def test_softmax_matches_f64_oracle(rng):
    x = rng.standard_normal((6, 9)).astype(np.float32) * 3
    got = ops.softmax(Tensor(x), axis=-1).data
    assert np.abs(got - oracles.softmax_rows(x)).max() <= 1e-6
    assert (got > 0).all()
    np.testing.assert_allclose(got.sum(axis=-1), 1.0, atol=1e-6)


def test_softmax_axis_checked():
    with pytest.raises(DimensionError):
        ops.softmax(Tensor(np.ones((2, 2))), axis=2)


def test_softmax_gradcheck(rng):
    probe = rng.standard_normal((3, 5, 2))
    fn = lambda p: ops.sum(ops.mul(ops.softmax(p["x"], axis=1), Tensor(probe)))
    assert gradcheck(fn, {"x": Tensor(rng.standard_normal((3, 5, 2)))}).passed


# layer_norm ---------------------------------------------------------------


def _ln(x, axes=(1, 2, 3)):
    shape = tuple(x.shape[a] for a in axes)
    return ops.layer_norm(Tensor(x), axes, Tensor(np.ones(shape)), Tensor(np.zeros(shape)))


def test_layernorm_centers(rng):
    x = rng.standard_normal((3, 4, 2, 2))
    x = x - x.mean(axis=(1, 2, 3), keepdims=True) + 5.0
    out = _ln(x).data
    assert np.abs(out.mean(axis=(1, 2, 3))).max() <= 1e-6


def test_layernorm_constant_slice_is_zero():
    out = _ln(np.full((2, 3, 1, 1), 7.25)).data
    np.testing.assert_array_equal(out, 0.0)


def test_layernorm_matches_two_pass_oracle(rng):
    x = rng.standard_normal((5, 6)) * 2 + 1
    gain, off = rng.standard_normal(6), rng.standard_normal(6)
    got = ops.layer_norm(Tensor(x), (1,), Tensor(gain), Tensor(off)).data
    assert oracles.rel_err(got, oracles.layer_norm_rows(x, gain, off)) <= 1e-12


def test_layernorm_errors():
    with pytest.raises(DimensionError):
        ops.layer_norm(Tensor(np.ones((2, 3))), (1,), Tensor(np.ones(2)), Tensor(np.zeros(3)))
    with pytest.raises(ConfigError):
        ops.layer_norm(Tensor(np.ones((2, 0))), (1,), Tensor(np.ones(0)), Tensor(np.zeros(0)))


def test_layernorm_gradcheck(rng):
    inputs = {"x": Tensor(rng.standard_normal((2, 4, 3, 1))), "g": Tensor(rng.standard_normal((4, 3))),
              "o": Tensor(rng.standard_normal((4, 3)))}
    probe = rng.standard_normal((2, 4, 3, 1))
    fn = lambda p: ops.sum(ops.mul(ops.layer_norm(p["x"], (1, 2), p["g"], p["o"]), Tensor(probe)))
    assert gradcheck(fn, inputs).passed


# matmul -------------------------------------------------------------------


def test_matmul_examples(rng):
    m = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(ops.matmul(Tensor(np.eye(4)), Tensor(m)).data, m)
    row, col = rng.standard_normal((1, 5)), rng.standard_normal((5, 1))
    assert ops.matmul(Tensor(row), Tensor(col)).data[0, 0] == pytest.approx((row @ col).item(), rel=1e-15)
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((5, 3))
    assert oracles.rel_err(ops.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a, b)) <= 1e-12


def test_matmul_errors():
    with pytest.raises(DimensionError, match="inner"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(DimensionError, match="batch"):
        ops.matmul(Tensor(np.ones((2, 2, 3))), Tensor(np.ones((3, 3, 1))))


def test_matmul_gradcheck(rng):
    inputs = {"a": Tensor(rng.standard_normal((2, 4, 3))), "b": Tensor(rng.standard_normal((2, 3, 5)))}
    probe = rng.standard_normal((2, 4, 5))
    assert gradcheck(lambda p: ops.sum(ops.mul(ops.matmul(p["a"], p["b"]), Tensor(probe))), inputs).passed


# pointwise and structural ops -------------------------------------------


def test_pointwise_examples():
    assert ops.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5
    assert ops.sigmoid(Tensor([-1000.0, 1000.0])).data.tolist() == [0.0, 1.0]


def test_relu_subgradient_at_zero_is_zero():
    from maunet.tensor import Tape, backward

    x = Tensor([0.0, 1.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.sum(ops.relu(x))
    assert backward(tape, loss)[x.id].tolist() == [0.0, 1.0]


def test_concat_round_trip(rng):
    a, b = rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((1, 3, 4, 4))
    cat = ops.concat([Tensor(a), Tensor(b)], axis=1)
    assert cat.shape == (1, 5, 4, 4)
    np.testing.assert_array_equal(ops.take(cat, 1, 0, 2).data, a)
    np.testing.assert_array_equal(ops.take(cat, 1, 2, 5).data, b)


def test_no_general_broadcasting():
    with pytest.raises(DimensionError):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((1, 3))))
    with pytest.raises(DimensionError):
        ops.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
    # 0-d scalars are the one exception
    assert ops.mul(Tensor(np.ones((2, 3))), Tensor(2.0)).data.sum() == 12.0


def test_structural_errors():
    with pytest.raises(UsageError):
        ops.concat([])
    with pytest.raises(DimensionError):
        ops.concat([Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 2, 4, 5)))], axis=1)
    with pytest.raises(DimensionError):
        ops.reshape(Tensor(np.ones(6)), (4, 2))
    with pytest.raises(DimensionError):
        ops.transpose(Tensor(np.ones((2, 3))), (0, 0))
    with pytest.raises(DimensionError):
        ops.expand(Tensor(np.ones((2, 3))), (4, 3))


@pytest.mark.parametrize(
    "build",
    [
        lambda p: ops.relu(p["x"]),
        lambda p: ops.sigmoid(p["x"]),
        lambda p: ops.add(p["x"], p["y"]),
        lambda p: ops.mul(p["x"], p["y"]),
        lambda p: ops.mul(p["x"], p["s"]),
        lambda p: ops.add(p["s"], p["x"]),
        lambda p: ops.scale(p["x"], -1.7),
        lambda p: ops.concat([p["x"], p["y"]], axis=1),
        lambda p: ops.take(p["x"], 2, 1, 3),
        lambda p: ops.reshape(p["x"], (2, 12)),
        lambda p: ops.transpose(p["x"], (2, 0, 1)),
        lambda p: ops.expand(ops.take(p["x"], 1, 0, 1), (2, 3, 4)),
        lambda p: ops.subsample2d(ops.reshape(p["x"], (1, 2, 3, 4)), 2),
        lambda p: ops.mean(p["x"]),
    ],
    ids=["relu", "sigmoid", "add", "mul", "mul_scalar", "add_scalar", "scale", "concat", "take", "reshape",
         "transpose", "expand", "subsample", "mean"],
)
def test_pointwise_gradcheck(build, rng):
    inputs = {"x": Tensor(rng.standard_normal((2, 3, 4))), "y": Tensor(rng.standard_normal((2, 3, 4))),
              "s": Tensor(0.8)}
    seed_probe = np.random.default_rng(5)
    fn = lambda p: probe_sum(build(p), np.random.default_rng(5))
    report = gradcheck(fn, inputs, tol=1e-6)
    assert report.passed, str(report)


# binary cross-entropy -----------------------------------------------------


def test_bce_uniform_half_is_ln2():
    n, h, w = 3, 5, 7
    loss = ops.binary_cross_entropy(Tensor(np.full((n, 1, h, w), 0.5)), np.ones((n, 1, h, w)), "sum").item()
    assert abs(loss - n * h * w * math.log(2)) <= 1e-6 * n * h * w * math.log(2)


def test_bce_matches_scalar_loop(rng):
    pre = rng.uniform(0.01, 0.99, size=(1, 1, 3, 3))
    gt = (rng.uniform(size=(1, 1, 3, 3)) > 0.5).astype(float)
    for red in ("sum", "mean"):
        got = ops.binary_cross_entropy(Tensor(pre), gt, red).item()
        assert got == pytest.approx(oracles.bce(pre, gt, red), rel=1e-12)


def test_bce_rejects_non_binary_target():
    with pytest.raises(DataError):
        ops.binary_cross_entropy(Tensor(np.full((1, 1, 2, 2), 0.5)), np.full((1, 1, 2, 2), 0.3))
