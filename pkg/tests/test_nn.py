import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpnet import nn
from qpnet.exceptions import FormatError, GraphError, InputRangeError, ShapeError
from qpnet.nn import ops
from qpnet.nn.checkpoint import dumps_checkpoint, loads_checkpoint
from qpnet.nn.gradcheck import relative_error
from qpnet.nn.tensor import make_result

TOL = 1e-4


def _param(rng, *shape, scale=1.0):
    return nn.Parameter(rng.normal(scale=scale, size=shape))


def _dot(out, r):
    """Scalar ``<out, r>`` for a fixed random direction ``r``."""
    return make_result(np.array(np.sum(out.data * r)), [out], lambda g: [g * r])


def max_error(report):
    return max(report.values())


# ----------------------------------------------------------------- oracles


def loop_dilated_tap(x, d, wc, wp, segment=None):
    c_out, length = wc.shape[0], x.shape[1]
    seg = length if segment is None else segment
    out = np.zeros((c_out, length))
    for t in range(length):
        dt = d if np.isscalar(d) else d[t]
        out[:, t] = wc @ x[:, t]
        if t % seg - dt >= 0:
            out[:, t] += wp @ x[:, t - dt]
    return out


def test_dilated_tap_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 24))
    wc, wp = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    d_var = rng.integers(1, 7, size=24)
    for d, seg in ((2, None), (3, 8), (d_var, None), (d_var, 12)):
        got = ops.dilated_tap(x, d, wc, wp, seg).data
        assert np.allclose(got, loop_dilated_tap(x, d, wc, wp, seg), atol=1e-13)


def test_conv1x1_and_gate_forward():
    rng = np.random.default_rng(1)
    x, w, b = rng.normal(size=(3, 4)), rng.normal(size=(2, 3)), rng.normal(size=2)
    assert np.allclose(ops.conv1x1(x, w, b).data, w @ x + b[:, None])
    xf, xg, hf, hg = (rng.normal(size=(2, 5)) for _ in range(4))
    expected = np.tanh(xf + hf) / (1 + np.exp(-(xg + hg)))
    assert np.allclose(ops.gated_unit(xf, xg, hf, hg).data, expected, atol=1e-14)
    stacked = ops.gated_halves(np.concatenate([xf + hf, xg + hg])).data
    assert np.allclose(stacked, expected, atol=1e-14)


def test_softmax_cross_entropy_value_and_grad():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 4))
    targets = np.array([0, 5, 2, 2])
    loss, grad = ops.softmax_cross_entropy(logits, targets)
    p = np.exp(logits) / np.exp(logits).sum(axis=0)
    assert loss == pytest.approx(-np.mean(np.log(p[targets, range(4)])), abs=1e-12)
    onehot = np.zeros_like(p)
    onehot[targets, range(4)] = 1
    assert np.allclose(grad, (p - onehot) / 4, atol=1e-14)
    assert ops.softmax_cross_entropy(np.zeros((256, 3)), np.array([1, 2, 3]))[0] == pytest.approx(np.log(256))


def test_cross_entropy_rejects_bad_targets():
    with pytest.raises(InputRangeError):
        ops.softmax_cross_entropy(np.zeros((4, 2)), np.array([0, 4]))
    with pytest.raises(ShapeError):
        ops.softmax_cross_entropy(np.zeros((4, 2)), np.array([0]))


def test_onehot_conv_matches_dense():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 7))
    idx = np.array([3, -1, 0, 6, 3])
    dense = np.zeros((7, 5))
    for t, i in enumerate(idx):
        if i >= 0:
            dense[i, t] = 1
    assert np.allclose(ops.onehot_conv(idx, w).data, w @ dense)


def test_shape_errors():
    with pytest.raises(ShapeError):
        ops.conv1x1(np.zeros((3, 4)), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        ops.dilated_tap(np.zeros((3, 4)), np.array([1, 2]), np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(InputRangeError):
        ops.dilated_tap(np.zeros((3, 4)), 0, np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        ops.add(np.zeros(3), np.zeros(4))


# ------------------------------------------------------------ gradients


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(2, 9), st.booleans(), st.integers(0, 2**31))
def test_dilated_tap_gradients(c_in, c_out, length, varying, seed):
    rng = np.random.default_rng(seed)
    x, wc, wp = _param(rng, c_in, length), _param(rng, c_out, c_in), _param(rng, c_out, c_in)
    d = rng.integers(1, length + 1, size=length) if varying else int(rng.integers(1, length + 1))
    r = rng.normal(size=(c_out, length))
    report = nn.check_gradients(lambda: _dot(ops.dilated_tap(x, d, wc, wp), r), [x, wc, wp])
    assert max_error(report) < TOL


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_conv1x1_gradients(c_in, c_out, length, seed):
    rng = np.random.default_rng(seed)
    x, w, b = _param(rng, c_in, length), _param(rng, c_out, c_in), _param(rng, c_out)
    r = rng.normal(size=(c_out, length))
    assert max_error(nn.check_gradients(lambda: _dot(ops.conv1x1(x, w, b), r), [x, w, b])) < TOL


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_gated_unit_gradients(channels, length, seed):
    rng = np.random.default_rng(seed)
    ins = [_param(rng, channels, length) for _ in range(4)]
    r = rng.normal(size=(channels, length))
    assert max_error(nn.check_gradients(lambda: _dot(ops.gated_unit(*ins), r), ins)) < TOL
    z = _param(rng, 2 * channels, length)
    assert max_error(nn.check_gradients(lambda: _dot(ops.gated_halves(z), r), [z])) < TOL


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 8), st.integers(1, 6), st.integers(0, 2**31))
def test_cross_entropy_gradients(n_classes, length, seed):
    rng = np.random.default_rng(seed)
    logits = _param(rng, n_classes, length, scale=2.0)
    targets = rng.integers(0, n_classes, size=length)
    assert max_error(nn.check_gradients(lambda: ops.cross_entropy(logits, targets), [logits])) < TOL


def test_composite_graph_gradients():
    rng = np.random.default_rng(5)
    w = _param(rng, 3, 5)
    tap_c, tap_p = _param(rng, 6, 3), _param(rng, 6, 3)
    head = _param(rng, 5, 3)
    idx = rng.integers(-1, 5, size=10)
    d = rng.integers(1, 4, size=10)
    targets = rng.integers(0, 5, size=10)

    def fn():
        h = ops.onehot_conv(idx, w)
        z = ops.gated_halves(ops.dilated_tap(h, d, tap_c, tap_p, segment=5))
        out = ops.relu(ops.add(h, z))
        return ops.cross_entropy(ops.conv1x1(ops.tanh(out), head), targets)

    assert max_error(nn.check_gradients(fn, [w, tap_c, tap_p, head])) < TOL


def test_weighted_squared_error_gradient():
    rng = np.random.default_rng(6)
    pred = _param(rng, 3, 4)
    target, inv_var = rng.normal(size=(3, 4)), rng.uniform(0.5, 2, 3)
    loss = ops.weighted_squared_error(pred, target, inv_var)
    assert float(loss.data) == pytest.approx(0.5 * np.sum(inv_var[:, None] * (pred.data - target) ** 2) / 4)
    report = nn.check_gradients(lambda: ops.weighted_squared_error(pred, target, inv_var), [pred])
    assert max_error(report) < TOL


def test_relative_error_helper():
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


# ------------------------------------------------------------- tape


def test_backward_requires_recorded_graph():
    with pytest.raises(GraphError):
        nn.backward(nn.Tensor(np.ones(2)))


def test_no_grad_skips_recording():
    p = nn.Parameter(np.ones((2, 2)))
    with nn.no_grad():
        out = ops.conv1x1(np.ones((2, 3)), p)
    assert out.backward_fn is None and not out.requires_grad


def test_gradients_accumulate_over_shared_use():
    p = nn.Parameter(np.array([[2.0]]))
    out = ops.add(ops.conv1x1(np.ones((1, 1)), p), ops.conv1x1(np.ones((1, 1)), p))
    nn.backward(out)
    assert p.grad[0, 0] == 2.0


def test_frozen_parameter_gets_no_gradient():
    p = nn.Parameter(np.ones((1, 1)), trainable=False)
    q = nn.Parameter(np.ones((1, 1)))
    nn.backward(ops.add(ops.conv1x1(np.ones((1, 1)), p), ops.conv1x1(np.ones((1, 1)), q)))
    assert p.grad[0, 0] == 0.0 and q.grad[0, 0] == 1.0


# ------------------------------------------------------------- Adam


def test_adam_first_step_magnitude():
    p = nn.Parameter(np.array([0.0, 0.0]))
    opt = nn.Adam([p], lr=1e-3)
    p.grad = np.array([0.5, -3.0])
    opt.step()
    assert np.allclose(p.data, [-1e-3, 1e-3], rtol=1e-6)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(7)
    p = nn.Parameter(rng.normal(size=3))
    ref = p.data.copy()
    m = v = np.zeros(3)
    opt = nn.Adam([p], lr=0.01)
    for t in range(1, 6):
        g = rng.normal(size=3)
        p.grad = g
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p.data, ref, atol=1e-15)


def test_adam_zero_lr_and_frozen_are_exact():
    p = nn.Parameter(np.array([1.0]))
    q = nn.Parameter(np.array([1.0]), trainable=False)
    opt = nn.Adam([p, q], lr=0.0)
    p.grad = q.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == 1.0 and q.data[0] == 1.0
    nn.adam_step(opt, lr=0.1)
    assert p.data[0] < 1.0 and q.data[0] == 1.0


def test_adam_minimizes_quadratic():
    p = nn.Parameter(np.array([3.0, -2.0]))
    opt = nn.Adam([p], lr=0.1)
    for _ in range(500):
        p.grad = 2 * p.data
        opt.step()
    assert np.all(np.abs(p.data) < 1e-2)


# -------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5]), "scalar": np.array(2.0)}
    path = tmp_path / "m.qpw"
    nn.save_checkpoint(path, {"kind": "x", "n": 1}, arrays)
    assert path.read_bytes()[:4] == b"QPW1"
    desc, back = nn.load_checkpoint(path)
    assert desc == {"kind": "x", "n": 1}
    for k, v in arrays.items():
        assert np.array_equal(back[k], v) and back[k].shape == v.shape


def test_checkpoint_rejects_corruption():
    blob = dumps_checkpoint({"k": 1}, {"w": np.ones((2, 2))})
    with pytest.raises(FormatError):
        loads_checkpoint(b"QPW0" + blob[4:])
    with pytest.raises(FormatError):
        loads_checkpoint(blob[:-1])
    with pytest.raises(FormatError):
        loads_checkpoint(blob + b"\0")
