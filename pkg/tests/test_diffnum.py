import numpy as np
import pytest

from mbec import diffnum as dn
from mbec.diffnum import MLP, Adam, LSTMCell, ParamSet, Tensor


def test_square_loss_value_and_gradient():
    ps = ParamSet()
    w = ps.add("w", np.array(3.0))
    loss = dn.forward_backward(lambda: dn.square(w), ps)
    assert loss == 9.0
    assert float(w.grad) == 6.0


def test_identity_difference_has_zero_gradient():
    ps = ParamSet()
    w = ps.add("w", np.array([1.0, -2.0, 0.5]))
    loss = dn.forward_backward(lambda: dn.sum(dn.square(dn.sub(w, w))), ps)
    assert loss == 0.0
    np.testing.assert_array_equal(w.grad, 0.0)


def test_tanh_net_matches_finite_differences(rng):
    net = MLP([4, 6, 3], rng, hidden_act="tanh")
    x = rng.standard_normal((5, 4))
    y = rng.standard_normal((5, 3))
    err = dn.finite_difference_check(lambda: dn.squared_error(net(x), y), net.params)
    assert err < 1e-6


def test_lstm_cell_loss_matches_finite_differences(rng):
    cell = LSTMCell(3, 4, rng)
    x = rng.standard_normal((2, 3))
    h0 = rng.standard_normal((2, 4))
    c0 = rng.standard_normal((2, 4))
    target = rng.standard_normal((2, 4))

    def loss():
        h, c = cell(x, h0, c0)
        h2, _ = cell(x, h, c)
        return dn.squared_error(h2, target)

    assert dn.finite_difference_check(loss, cell.params) < 1e-6


def test_fused_lstm_matches_composed_ops(rng):
    cell = LSTMCell(3, 5, rng)
    x = rng.standard_normal((4, 3))
    h0 = rng.standard_normal((4, 5))
    c0 = rng.standard_normal((4, 5))
    h1, c1 = cell(x, h0, c0)
    h2, c2 = dn.lstm_cell_composed(x, h0, c0, cell.w, cell.b)
    np.testing.assert_allclose(h1.data, h2.data, atol=1e-14)
    np.testing.assert_allclose(c1.data, c2.data, atol=1e-14)
    hp, cp = cell.predict(x, h0, c0)
    np.testing.assert_allclose(hp, h1.data, atol=1e-14)
    np.testing.assert_allclose(cp, c1.data, atol=1e-14)


def test_quadratic_gradcheck_is_tight(rng):
    ps = ParamSet()
    w = ps.add("w", rng.standard_normal(5))
    assert dn.finite_difference_check(lambda: dn.sum(dn.square(w)), ps) < 1e-9


def test_constant_loss_gradcheck_is_zero():
    ps = ParamSet()
    ps.add("w", np.ones(3))
    assert dn.finite_difference_check(lambda: Tensor(np.array(2.5)), ps) == 0.0


def test_adam_zero_gradient_leaves_params():
    ps = ParamSet()
    w = ps.add("w", np.array([1.0, 2.0]))
    w.grad = np.zeros(2)
    Adam(ps, 0.1).step()
    np.testing.assert_array_equal(w.data, [1.0, 2.0])


def test_adam_first_step_is_lr_in_size():
    ps = ParamSet()
    w = ps.add("w", np.array(0.0))
    w.grad = np.array(1.0)
    Adam(ps, 0.1).step()
    assert float(w.data) == pytest.approx(-0.1, abs=1e-6)


def test_adam_constant_positive_gradient_decreases_monotonically():
    ps = ParamSet()
    w = ps.add("w", np.array(5.0))
    opt = Adam(ps, 0.01)
    prev = 5.0
    for _ in range(50):
        w.grad = np.array(0.7)
        opt.step()
        assert float(w.data) < prev
        prev = float(w.data)


def test_shape_mismatch_raises_before_running():
    with pytest.raises(dn.ShapeError):
        dn.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(dn.ShapeError):
        dn.squared_error(np.ones((2, 1)), np.ones((2, 2)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_is_reported():
    ps = ParamSet()
    w = ps.add("w", np.array([1e308]))
    with pytest.raises(dn.NonFiniteError):
        dn.mul(w, np.array([1e10]))


def test_no_grad_skips_graph():
    ps = ParamSet()
    w = ps.add("w", np.ones(2))
    with dn.no_grad():
        out = dn.sum(dn.square(w))
    assert out._parents == ()


def test_checkpoint_round_trip(tmp_path, rng):
    net = MLP([3, 4, 2], rng)
    dn.save_params(tmp_path / "p.bin", net.params)
    other = MLP([3, 4, 2], np.random.default_rng(99))
    dn.load_params(tmp_path / "p.bin", other.params)
    for name in net.params.names():
        np.testing.assert_array_equal(net.params[name].data, other.params[name].data)


def test_checkpoint_rejects_bad_file(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    with pytest.raises(dn.CheckpointError):
        dn.load_arrays(bad)


def test_float32_mode_runs():
    dn.set_default_dtype(np.float32)
    try:
        t = dn.Tensor([1.0, 2.0])
        assert t.data.dtype == np.float32
    finally:
        dn.set_default_dtype(np.float64)
