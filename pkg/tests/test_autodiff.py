import numpy as np
import pytest
import scipy.sparse as sp

from nhgcn.autodiff import Adam, Tape, TapeError, backward, glorot, grad_check


def _fd_check(build, params, tol, probes=30):
    def fn(p):
        tape = Tape()
        out = build(tape, {k: tape.param(k, v) for k, v in p.items()})
        return out.value.item(), tape.backward(out)

    return grad_check(fn, params, probes=probes, seed=1) < tol


def test_spmm_examples():
    t = Tape()
    x = t.const(np.array([[1.0], [2.0]]))
    assert np.array_equal(t.spmm(sp.identity(2, format="csr"), x).value, x.value)
    assert np.array_equal(t.spmm(sp.csr_matrix((2, 2)), x).value, np.zeros((2, 1)))
    swap = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert t.spmm(swap, x).value.tolist() == [[2.0], [1.0]]
    with pytest.raises(ValueError):
        t.spmm(sp.identity(3, format="csr"), x)


def test_forward_ops():
    t = Tape()
    assert t.relu(t.const(np.array([[-1.0, 0.0, 2.0]]))).value.tolist() == [[0, 0, 2]]
    np.testing.assert_allclose(t.row_softmax(t.const(np.zeros((2, 4)))).value, 0.25)
    np.testing.assert_allclose(t.scalar_softmax(t.const(np.zeros(3))).value, [1 / 3] * 3)
    m = t.maximum([t.const(np.array([[1.0, 5.0]])), t.const(np.array([[3.0, 2.0]]))])
    assert m.value.tolist() == [[3.0, 5.0]]
    c = t.concat_cols([t.const(np.ones((2, 1))), t.const(np.zeros((2, 2)))])
    assert c.shape == (2, 3)


@pytest.mark.filterwarnings("ignore:overflow")
def test_non_finite_rejected():
    t = Tape()
    with pytest.raises(FloatingPointError):
        t.const(np.array([np.nan]))
    x = t.param("x", np.array([[1e308]]))
    with pytest.raises(FloatingPointError):
        t.matmul(x, t.const(np.array([[10.0]])))


def test_softmax_rows_sum_to_one(rng):
    t = Tape()
    y = t.row_softmax(t.const(rng.normal(scale=20, size=(50, 7)))).value
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
    a = t.scalar_softmax(t.const(rng.normal(scale=5, size=3))).value
    assert np.all(a > 0) and abs(a.sum() - 1) < 1e-12


def test_dropout_eval_identity_and_mean(rng):
    t = Tape()
    x = t.const(np.ones((100, 100)))
    assert t.dropout(x, 0.7, False, None) is x
    y = t.dropout(x, 0.3, True, np.random.default_rng(0)).value
    # 10^4 entries, each an independent draw with mean 1
    assert abs(y.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        t.dropout(x, 1.0, True, rng)


def test_linear_gradient_is_column_sums(rng):
    X = rng.normal(size=(6, 4))
    W = rng.normal(size=(4, 3))
    t = Tape()
    w = t.param("W", W)
    xw = t.matmul(t.const(X), w)
    loss = t.add([t.const(np.zeros((6, 3))), xw])
    total = t.matmul(t.matmul(t.const(np.ones((1, 6))), loss), t.const(np.ones((3, 1))))
    g = t.backward(total)["W"]
    np.testing.assert_allclose(g, np.repeat(X.sum(axis=0)[:, None], 3, axis=1), atol=1e-12)


def test_unused_param_gets_zero_grad():
    t = Tape()
    w = t.param("W", np.ones((2, 2)))
    t.param("unused", np.ones(3))
    out = t.matmul(t.matmul(t.const(np.ones((1, 2))), w), t.const(np.ones((2, 1))))
    g = t.backward(out)
    assert np.array_equal(g["unused"], np.zeros(3))


def test_relu_negative_zero_grad():
    t = Tape()
    x = t.param("x", np.array([[-1.0, 2.0]]))
    out = t.matmul(t.relu(x), t.const(np.ones((2, 1))))
    assert t.backward(out)["x"].tolist() == [[0.0, 1.0]]


def test_backward_without_forward():
    with pytest.raises(TapeError):
        backward(None, None)
    t = Tape()
    x = t.param("x", np.ones((1, 1)))
    out = t.matmul(x, x)
    t.backward(out)
    with pytest.raises(TapeError):
        t.backward(out)


def test_grad_check_linear(rng):
    X = rng.normal(size=(5, 3))
    ok = _fd_check(
        lambda t, p: t.matmul(t.matmul(t.const(np.ones((1, 5))), t.matmul(t.const(X), p["W"])),
                              t.const(np.ones((2, 1)))),
        {"W": rng.normal(size=(3, 2))}, 1e-9)
    assert ok


def test_grad_check_tanh_network(rng):
    X = rng.normal(size=(8, 4))
    Y = np.eye(3)[rng.integers(0, 3, size=8)]

    def build(t, p):
        h = t.tanh(t.matmul(t.const(X), p["W1"]))
        return t.trace_nll(t.row_softmax(t.matmul(h, p["W2"])), Y)

    assert _fd_check(build, {"W1": rng.normal(size=(4, 5)), "W2": rng.normal(size=(5, 3))}, 1e-5)


def test_grad_check_combiner_ops(rng):
    A = sp.random(6, 6, density=0.4, random_state=1, format="csr")
    X = rng.normal(size=(6, 3))
    Y = np.eye(2)[rng.integers(0, 2, size=6)]

    def build(t, p):
        x = t.const(X)
        a = t.relu(t.spmm(A, t.matmul(x, p["W1"])))
        b = t.tanh(t.matmul(x, p["W2"]))
        al = t.scalar_softmax(p["alpha"])
        h = t.concat_cols([t.add([t.scale(a, al, 0), t.scale(b, al, 1)]), t.maximum([a, b])])
        return t.trace_nll(t.row_softmax(t.matmul(h, p["Wo"])), Y)

    params = {"W1": rng.normal(size=(3, 4)), "W2": rng.normal(size=(3, 4)),
              "alpha": rng.normal(size=2), "Wo": rng.normal(size=(8, 2))}
    assert _fd_check(build, params, 1e-6)


def test_dropout_mask_replayed_in_backward():
    t = Tape()
    x = t.param("x", np.ones((4, 4)))
    y = t.dropout(x, 0.5, True, np.random.default_rng(3))
    out = t.matmul(t.matmul(t.const(np.ones((1, 4))), y), t.const(np.ones((4, 1))))
    g = t.backward(out)["x"]
    np.testing.assert_array_equal(g, y.value)


def test_adam_first_step_is_lr():
    for g in (0.3, 7.0, -2.0):
        opt = Adam(lr=0.01)
        out = opt.step({"w": np.array([1.0])}, {"w": np.array([g])})
        assert out["w"][0] - 1.0 == pytest.approx(-0.01 * np.sign(g), rel=1e-6)


def test_adam_zero_grad_and_sign_symmetry(rng):
    p = {"w": rng.normal(size=(3, 2))}
    assert np.array_equal(Adam(lr=0.1).step(p, {"w": np.zeros((3, 2))})["w"], p["w"])
    g = rng.normal(size=(3, 2))
    a, b = Adam(lr=0.1), Adam(lr=0.1)
    for _ in range(3):
        da = a.step(p, {"w": g})["w"] - p["w"]
        db = b.step(p, {"w": -g})["w"] - p["w"]
        np.testing.assert_allclose(da, -db, atol=1e-15)
    with pytest.raises(ValueError):
        Adam().step(p, {"w": np.zeros(2)})


def test_adam_weight_decay_is_l2_gradient():
    a = Adam(lr=0.1, weight_decay=0.5)
    b = Adam(lr=0.1)
    p = {"w": np.array([2.0, -1.0])}
    g = np.array([0.1, 0.2])
    np.testing.assert_array_equal(a.step(p, {"w": g})["w"], b.step(p, {"w": g + 0.5 * p["w"]})["w"])


def test_glorot_bounds(rng):
    w = glorot(rng, 30, 20)
    assert w.shape == (30, 20) and np.abs(w).max() <= np.sqrt(6 / 50)
