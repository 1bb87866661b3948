"""Gradient checks and optimizer contracts for the numpy autodiff engine."""

import numpy as np
import pytest

from autodiff import ops
from autodiff.checkpoint import load_checkpoint, save_checkpoint
from autodiff.gradcheck import gradcheck
from autodiff.module import LayerNorm, Linear
from autodiff.optim import SGD, Adam, build_optimizer
from autodiff.tensor import Parameter, Tape, Tensor, backward, no_grad
from errors import CheckpointError, NonFiniteError, NonScalarLoss, ShapeMismatch

TOL = 1e-6


def param(rng, *shape, positive=False):
    value = rng.normal(size=shape)
    return Parameter(np.abs(value) + 0.5 if positive else value)


@pytest.fixture
def rng():
    return np.random.default_rng(3)


def test_elementwise_grads(rng):
    a, b = param(rng, 3, 4), param(rng, 4)
    c = param(rng, 3, 4, positive=True)
    assert gradcheck(lambda: ops.sum_(ops.add(a, b) * ops.sub(a, b)), [a, b]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.div(a, c)), [a, c]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.neg(ops.mul(a, a))), [a]) < TOL


def test_matmul_and_shapes_grads(rng):
    a, b = param(rng, 2, 3, 4), param(rng, 4, 5)
    assert gradcheck(lambda: ops.sum_(ops.tanh(ops.matmul(a, b))), [a, b]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.transpose(a, (0, 2, 1)) * rng_fixed(4, 3)), [a]) < TOL
    assert gradcheck(lambda: ops.mean(ops.reshape(a, (6, 4)) * rng_fixed(6, 4)), [a]) < TOL


def rng_fixed(*shape):
    return Tensor(np.random.default_rng(11).normal(size=shape))


def test_concat_slice_grads(rng):
    a, b = param(rng, 2, 3), param(rng, 2, 2)
    weights = rng_fixed(2, 5)
    assert gradcheck(lambda: ops.sum_(ops.concat([a, b], axis=-1) * weights), [a, b]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.sigmoid(ops.slice_(a, (slice(None), slice(1, 3))))), [a]) < TOL


def test_softmax_family_grads(rng):
    x = param(rng, 3, 5)
    weights = rng_fixed(3, 5)
    assert gradcheck(lambda: ops.sum_(ops.softmax(x) * weights), [x]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.log_softmax(x) * weights), [x]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.exp(x) * weights), [x]) < TOL


def test_log_relu_clip_grads(rng):
    p = param(rng, 4, 3, positive=True)
    assert gradcheck(lambda: ops.sum_(ops.log(p)), [p]) < TOL
    x = Parameter(np.array([[-1.0, 0.5, 2.0], [0.3, -0.2, 1.5]]))
    assert gradcheck(lambda: ops.sum_(ops.relu(x) * rng_fixed(2, 3)), [x]) < TOL
    assert gradcheck(lambda: ops.sum_(ops.clip(x, -0.5, 1.0) * rng_fixed(2, 3)), [x]) < TOL


def test_layer_norm_grads(rng):
    x = param(rng, 2, 3, 6)
    gamma, beta = param(rng, 6), param(rng, 6)
    weights = rng_fixed(2, 3, 6)
    assert gradcheck(lambda: ops.sum_(ops.layer_norm(x, gamma, beta) * weights), [x, gamma, beta]) < 1e-5


def test_embedding_lookup_grad(rng):
    table = param(rng, 7, 4)
    ids = np.array([[1, 3, 3], [0, 6, 1]])
    assert gradcheck(lambda: ops.sum_(ops.tanh(ops.embedding_lookup(table, ids))), [table]) < TOL
    with Tape() as tape:
        loss = ops.sum_(ops.embedding_lookup(table, ids))
    table.zero_grad()
    backward(loss, tape)
    assert table.grad[3].tolist() == [2.0] * 4
    assert table.grad[2].tolist() == [0.0] * 4


def test_linear_layer_grad(rng):
    layer = Linear(4, 3, rng)
    x = param(rng, 5, 4)
    assert gradcheck(lambda: ops.sum_(ops.tanh(layer(x))), [x, layer.weight, layer.bias]) < TOL


def test_softmax_rows_sum_to_one(rng):
    x = Tensor(rng.normal(size=(4, 9)) * 30)
    assert np.allclose(ops.softmax(x).value.sum(axis=-1), 1.0, atol=1e-9)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.normal(size=(5, 16)) * 4 + 3)
    y = LayerNorm(16)(x).value
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-6)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_matmul_identity(rng):
    a = rng.normal(size=(4, 4))
    assert np.array_equal(ops.matmul(Tensor(np.eye(4)), Tensor(a)).value, a)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeMismatch):
        ops.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_non_finite_is_reported():
    with pytest.raises(NonFiniteError):
        ops.log(Tensor(np.zeros(2)))


def test_sum_gradient_is_ones():
    p = Parameter(np.array([0.5, -1.0, 2.0]))
    with Tape() as tape:
        loss = ops.sum_(p)
    backward(loss, tape)
    assert p.grad.tolist() == [1.0, 1.0, 1.0]


def test_square_gradient_is_two_p():
    p = Parameter(np.array([0.5, -1.0, 2.0]))
    with Tape() as tape:
        loss = ops.sum_(p * p)
    backward(loss, tape)
    assert np.array_equal(p.grad, 2 * p.value)


def test_backward_needs_scalar():
    p = Parameter(np.ones(3))
    with Tape() as tape:
        out = p * p
    with pytest.raises(NonScalarLoss):
        backward(out, tape)


def test_no_grad_records_nothing():
    p = Parameter(np.ones(3))
    with Tape() as tape:
        with no_grad():
            ops.sum_(p * p)
    assert len(tape) == 0


def test_sgd_step():
    p = Parameter(np.zeros(2))
    p.grad = np.array([1.0, 2.0])
    SGD([p], lr=0.1).step()
    assert np.allclose(p.value, [-0.1, -0.2])


def test_frozen_parameter_unchanged():
    p = Parameter(np.array([1.0, 1.0]), frozen=True)
    q = Parameter(np.array([1.0, 1.0]))
    opt = build_optimizer("adam", [p, q], lr=0.1)
    p.grad = np.array([5.0, -5.0])
    q.grad = np.array([5.0, -5.0])
    opt.step()
    assert p.value.tolist() == [1.0, 1.0]
    assert q.value.tolist() != [1.0, 1.0]


def test_adam_first_step_is_sign_scaled():
    p = Parameter(np.zeros(3))
    p.grad = np.array([0.3, -2.0, 1e-3])
    Adam([p], lr=0.01).step()
    # m_hat = g, v_hat = g^2 on the first step
    expected = -0.01 * p.grad / (np.abs(p.grad) + 1e-8)
    assert np.allclose(p.value, expected, atol=1e-9)


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        build_optimizer("rmsprop", [], 0.1)


def test_checkpoint_round_trip(tmp_path, rng):
    layer = Linear(3, 2, rng)
    layer.bias.frozen = True
    path = tmp_path / "layer.ckpt"
    save_checkpoint(path, layer.named_parameters("lin."), config_hash="abc", metadata={"kind": "test"})
    ckpt = load_checkpoint(path)
    assert ckpt.config_hash == "abc"
    assert ckpt.metadata == {"kind": "test"}
    assert ckpt.frozen == {"lin.weight": False, "lin.bias": True}
    restored = Linear(3, 2, np.random.default_rng(99))
    restored.load_state_dict(ckpt.section("lin"))
    assert np.array_equal(restored.weight.value, layer.weight.value)
    assert np.array_equal(restored.bias.value, layer.bias.value)


def test_checkpoint_errors(tmp_path, rng):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")
    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(bogus)

    path = tmp_path / "cut.ckpt"
    save_checkpoint(path, Linear(3, 2, rng).named_parameters())
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_load_state_dict_shape_check(rng):
    layer = Linear(3, 2, rng)
    with pytest.raises(ShapeMismatch):
        layer.load_state_dict({"weight": np.zeros((2, 3)), "bias": np.zeros(2)})
