import math

import numpy as np
import pytest

from autodiff import ops
from autodiff.gradcheck import gradcheck
from autodiff.tensor import Tensor
from errors import TooLong
from nets.attention import MultiHeadAttention, causal_mask, padding_mask
from nets.translator import TranslatorConfig, build_translator, teacher_forcing, token_accuracy, \
    translation_loss

V = 9


def small_config(**overrides):
    values = dict(d=8, heads=2, enc_layers=1, dec_layers=1, ff=16, V=V, M=12)
    values.update(overrides)
    return TranslatorConfig(**values)


def props(bsz, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(bsz, 3)), rng.normal(size=(bsz, 3))


X = np.array([[1, 4, 5, 6, 2, 0], [1, 7, 3, 2, 0, 0]])


def test_encoder_width_is_d_plus_2k():
    net = build_translator(small_config(d=32, heads=4), seed=0)
    p_x, p_y = props(2)
    enc = net.encode(X, p_x, p_y)
    assert enc.width == 38
    assert enc.states.shape == (2, 6, 38)
    assert np.array_equal(enc.states.value[1, 3, 32:], np.concatenate([p_x[1], p_y[1]]))


def test_encode_is_deterministic():
    net = build_translator(small_config(), seed=0)
    p_x, p_y = props(2)
    a = net.encode(X, p_x, p_y).states.value
    b = net.encode(X, p_x, p_y).states.value
    assert np.array_equal(a, b)
    assert np.array_equal(build_translator(small_config(), seed=0).encode(X, p_x, p_y).states.value, a)


def test_padding_does_not_leak_into_real_positions():
    net = build_translator(small_config(), seed=1)
    p_x, p_y = props(2)
    short = net.encode(X[:, :5], p_x, p_y).states.value
    longer = net.encode(np.pad(X, ((0, 0), (0, 3))), p_x, p_y).states.value
    assert np.allclose(short[0, :5], longer[0, :5], atol=1e-12)


def test_decoder_is_causal():
    net = build_translator(small_config(), seed=2)
    p_x, p_y = props(2)
    enc = net.encode(X, p_x, p_y)
    prefix = np.array([[1, 4, 5, 6], [1, 7, 3, 3]])
    changed = prefix.copy()
    changed[:, 3] = 8
    a = net.decode(enc, prefix).value
    b = net.decode(enc, changed).value
    assert np.allclose(a[:, :3], b[:, :3], atol=1e-12)
    assert not np.allclose(a[:, 3], b[:, 3])


def test_decode_step_matches_last_position():
    net = build_translator(small_config(), seed=3)
    p_x, p_y = props(2)
    enc = net.encode(X, p_x, p_y)
    prefix = np.array([[1, 4, 5], [1, 7, 3]])
    assert np.allclose(net.decode_step(enc, prefix).value, net.decode(enc, prefix).value[:, -1])


def test_length_limits():
    net = build_translator(small_config(M=5), seed=0)
    p_x, p_y = props(2)
    with pytest.raises(TooLong):
        net.encode(X, p_x, p_y)
    enc = net.encode(X[:, :5], p_x, p_y)
    with pytest.raises(TooLong):
        net.decode_step(enc, np.ones((2, 5), dtype=np.int64))


def test_uniform_logits_give_log_v():
    targets = np.array([[3, 4, 2], [5, 2, 0]])
    loss = translation_loss(Tensor(np.zeros((2, 3, V))), targets)
    assert abs(loss.item() - math.log(V)) < 1e-9


def test_quarter_probability_gives_log_four():
    logits = Tensor(np.zeros((1, 1, 4)))
    assert abs(translation_loss(logits, np.array([[2]])).item() - math.log(4)) < 1e-12


def test_confident_correct_logits_give_near_zero():
    targets = np.array([[3, 4, 2]])
    logits = np.full((1, 3, V), -20.0)
    logits[0, np.arange(3), targets[0]] = 20.0
    assert translation_loss(Tensor(logits), targets).item() < 1e-12
    assert token_accuracy(logits, targets) == 1.0


def test_teacher_forcing_shift():
    inputs, targets = teacher_forcing(np.array([[1, 4, 5, 2]]))
    assert inputs.tolist() == [[1, 4, 5]]
    assert targets.tolist() == [[4, 5, 2]]


def test_translation_loss_gradient_every_parameter():
    net = build_translator(small_config(enc_layers=2, dec_layers=2), seed=4)
    p_x, p_y = props(2)
    y = np.array([[1, 5, 6, 2], [1, 3, 2, 0]])
    dec_in, targets = teacher_forcing(y)

    def loss():
        return translation_loss(net.decode(net.encode(X, p_x, p_y), dec_in), targets)

    names = []
    for name, param in net.named_parameters():
        names.append(name)
        assert gradcheck(loss, [param], max_points=6, floor=1e-6) < 1e-4, name
    assert len(names) == len(list(net.parameters()))
    assert any("cross_attn" in n for n in names) and any("encoder" in n for n in names)


def test_attention_rows_sum_to_one():
    rng = np.random.default_rng(0)
    attn = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(2, 5, 8)))
    ids = np.array([[1, 3, 4, 0, 0], [1, 3, 4, 5, 2]])
    _, weights = attn(x, x, x, padding_mask(ids, 0) + causal_mask(5), return_weights=True)
    assert np.allclose(weights.value.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(weights.value[0, :, :, 3:] == 0.0)


def test_single_position_attention_is_value_projection():
    rng = np.random.default_rng(5)
    attn = MultiHeadAttention(4, 1, rng)
    x = Tensor(rng.normal(size=(1, 1, 4)))
    expected = attn.out_proj(attn.v_proj(x)).value
    assert np.allclose(attn(x, x, x).value, expected, atol=1e-12)


def test_cross_attention_accepts_wider_memory():
    rng = np.random.default_rng(6)
    attn = MultiHeadAttention(4, 2, rng, kv_dim=10)
    q = Tensor(rng.normal(size=(1, 3, 4)))
    memory = Tensor(rng.normal(size=(1, 5, 10)))
    assert attn(q, memory, memory).shape == (1, 3, 4)


def test_config_validation():
    with pytest.raises(ValueError):
        small_config(d=9)
    with pytest.raises(ValueError):
        small_config(M=2)
    assert small_config().memory_dim == 14


def test_uniform_logits_through_ops():
    logits = Tensor(np.zeros((1, 2, V)))
    assert np.allclose(ops.softmax(logits).value, 1.0 / V)
