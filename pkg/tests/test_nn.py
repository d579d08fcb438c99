import numpy as np
import pytest

from spdda import ops
from spdda.gradcheck import gradcheck
from spdda.nn import ChannelAttention, Conv2d, Encoder, FeedForward, Linear, ResBlock, count_parameters
from spdda.tensor import ShapeError, Tensor


def weighted_sum(out, seed=5):
    return ops.sum(ops.mul(out, np.random.default_rng(seed).uniform(-1, 1, out.shape)))


def check_module(module, x, tol):
    """Gradcheck w.r.t. the input and every parameter of ``module``."""
    params = list(module.parameters().values())

    def f(x, *ps):
        return weighted_sum(module(x))

    return gradcheck(f, [x, *params]) < tol


def test_init_is_uniform_in_fan_in_bound(rng):
    conv = Conv2d(8, 4, 3, rng)
    bound = 1 / np.sqrt(8 * 9)
    assert np.abs(conv.weight.data).max() <= bound
    assert np.abs(conv.weight.data).max() > 0.8 * bound
    lin = Linear(50, 3, rng)
    assert np.abs(lin.weight.data).max() <= 1 / np.sqrt(50)


def test_init_is_seeded():
    a = ResBlock(3, np.random.default_rng(1))
    b = ResBlock(3, np.random.default_rng(1))
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_resblock_zero_weights_is_identity(rng):
    block = ResBlock(3, rng)
    for p in block.parameters().values():
        p.data[...] = 0.0
    x = rng.uniform(size=(2, 3, 5, 5))
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


def test_zero_residual_flag_gives_identity(rng):
    enc = Encoder(4, rng, depth=2, zero_residual=True)
    x = rng.uniform(size=(1, 4, 6, 6))
    np.testing.assert_array_equal(enc(Tensor(x)).data, x)


def test_resblock_zero_input_zero_bias(rng):
    block = ResBlock(3, rng)
    block.conv1.bias.data[...] = 0
    block.conv2.bias.data[...] = 0
    np.testing.assert_array_equal(block(Tensor(np.zeros((1, 3, 4, 4)))).data, 0.0)


def test_resblock_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        ResBlock(3, rng)(Tensor(np.zeros((1, 4, 5, 5))))


def test_resblock_gradcheck(rng):
    block = ResBlock(2, rng)
    assert check_module(block, Tensor(rng.uniform(-1, 1, (1, 2, 4, 4))), 1e-4)


def test_feedforward_shape(rng):
    ffn = FeedForward(3, rng)
    assert ffn(Tensor(rng.uniform(size=(2, 3, 4, 5)))).shape == (2, 3, 4, 5)
    assert ffn.fc1.weight.shape[0] == 6


def test_attention_shape_contract(rng):
    att = ChannelAttention(2, rng)
    out, A = att.forward_with_attention(Tensor(rng.uniform(size=(1, 2, 2, 2))))
    assert out.shape == (1, 2, 2, 2)
    assert A.shape == (1, 2, 2)


def test_attention_rows_are_stochastic(rng):
    att = ChannelAttention(6, rng)
    _, A = att.forward_with_attention(Tensor(rng.uniform(size=(3, 6, 5, 5))))
    assert A.shape == (3, 6, 6)
    assert np.all(A.data > 0)
    np.testing.assert_allclose(A.data.sum(axis=-1), 1.0, atol=1e-10)


def test_attention_identical_channels_uniform(rng):
    att = ChannelAttention(4, rng)
    for group in (att.to_q, att.to_k, att.to_v):
        group.identity_()
    x = np.repeat(rng.uniform(size=(1, 1, 5, 5)), 4, axis=1)
    A, _ = att.attention(Tensor(x))
    np.testing.assert_allclose(A.data, 0.25, atol=1e-12)


def test_attention_gradcheck(rng):
    att = ChannelAttention(2, rng)
    assert check_module(att, Tensor(rng.uniform(-1, 1, (1, 2, 3, 3))), 1e-4)


def test_every_block_preserves_shape(rng):
    x = Tensor(rng.uniform(size=(2, 5, 7, 7)))
    for block in (ResBlock(5, rng), FeedForward(5, rng), ChannelAttention(5, rng), Encoder(5, rng)):
        assert block(x).shape == x.shape


def test_parameter_names_and_reload(rng):
    enc = Encoder(2, rng, depth=2)
    names = [n for n, _ in enc.named_parameters()]
    assert names[:2] == ["blocks.0.conv1.weight", "blocks.0.conv1.bias"]
    assert count_parameters(enc) == 2 * 2 * (2 * 2 * 9 + 2)
    other = Encoder(2, np.random.default_rng(99), depth=2)
    other.load_arrays({n: p.data for n, p in enc.named_parameters()})
    for (_, a), (_, b) in zip(enc.named_parameters(), other.named_parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    with pytest.raises(ShapeError):
        Encoder(3, rng).load_arrays({n: p.data for n, p in enc.named_parameters()})
