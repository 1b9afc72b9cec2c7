from fractions import Fraction

import numpy as np
import pytest

from attnxlate import networks as nets
from attnxlate.tensor import ShapeError, Tensor, backward, sq_mean


def hand_count(spec_tokens, width=1, in_channels=3):
    """Parameter count from the notation alone: k*k*cin*cout + cout per conv."""
    total, cin = 0, in_channels
    for i, tok in enumerate(spec_tokens):
        last = i == len(spec_tokens) - 1
        if tok == "up2":
            continue
        if tok.startswith("r"):
            f = int(int(tok[1:]) * width)
            total += 2 * (9 * f * f + f)
            cin = f
            continue
        if tok.startswith("tc"):
            f = int(int(tok[2:].split("s")[0]) * width)
            total += 9 * cin * f + f
            cin = f
            continue
        k = int(tok[1])
        f = int(tok.split("-")[1])
        f = f if last else int(f * width)
        total += k * k * cin * f + f
        cin = f
    return total


def test_parse_layer_tokens():
    l = nets.parse_layer("c7s1-32-R", "generator")
    assert (l.kind, l.kernel, l.stride, l.filters, l.activation, l.padding_mode) == (
        "conv", 7, 1, 32, "relu", "reflect")
    l = nets.parse_layer("c4s2-64-LR", "discriminator")
    assert (l.kernel, l.stride, l.activation, l.padding, l.padding_mode) == (4, 2, "leaky_relu_0.2", 1, "zero")
    assert nets.parse_layer("c4s1-1", "discriminator").activation == "none"
    assert nets.parse_layer("tc64s2", "generator").kind == "transpose_conv"
    assert nets.parse_layer("r128", "generator").filters == 128
    assert nets.parse_layer("up2", "attention").kind == "upsample"
    with pytest.raises(ValueError):
        nets.parse_layer("c5s1-3-R", "generator")
    with pytest.raises(ValueError):
        nets.parse_layer("x", "generator")


def test_generator_full_scale_layout():
    spec = nets.generator_spec(1)
    res = [l for l in spec.layers if l.kind == "residual_block"]
    assert len(res) == 9 and all(l.filters == 128 for l in res)
    assert [l.normalized for l in spec.layers] == [True] * (len(spec.layers) - 1) + [False]
    assert spec.layers[-1].activation == "tanh"


def test_generator_quarter_width_first_layer():
    g = nets.build_generator(Fraction(1, 4), n_residual=3)
    assert g.params["layer0.weight"].shape == (8, 3, 7, 7)


def test_generator_forward_range_and_shape():
    g = nets.build_generator(Fraction(1, 4), n_residual=2)
    x = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 3, 64, 64)).astype(np.float32))
    y = g(x)
    assert y.shape == (1, 3, 64, 64)
    assert np.all(np.abs(y.data) < 1)
    z = g(Tensor(np.zeros((1, 3, 64, 64), np.float32)))
    assert np.all(np.abs(z.data) < 1)


def test_attention_forward_range_and_shape():
    a = nets.build_attention(Fraction(1, 4))
    x = Tensor(np.random.default_rng(1).uniform(-1, 1, (2, 3, 64, 64)).astype(np.float32))
    y = a(x)
    assert y.shape == (2, 1, 64, 64)
    assert np.all((y.data >= 0) & (y.data <= 1))


def test_attention_needs_divisible_size():
    a = nets.build_attention(Fraction(1, 4))
    with pytest.raises(ShapeError):
        a(Tensor(np.zeros((1, 3, 30, 30), np.float32)))


def test_attention_uses_nearest_upsampling():
    spec = nets.attention_spec(1)
    kinds = [l.kind for l in spec.layers]
    assert kinds.count("upsample") == 2 and "transpose_conv" not in kinds
    assert spec.layers[-1].activation == "sigmoid" and spec.layers[-1].filters == 1


@pytest.mark.parametrize("builder,tokens", [
    (lambda: nets.build_attention(1), nets.ATTENTION_LAYERS),
    (lambda: nets.build_discriminator(1), nets.DISCRIMINATOR_LAYERS),
    (lambda: nets.build_generator(1), nets.GENERATOR_LAYERS),
])
def test_parameter_count_matches_hand_count(builder, tokens):
    assert builder().parameter_count() == hand_count(tokens)


def test_parameter_count_quarter_width():
    assert nets.build_attention(Fraction(1, 4)).parameter_count() == hand_count(nets.ATTENTION_LAYERS, 0.25)


def test_discriminator_patch_output():
    d = nets.build_discriminator(Fraction(1, 4))
    y = d(Tensor(np.random.default_rng(2).normal(size=(1, 3, 64, 64)).astype(np.float32)))
    assert y.shape[:2] == (1, 1) and y.shape[2] >= 1 and y.shape[3] >= 1
    assert d.spec.layers[0].activation == "leaky_relu_0.2"


def test_discriminator_without_instance_norm():
    d = nets.build_discriminator(Fraction(1, 4), instance_norm_enabled=True, seed=3)
    plain = d.with_instance_norm(False)
    assert plain.checksum() == d.checksum()
    x = Tensor(np.random.default_rng(3).normal(size=(1, 3, 64, 64)).astype(np.float32))
    assert not np.array_equal(d(x).data, plain(x).data)
    # without normalization the map is positively homogeneous in scale for zero biases
    assert np.allclose(plain(Tensor(x.data * 2)).data, 2 * plain(x).data, rtol=1e-4, atol=1e-6)


def test_same_seed_same_parameters():
    a = nets.build_discriminator(Fraction(1, 4), seed=11)
    b = nets.build_discriminator(Fraction(1, 4), seed=11)
    c = nets.build_discriminator(Fraction(1, 4), seed=12)
    assert a.checksum() == b.checksum() != c.checksum()


def test_init_is_truncated_normal():
    w = nets.truncated_normal(np.random.default_rng(0), (20000,))
    assert np.abs(w).max() <= 2 * nets.INIT_STD
    assert 0.8 * nets.INIT_STD < w.std() < nets.INIT_STD
    g = nets.build_generator(Fraction(1, 4), n_residual=1)
    assert all(np.all(p.data == 0) for k, p in g.params.items() if k.endswith("bias"))


def test_non_integer_width_rejected():
    with pytest.raises(ValueError):
        nets.build_generator(Fraction(1, 3))
    with pytest.raises(ValueError):
        nets.build_discriminator(0)


def test_residual_block_zero_weights_is_identity():
    spec = nets.NetworkSpec("generator", [
        nets.parse_layer("r4", "generator"),
        nets.LayerSpec("conv", kernel=1, stride=1, filters=3, activation="tanh"),
    ], in_channels=4)
    spec.layers[0] = nets.LayerSpec(**{**spec.layers[0].__dict__, "normalized": True})
    net = nets.Network(spec)
    for k in ("layer0.conv1.weight", "layer0.conv2.weight"):
        net.params[k].data[...] = 0
    x = Tensor(np.random.default_rng(4).normal(size=(1, 4, 8, 8)).astype(np.float32))
    out = net._layer(x, 0, spec.layers[0], net.params)
    np.testing.assert_array_equal(out.data, x.data)


def test_forward_records_graph_for_all_parameters():
    g = nets.build_generator(Fraction(1, 8), n_residual=1, dtype=np.float64)
    x = Tensor(np.random.default_rng(5).normal(size=(1, 3, 16, 16)))
    backward(sq_mean(g(x)))
    assert all(p.grad is not None and p.grad.shape == p.shape for p in g.params.values())


def test_forward_rejects_wrong_channels():
    with pytest.raises(ShapeError):
        nets.build_discriminator(Fraction(1, 4))(Tensor(np.zeros((1, 1, 64, 64), np.float32)))


def test_spec_round_trip():
    spec = nets.attention_spec(Fraction(1, 4))
    again = nets.NetworkSpec.from_dict(spec.to_dict())
    assert again == spec
