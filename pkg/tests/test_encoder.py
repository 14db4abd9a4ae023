import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtc import tensor as tn
from gtc.encoder import ConvBlock, Encoder, EncoderConfig, sequence_length, shape_plan
from gtc.errors import ContractError
from gtc.guidance import AttentionGuidance
from gtc.tensor import Tensor, backward


def test_default_widths_map_to_quarter_length():
    cfg = EncoderConfig()
    assert sequence_length(cfg, 64) == 16
    assert sequence_length(cfg, 128) == 32
    assert cfg.width_ratio == 0.25 and cfg.height_ratio == 1 / 16


def test_tall_input_plan():
    plan = shape_plan(EncoderConfig(height=64), 256)
    assert plan[0] == ("input", (1, 64, 256))
    assert plan[-1] == ("height_avg", (64, 1, 64))
    assert dict(plan)["pool4"] == (64, 4, 64)


def test_identity_config_echoes_input():
    cfg = EncoderConfig(height=1, blocks=())
    assert shape_plan(cfg, 37) == [("input", (1, 1, 37)), ("height_avg", (1, 1, 37))]


def test_stride_two_on_odd_width_rounds_up():
    cfg = EncoderConfig(height=8, blocks=(ConvBlock(2, (3, 3), (2, 2)),))
    assert dict(shape_plan(cfg, 7))["conv1"] == (2, 4, 4)
    enc = Encoder(cfg, np.random.default_rng(0))
    out = enc.feature_maps(Tensor(np.random.default_rng(1).random((1, 8, 7))))
    assert out[1][1].shape == (1, 2, 4, 4)


def test_doubling_width_doubles_length():
    cfg = EncoderConfig()
    for w in (8, 20, 64):
        assert sequence_length(cfg, 2 * w) == 2 * sequence_length(cfg, w)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 70), st.booleans(), st.sampled_from(["causal", "same"]))
def test_actual_shapes_match_plan(width, residual, padding):
    cfg = EncoderConfig(width_padding=padding, residual=residual)
    enc = Encoder(cfg, np.random.default_rng(width))
    maps = enc.feature_maps(Tensor(np.random.default_rng(0).random((2, 32, width))))
    plan = shape_plan(cfg, width)
    assert [name for name, _ in maps] == [name for name, _ in plan]
    for (_, t), (_, shape) in zip(maps, plan):
        assert t.shape == (2,) + shape
    assert enc(np.zeros((2, 32, width))).shape == (2, sequence_length(cfg, width), 64)


def test_zero_image_gives_zero_features():
    enc = Encoder(EncoderConfig(), np.random.default_rng(0))
    assert not enc(np.zeros((1, 32, 40))).data.any()


def test_causal_prefix_property():
    rng = np.random.default_rng(3)
    enc = Encoder(EncoderConfig(), rng)
    img = rng.random((1, 32, 48))
    longer = np.concatenate([img, np.zeros((1, 32, 24))], axis=2)
    a = enc(img).data
    b = enc(longer).data
    np.testing.assert_array_equal(b[:, :a.shape[1]], a)


def test_same_padding_breaks_prefix_property():
    rng = np.random.default_rng(3)
    enc = Encoder(EncoderConfig(width_padding="same"), rng)
    img = rng.random((1, 32, 48))
    longer = np.concatenate([img, np.zeros((1, 32, 24))], axis=2)
    assert not np.array_equal(enc(longer).data[:, :12], enc(img).data)


def test_guidance_gradient_reaches_every_encoder_parameter():
    rng = np.random.default_rng(4)
    enc = Encoder(EncoderConfig(), rng)
    guide = AttentionGuidance(64, 2, rng)
    loss = guide.teacher_forced_loss(enc(rng.random((2, 32, 24))), [(0, 1), (1,)])
    backward(loss)
    for p in enc.parameters():
        assert np.abs(p.grad).sum() > 0, p.name


def test_rectifier_seam_runs_first():
    seen = []

    def rectify(x):
        seen.append(x.shape)
        return tn.scalar_mul(x, 0.0)

    enc = Encoder(EncoderConfig(), np.random.default_rng(0), rectifier=rectify)
    out = enc(np.random.default_rng(1).random((1, 32, 16)))
    assert seen == [(1, 1, 32, 16)]
    assert not out.data.any()


def test_bad_inputs():
    enc = Encoder(EncoderConfig(), np.random.default_rng(0))
    with pytest.raises(ContractError):
        enc(np.zeros((1, 16, 40)))
    with pytest.raises(ContractError):
        shape_plan(EncoderConfig(), 0)
    with pytest.raises(ContractError):
        EncoderConfig(width_padding="valid")
    with pytest.raises(ContractError):
        EncoderConfig(blocks=(ConvBlock(4, stride=(2, 1)),), residual=True)


def test_parameter_names_are_dotted():
    names = [p.name for p in Encoder(EncoderConfig(), np.random.default_rng(0)).parameters()]
    assert names[:2] == ["encoder.conv1.weight", "encoder.conv1.bias"]
    assert len(names) == 8
