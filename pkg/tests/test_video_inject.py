import numpy as np
import pytest

from hcustom import autograd as ag
from hcustom.errors import DimensionMismatchError
from hcustom.latent_codec import CodecConfig, LatentCodec, PixelVideo, tokenize
from hcustom.nn import ParamStore
from hcustom.video_inject import (AlignmentNet, ConcatCompressor,
                                  ConditionVideo, align, encode_condition,
                                  inject_video)

rng = np.random.default_rng(9)


@pytest.fixture(scope="module")
def codec():
    return LatentCodec(CodecConfig(spatial_factor=4, latent_channels=8,
                                   hidden_channels=8, seed=4))


def test_all_ones_mask_is_noop(codec):
    video = PixelVideo(rng.random((5, 16, 16, 3), dtype=np.float32))
    cond = ConditionVideo(video, np.ones((5, 16, 16), dtype=np.int64))
    plain, _ = tokenize(codec.encode(video))
    np.testing.assert_array_equal(encode_condition(cond, codec), plain)


def test_all_zeros_mask_equals_gray(codec):
    video = PixelVideo(rng.random((5, 16, 16, 3), dtype=np.float32))
    cond = ConditionVideo(video, np.zeros((5, 16, 16), dtype=np.int64))
    gray = PixelVideo(np.full((5, 16, 16, 3), 0.5, dtype=np.float32))
    gray_tokens, _ = tokenize(codec.encode(gray))
    np.testing.assert_array_equal(encode_condition(cond, codec), gray_tokens)


def test_condition_token_count(codec):
    video = PixelVideo(rng.random((129, 16, 16, 3), dtype=np.float32))
    tokens = encode_condition(ConditionVideo(video), codec)
    assert tokens.shape == (33 * 4 * 4, 8)


def test_mask_shape_mismatch(codec):
    video = PixelVideo(rng.random((5, 16, 16, 3), dtype=np.float32))
    with pytest.raises(DimensionMismatchError):
        ConditionVideo(video, np.ones((4, 16, 16)))


def test_alignment_net_zero_at_init():
    store = ParamStore(dtype=np.float64)
    net = AlignmentNet(store, np.random.default_rng(0), channels=8, hidden=16)
    assert net.num_layers == 4
    tokens = rng.normal(size=(10, 8))
    np.testing.assert_array_equal(align(tokens, net), np.zeros((10, 8)))


def test_alignment_net_gradcheck():
    store = ParamStore(dtype=np.float64)
    net = AlignmentNet(store, np.random.default_rng(0), channels=4, hidden=6)
    # give the zero-initialized layer values so gradients are generic
    store["align.l3.w"].data = rng.normal(size=(6, 4))
    x = rng.normal(size=(5, 4))

    def loss_value():
        with ag.no_grad():
            out = net.forward_t(ag.Tensor(x))
            return float((out.data ** 2).sum())

    out = net.forward_t(ag.Tensor(x))
    ag.sum_(ag.mul(out, out)).backward()
    eps = 1e-6
    for name, p in store.items():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 5)):
            old = flat[i]
            flat[i] = old + eps
            hi = loss_value()
            flat[i] = old - eps
            lo = loss_value()
            flat[i] = old
            num = (hi - lo) / (2 * eps)
            assert abs(num - gflat[i]) <= 1e-3 * max(1.0, abs(num)), name


def _sequence(m, f, wh, c):
    return rng.normal(size=((m + f) * wh, c))


def test_add_mode_zero_condition_is_identity():
    tokens = _sequence(1, 3, 4, 8)
    out = inject_video(tokens, np.zeros((3 * 4, 8)), "add", n_identity_tokens=4)
    np.testing.assert_array_equal(out, tokens)


def test_add_mode_identity_frames_untouched():
    tokens = _sequence(2, 3, 4, 8)
    cond = rng.normal(size=(3 * 4, 8))
    out = inject_video(tokens, cond, "add", n_identity_tokens=8)
    np.testing.assert_array_equal(out[:8], tokens[:8])
    np.testing.assert_array_equal(out[8:], tokens[8:] + cond)


def test_concat_mode_neutral_at_init_and_shape():
    store = ParamStore(dtype=np.float64)
    comp = ConcatCompressor(store, channels=8)
    tokens = _sequence(1, 3, 4, 8)
    cond = rng.normal(size=(3 * 4, 8))
    out = inject_video(tokens, cond, "concat", n_identity_tokens=4, compressor=comp)
    assert out.shape == tokens.shape
    np.testing.assert_allclose(out, tokens, atol=1e-12)  # init passes latent through
    np.testing.assert_array_equal(out[:4], tokens[:4])


def test_token_count_preserved_both_modes():
    store = ParamStore()
    comp = ConcatCompressor(store, channels=8)
    tokens = _sequence(1, 2, 4, 8)
    cond = rng.normal(size=(2 * 4, 8))
    for mode in ("add", "concat"):
        out = inject_video(tokens, cond, mode, n_identity_tokens=4, compressor=comp)
        assert out.shape == tokens.shape


def test_frame_mismatch_and_unknown_mode():
    tokens = _sequence(1, 3, 4, 8)
    with pytest.raises(DimensionMismatchError):
        inject_video(tokens, np.zeros((2 * 4, 8)), "add", n_identity_tokens=4)
    with pytest.raises(ValueError):
        inject_video(tokens, np.zeros((3 * 4, 8)), "adapter", n_identity_tokens=4)
