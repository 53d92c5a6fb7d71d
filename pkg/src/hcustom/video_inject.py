"""Video conditioning: masked encoding, feature alignment, additive fusion.

The condition video is blanked to mid-gray wherever its mask is 0 (the
region to be replaced), encoded with the shared codec, serialized with the
same tokenizer as the generation target, passed through a four-layer
fully connected alignment network (zero-initialized final layer), and added
frame-by-frame to the noisy video latents.  Identity-image frames are never
touched, and the token sequence does not grow, so attention cost is
unchanged by conditioning.  A token-feature concatenation variant is kept
behind `mode="concat"` for ablations.

Like the audio path, this module never sees identity images or prompt
tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import DimensionMismatchError
from .latent_codec import LatentCodec, PixelVideo, tokenize
from .nn import ParamStore, linear, normal_init

BLANK_VALUE = 0.5
MODES = ("add", "concat")


@dataclass
class ConditionVideo:
    """Source pixels plus an optional {0,1} mask (0 marks the editable region)."""

    pixels: PixelVideo
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.shape != self.pixels.data.shape[:3]:
                raise DimensionMismatchError(
                    f"mask shape {self.mask.shape} != video shape {self.pixels.data.shape[:3]}")
            if not np.isin(self.mask, (0, 1)).all():
                raise DimensionMismatchError("mask values must be binary")


def encode_condition(video: ConditionVideo, codec: LatentCodec) -> np.ndarray:
    """Blank masked-out pixels to mid-gray, encode, and serialize to tokens."""
    frames = video.pixels.data
    if video.mask is not None:
        frames = np.where(video.mask[..., None].astype(bool), frames, BLANK_VALUE)
    tokens, _ = tokenize(codec.encode(PixelVideo(frames, fps=video.pixels.fps)))
    return tokens


class AlignmentNet:
    """Four affine layers (c -> d_a -> d_a -> d_a -> c), zero-init output."""

    NUM_LAYERS = 4

    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 channels: int, hidden: int, prefix: str = "align"):
        self.store = store
        self.prefix = prefix
        dims = [channels, hidden, hidden, hidden, channels]
        for i in range(self.NUM_LAYERS):
            last = i == self.NUM_LAYERS - 1
            w = np.zeros((dims[i], dims[i + 1])) if last else normal_init(rng, (dims[i], dims[i + 1]))
            store.parameter(f"{prefix}.l{i}.w", w)
            store.parameter(f"{prefix}.l{i}.b", np.zeros(dims[i + 1]))

    @property
    def num_layers(self) -> int:
        return self.NUM_LAYERS

    def forward_t(self, tokens: ag.Tensor) -> ag.Tensor:
        x = tokens
        for i in range(self.NUM_LAYERS):
            x = linear(x, self.store[f"{self.prefix}.l{i}.w"], self.store[f"{self.prefix}.l{i}.b"])
            if i < self.NUM_LAYERS - 1:
                x = ag.gelu(x)
        return x


def align(tokens: np.ndarray, net: AlignmentNet) -> np.ndarray:
    with ag.no_grad():
        return net.forward_t(ag.Tensor(tokens.astype(net.store.dtype))).data


class ConcatCompressor:
    """Learned projection [latent || condition] -> latent width (concat mode).

    Initialized to pass the latent through untouched and ignore the
    condition, the neutral analogue of the zero-initialized alignment net.
    """

    def __init__(self, store: ParamStore, channels: int, prefix: str = "vidcat"):
        self.store = store
        self.prefix = prefix
        w = np.concatenate([np.eye(channels), np.zeros((channels, channels))], axis=0)
        store.parameter(f"{prefix}.w", w)
        store.parameter(f"{prefix}.b", np.zeros(channels))

    def forward_t(self, stacked: ag.Tensor) -> ag.Tensor:
        return linear(stacked, self.store[f"{self.prefix}.w"], self.store[f"{self.prefix}.b"])


def inject_video_t(latent_tokens: ag.Tensor, condition_tokens: ag.Tensor,
                   mode: str, n_identity_tokens: int,
                   compressor: ConcatCompressor | None = None) -> ag.Tensor:
    """Inject aligned condition tokens into the video block of the sequence.

    latent_tokens: [(m identity + f video frames) * wh, c]; the first
    n_identity_tokens rows are identity tokens and pass through untouched.
    condition_tokens: [f*wh, c] aligned features, frame-for-frame with the
    video block.
    """
    if mode not in MODES:
        raise ValueError(f"unknown video injection mode {mode!r}")
    total, c = latent_tokens.shape
    n_video = total - n_identity_tokens
    if condition_tokens.shape[0] != n_video:
        raise DimensionMismatchError(
            f"condition tokens {condition_tokens.shape[0]} != video tokens {n_video}")
    video = ag.slice_axis(latent_tokens, 0, n_identity_tokens, total)
    if mode == "add":
        video = ag.add(video, condition_tokens)
    else:
        if compressor is None:
            raise ValueError("concat mode requires a ConcatCompressor")
        stacked = ag.concat([video, condition_tokens], axis=1)
        video = compressor.forward_t(stacked)
    if n_identity_tokens == 0:
        return video
    ident = ag.slice_axis(latent_tokens, 0, 0, n_identity_tokens)
    return ag.concat([ident, video], axis=0)


def inject_video(latent_tokens: np.ndarray, condition_tokens: np.ndarray,
                 mode: str, n_identity_tokens: int,
                 compressor: ConcatCompressor | None = None) -> np.ndarray:
    with ag.no_grad():
        return inject_video_t(ag.Tensor(latent_tokens), ag.Tensor(condition_tokens),
                              mode, n_identity_tokens, compressor).data
