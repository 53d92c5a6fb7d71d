"""Assembly of the conditioned velocity model and its checkpoint format.

A CustomVideoModel owns every trainable parameter group in one store:
the toy multimodal encoder, the diffusion-transformer backbone, the audio
cross-attention projections, the condition-video alignment network, and
the concat-mode compressor.  Conditioning branches are wired per sample:
identity tokens are prepended (or channel-concatenated under the ablation
flag), condition-video features are added before the first block, audio is
cross-attended per frame, and the fused prompt feeds cross-attention inside
every block.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .audio_net import AlignedAudio, AudioInjectConfig, AudioInjector, inject_audio_t
from .backbone import Backbone, BackboneConfig
from .container import load_container, save_container
from .errors import ConfigError, DimensionMismatchError
from .latent_codec import CodecConfig, LatentCodec
from .nn import ParamStore
from .prompt_fusion import PromptSpec, ToyMultimodalEncoder, fuse_t
from .rope3d import rotation_tables, video_positions
from .video_inject import ConcatCompressor, inject_video_t

CHECKPOINT_VERSION = "hcustom-ckpt/1"


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    audio: AudioInjectConfig = field(default_factory=AudioInjectConfig)
    audio_feature_width: int = 32
    align_hidden: int | None = None          # defaults to backbone width
    video_mode: str = "add"
    identity_enhancement: bool = True
    channel_concat: bool = False
    fusion_images: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.channel_concat and self.identity_enhancement:
            raise ConfigError("channel_concat",
                              "channel concatenation replaces identity enhancement; "
                              "disable identity_enhancement")
        if self.video_mode not in ("add", "concat"):
            raise ConfigError("video_mode", f"unknown mode {self.video_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["backbone"] = BackboneConfig(**d["backbone"])
        d["audio"] = AudioInjectConfig(**d["audio"])
        return cls(**d)


@dataclass
class PreparedSample:
    """Per-item tensors cached once so each training step is cheap.

    All latents are stored in normalized latent space (see LatentStats).
    """

    z1: np.ndarray | None                 # [f*h*w, c] clean video tokens
    id_tokens: np.ndarray                 # [m*h*w, c] identity tokens (may be empty)
    positions: np.ndarray                 # [L, 3] for the assembled sequence
    rope_cos: np.ndarray
    rope_sin: np.ndarray
    spec: PromptSpec
    frames: int
    height: int
    width: int
    n_subjects: int
    aligned_audio: AlignedAudio | None = None
    cond_tokens: np.ndarray | None = None  # [f*h*w, c] raw (pre-alignment)

    @property
    def wh(self) -> int:
        return self.height * self.width

    @property
    def n_identity_tokens(self) -> int:
        return self.n_subjects * self.wh

    @property
    def n_video_tokens(self) -> int:
        return self.frames * self.wh


@dataclass
class LatentStats:
    """Per-channel normalization of codec latents used by flow training."""

    mean: np.ndarray
    std: np.ndarray

    def normalize(self, tokens: np.ndarray) -> np.ndarray:
        return (tokens - self.mean) / self.std

    def denormalize(self, tokens: np.ndarray) -> np.ndarray:
        return tokens * self.std + self.mean

    @classmethod
    def identity(cls, channels: int) -> "LatentStats":
        return cls(np.zeros(channels, dtype=np.float32), np.ones(channels, dtype=np.float32))

    @classmethod
    def from_tokens(cls, tokens: np.ndarray) -> "LatentStats":
        mean = tokens.mean(axis=0)
        std = tokens.std(axis=0)
        std = np.where(std < 1e-6, 1.0, std)
        return cls(mean.astype(np.float32), std.astype(np.float32))


class CustomVideoModel:
    """All trainable parameter groups plus the conditioned forward pass."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.store = ParamStore(dtype=dtype)
        rng = np.random.default_rng(config.seed)
        bb = config.backbone
        c = bb.latent_channels
        in_channels = 2 * c if config.channel_concat else c
        self.backbone = Backbone(
            self.store, rng,
            BackboneConfig(**{**asdict(bb), "input_channels": in_channels}))
        self.encoder = ToyMultimodalEncoder(self.store, rng, d_text=bb.text_width)
        self.audio_injector = AudioInjector(self.store, rng, c,
                                            config.audio_feature_width, config.audio)
        self.align_net = _build_align(self.store, rng, c,
                                      config.align_hidden or bb.width)
        self.compressor = ConcatCompressor(self.store, c)

    # -- conditioned forward --------------------------------------------------

    def assemble_tokens_t(self, ps: PreparedSample, z_video: ag.Tensor) -> tuple[ag.Tensor, int]:
        """Build the latent-space token sequence; returns (tokens, n identity tokens)."""
        cfg = self.config
        if cfg.channel_concat:
            if ps.n_subjects != 1:
                raise DimensionMismatchError("channel concat supports exactly one subject")
            ident = np.tile(ps.id_tokens, (ps.frames, 1))
            return ag.concat([z_video, ag.Tensor(ident.astype(z_video.data.dtype))],
                             axis=1), 0
        if cfg.identity_enhancement and ps.n_subjects:
            ident = ag.Tensor(ps.id_tokens.astype(z_video.data.dtype))
            return ag.concat([ident, z_video], axis=0), ps.n_identity_tokens
        return z_video, 0

    def velocity_t(self, ps: PreparedSample, z_video: ag.Tensor, t: float) -> ag.Tensor:
        """Predict per-token velocity; output rows match the assembled sequence."""
        cfg = self.config
        tokens, n_id = self.assemble_tokens_t(ps, z_video)
        if ps.cond_tokens is not None:
            aligned = self.align_net.forward_t(
                ag.Tensor(ps.cond_tokens.astype(z_video.data.dtype)))
            tokens = inject_video_t(tokens, aligned, cfg.video_mode, n_id,
                                    self.compressor)
        if ps.aligned_audio is not None:
            if ps.aligned_audio.frames * ps.wh != tokens.shape[0]:
                raise DimensionMismatchError(
                    "aligned audio expects an ID-enhanced sequence of f+1 frames")
            tokens = inject_audio_t(tokens, ps.aligned_audio, self.audio_injector,
                                    ps.wh)
        prompt, _ = fuse_t(ps.spec, self.encoder, include_images=cfg.fusion_images)
        return self.backbone.forward_t(tokens, ps.rope_cos, ps.rope_sin,
                                       prompt if len(prompt.data) else None, t)

    # -- sample preparation ----------------------------------------------------

    def prepare(self, codec: LatentCodec, stats: LatentStats, *,
                video=None, identity_images=(), spec: PromptSpec | None = None,
                audio=None, condition=None, frames: int | None = None,
                size: tuple[int, int] | None = None) -> PreparedSample:
        """Encode raw inputs once into the cached training/sampling layout.

        For training pass `video`; for sampling pass `frames` (pixel frame
        count) and, when no identity image fixes the grid, `size` = (H, W).
        """
        from .audio_net import align_audio
        from .latent_codec import latent_frame_count, tokenize
        from .rope3d import identity_positions
        from .video_inject import encode_condition

        s = codec.config.spatial_factor
        if video is not None:
            z = codec.encode(video)
            f, h, w = z.frames, z.height, z.width
            z1_tokens, _ = tokenize(z)
            z1_tokens = stats.normalize(z1_tokens)
        else:
            if frames is None:
                raise ValueError("need either a video or an explicit frame count")
            f = latent_frame_count(frames)
            if size is not None:
                h, w = size[0] // s, size[1] // s
            elif identity_images:
                h = identity_images[0].height // s
                w = identity_images[0].width // s
            else:
                raise ValueError("cannot infer latent grid; pass size=(H, W)")
            z1_tokens = None
        id_tokens = []
        positions = []
        for k, image in enumerate(identity_images, start=1):
            zi = codec.encode(image)
            if (zi.height, zi.width) != (h, w):
                raise DimensionMismatchError("identity image grid mismatch")
            tok, _ = tokenize(zi)
            id_tokens.append(stats.normalize(tok))
            positions.append(identity_positions(k, w, h))
        positions.append(video_positions(f, w, h))
        m = len(id_tokens)
        use_identity_tokens = self.config.identity_enhancement and m > 0
        if self.config.channel_concat or not use_identity_tokens:
            pos = video_positions(f, w, h)
        else:
            pos = np.concatenate(positions, axis=0)
        cos, sin = rotation_tables(pos, self.config.backbone.rope(),
                                   dtype=self.store.dtype)
        aligned = None
        if audio is not None:
            aligned = align_audio(audio, f)
            if not use_identity_tokens or m != 1:
                raise ConfigError("audio",
                                  "audio conditioning requires exactly one identity subject")
        cond_tokens = None
        if condition is not None:
            cond_tokens = stats.normalize(encode_condition(condition, codec))
            if cond_tokens.shape[0] != f * h * w:
                raise DimensionMismatchError("condition video frame count mismatch")
        return PreparedSample(
            z1=z1_tokens,
            id_tokens=(np.concatenate(id_tokens, axis=0) if id_tokens
                       else np.zeros((0, self.config.backbone.latent_channels),
                                     dtype=np.float32)),
            positions=pos, rope_cos=cos, rope_sin=sin,
            spec=spec or PromptSpec("", []),
            frames=f, height=h, width=w, n_subjects=m,
            aligned_audio=aligned, cond_tokens=cond_tokens)


def _build_align(store, rng, channels, hidden):
    from .video_inject import AlignmentNet
    return AlignmentNet(store, rng, channels, hidden)


# -- checkpointing ------------------------------------------------------------


def save_checkpoint(path, model: CustomVideoModel, codec: LatentCodec,
                    stats: LatentStats, step: int, extra_meta: dict | None = None):
    arrays = {f"model.{k}": v for k, v in model.store.state_dict().items()}
    arrays.update({f"codec.{k}": v for k, v in codec.store.state_dict().items()})
    arrays["stats.mean"] = stats.mean
    arrays["stats.std"] = stats.std
    meta = {
        "version": CHECKPOINT_VERSION,
        "step": step,
        "model_config": model.config.to_dict(),
        "codec_config": asdict(codec.config),
        "dtype": model.store.dtype.str,
    }
    if extra_meta:
        meta["extra"] = extra_meta
    save_container(path, arrays, meta=meta)


def load_checkpoint(path) -> tuple[CustomVideoModel, LatentCodec, LatentStats, int, dict]:
    arrays, meta = load_container(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError("checkpoint", f"unsupported version {meta.get('version')!r}")
    dtype = np.dtype(meta.get("dtype", "<f4"))
    model = CustomVideoModel(ModelConfig.from_dict(meta["model_config"]), dtype=dtype)
    model.store.load_state_dict(
        {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    codec = LatentCodec(CodecConfig.from_dict(meta["codec_config"]))
    codec.store.load_state_dict(
        {k[len("codec."):]: v for k, v in arrays.items() if k.startswith("codec.")})
    stats = LatentStats(arrays["stats.mean"], arrays["stats.std"])
    return model, codec, stats, meta["step"], meta
