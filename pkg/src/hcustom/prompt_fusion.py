"""Image-text prompt construction over a pluggable multimodal encoder.

Two templates are supported: `image_embedded` replaces the subject's
descriptor word in the text with an image marker, `image_appended` keeps
the text intact and appends "<SEP> The {word} looks like <image>" per
subject.  At fusion time each marker expands into a 24x24 grid of image
hidden features (576 tokens); the separator is a dedicated learned
embedding that user text can never forge, since raw text is escaped and
the tokenizer only ever emits plain word/punctuation tokens.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autograd as ag
from .errors import DuplicateDescriptorError, MissingDescriptorError, TemplateError
from .latent_codec import PixelVideo
from .nn import ParamStore, linear, normal_init

IMAGE_GRID = 24
IMAGE_TOKENS = IMAGE_GRID * IMAGE_GRID  # 576

SEP_TEXT = "<SEP>"
IMAGE_TEXT = "<image>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

DEFAULT_VOCAB = (
    "a an the and is are was over on in at to of with looks like moves drifts "
    "across under behind beside around background scene while slowly quickly "
    "red orange amber yellow lime green teal cyan blue violet purple magenta "
    "gray circle square triangle star sprite subject pulse pulses speaks sings "
    "textured striped ringed flat small large plain calm busy left right up down"
).split()


class Template(str, Enum):
    image_embedded = "image_embedded"
    image_appended = "image_appended"


@dataclass
class PromptSpec:
    """Text plus ordered (descriptor word, identity image) subjects."""

    text: str
    subjects: list[tuple[str, PixelVideo]] = field(default_factory=list)
    template: Template = Template.image_appended

    def __post_init__(self):
        if isinstance(self.template, str):
            self.template = Template(self.template)
        for word, image in self.subjects:
            if image.frames != 1:
                raise TemplateError(f"identity image for {word!r} must be a single frame")


def tokenize_text(text: str) -> list[str]:
    """Split on whitespace, keeping punctuation as separate tokens."""
    return _TOKEN_RE.findall(text)


def escape_markers(text: str) -> str:
    """Neutralize literal separator/marker strings in user text."""
    return text.replace(SEP_TEXT, "\\<SEP>").replace(IMAGE_TEXT, "\\<image>")


def _template_tokens(spec: PromptSpec) -> list[tuple[str, object]]:
    """Tagged token stream: ("text", word) | ("sep", None) | ("image", k)."""
    words = tokenize_text(escape_markers(spec.text))
    if spec.template is Template.image_embedded:
        out: list[tuple[str, object]] = [("text", w) for w in words]
        for k, (descriptor, _) in enumerate(spec.subjects, start=1):
            hits = [i for i, (tag, w) in enumerate(out)
                    if tag == "text" and str(w).lower() == descriptor.lower()]
            if not hits:
                raise MissingDescriptorError(
                    f"descriptor {descriptor!r} does not occur in the text")
            if len(hits) > 1:
                raise DuplicateDescriptorError(
                    f"descriptor {descriptor!r} occurs {len(hits)} times")
            out[hits[0]] = ("image", k)
        return out
    out = [("text", w) for w in words]
    for k, (descriptor, _) in enumerate(spec.subjects, start=1):
        out.append(("sep", None))
        out.extend(("text", w) for w in ["The", descriptor, "looks", "like"])
        out.append(("image", k))
    return out


def build_template(spec: PromptSpec) -> str:
    """Render the chosen template as a single token string."""
    parts = []
    for tag, value in _template_tokens(spec):
        if tag == "text":
            parts.append(str(value))
        elif tag == "sep":
            parts.append(SEP_TEXT)
        else:
            parts.append(IMAGE_TEXT)
    return " ".join(parts)


@dataclass
class FusedPrompt:
    """Per-token embeddings plus provenance after image expansion."""

    embeddings: np.ndarray            # [L, d_text]
    provenance: list[str]             # "text" | "sep" | "image-k"

    def __len__(self):
        return len(self.provenance)

    def count(self, tag: str) -> int:
        return sum(1 for p in self.provenance if p == tag)


def adaptive_pool_image(image: np.ndarray, grid: int = IMAGE_GRID) -> np.ndarray:
    """Average-pool [H,W,3] onto a fixed grid x grid mesh (any input size)."""
    h, w = image.shape[:2]
    out = np.empty((grid, grid, image.shape[2]), dtype=np.float64)
    rs = [(int(np.floor(b * h / grid)), max(int(np.ceil((b + 1) * h / grid)), int(np.floor(b * h / grid)) + 1)) for b in range(grid)]
    cs = [(int(np.floor(b * w / grid)), max(int(np.ceil((b + 1) * w / grid)), int(np.floor(b * w / grid)) + 1)) for b in range(grid)]
    for i, (r0, r1) in enumerate(rs):
        for j, (c0, c1) in enumerate(cs):
            out[i, j] = image[r0:r1, c0:c1].mean(axis=(0, 1))
    return out


class ToyMultimodalEncoder:
    """Deterministic stand-in for a vision-language encoder.

    Text path: small-vocabulary embedding table with hashed OOV buckets.
    Image path: fixed 24x24 average pooling of the identity image followed
    by a learned linear map to the text width.
    """

    def __init__(self, store: ParamStore, rng: np.random.Generator,
                 d_text: int = 128, vocab: tuple[str, ...] = tuple(DEFAULT_VOCAB),
                 oov_buckets: int = 32, prefix: str = "encoder"):
        self.d_text = d_text
        self.vocab = {w: i for i, w in enumerate(vocab)}
        self.oov_buckets = oov_buckets
        self.prefix = prefix
        self.store = store
        self._pool_cache: dict = {}
        n_rows = len(vocab) + oov_buckets
        store.parameter(f"{prefix}.token_table", normal_init(rng, (n_rows, d_text), std=0.02))
        store.parameter(f"{prefix}.sep", normal_init(rng, (d_text,), std=0.02))
        store.parameter(f"{prefix}.image.w", normal_init(rng, (3, d_text)))
        store.parameter(f"{prefix}.image.b", np.zeros(d_text))

    def token_id(self, word: str) -> int:
        w = word.lower()
        if w in self.vocab:
            return self.vocab[w]
        return len(self.vocab) + zlib.crc32(w.encode("utf-8")) % self.oov_buckets

    def encode_text_t(self, words: list[str]) -> ag.Tensor:
        if not words:
            return ag.Tensor(np.zeros((0, self.d_text), dtype=self.store.dtype))
        ids = np.array([self.token_id(w) for w in words])
        return ag.embedding(self.store[f"{self.prefix}.token_table"], ids)

    def sep_t(self) -> ag.Tensor:
        return ag.reshape(self.store[f"{self.prefix}.sep"], (1, self.d_text))

    def _pooled(self, image: PixelVideo) -> np.ndarray:
        # pooling is pure and images are reused every step: cache by content
        key = (image.data.shape, zlib.crc32(image.data.tobytes()))
        hit = self._pool_cache.get(key)
        if hit is None:
            hit = adaptive_pool_image(image.data[0]).reshape(IMAGE_TOKENS, 3)
            hit = hit.astype(self.store.dtype)
            if len(self._pool_cache) < 4096:
                self._pool_cache[key] = hit
        return hit

    def encode_image_t(self, image: PixelVideo) -> ag.Tensor:
        pooled = ag.Tensor(self._pooled(image))
        return linear(pooled, self.store[f"{self.prefix}.image.w"],
                      self.store[f"{self.prefix}.image.b"])

    # numpy-facing wrappers
    def encode_text(self, words: list[str]) -> np.ndarray:
        return self.encode_text_t(words).data

    def encode_image(self, image: PixelVideo) -> np.ndarray:
        return self.encode_image_t(image).data


def toy_encoder(seed: int = 0, d_text: int = 128) -> ToyMultimodalEncoder:
    """Standalone toy encoder with its own parameter store."""
    store = ParamStore()
    return ToyMultimodalEncoder(store, np.random.default_rng(seed), d_text=d_text)


def fuse_t(spec: PromptSpec, encoder: ToyMultimodalEncoder,
           include_images: bool = True) -> tuple[ag.Tensor, list[str]]:
    """Taped fusion: expand markers into image feature blocks."""
    tagged = _template_tokens(spec)
    pieces: list[ag.Tensor] = []
    provenance: list[str] = []
    run: list[str] = []

    def flush():
        if run:
            pieces.append(encoder.encode_text_t(run))
            provenance.extend("text" for _ in run)
            run.clear()

    for tag, value in tagged:
        if tag == "text":
            run.append(str(value))
        elif tag == "sep":
            flush()
            pieces.append(encoder.sep_t())
            provenance.append("sep")
        else:
            flush()
            if include_images:
                k = int(value)
                pieces.append(encoder.encode_image_t(spec.subjects[k - 1][1]))
                provenance.extend(f"image-{k}" for _ in range(IMAGE_TOKENS))
    flush()
    if not pieces:
        return ag.Tensor(np.zeros((0, encoder.d_text), dtype=encoder.store.dtype)), []
    return ag.concat(pieces, axis=0), provenance


def fuse(spec: PromptSpec, encoder: ToyMultimodalEncoder,
         include_images: bool = True) -> FusedPrompt:
    emb, provenance = fuse_t(spec, encoder, include_images=include_images)
    return FusedPrompt(emb.data, provenance)
