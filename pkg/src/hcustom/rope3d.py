"""3D rotary position embeddings over (time, x, y) token positions.

Video tokens sit at their literal grid coordinates.  Identity-image tokens
sit at negative time indices (subject k at time -k) with their spatial
coordinates shifted by a full grid (+w, +h), so no identity token can ever
share a position with a video token or with another subject's tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    axis_dims: tuple[int, int, int] | None = None  # (d_t, d_x, d_y)
    base: float = 10000.0

    def resolved_axis_dims(self) -> tuple[int, int, int]:
        if self.axis_dims is not None:
            dims = tuple(self.axis_dims)
        else:
            # time gets half the head dim, each spatial axis a quarter
            dims = (self.head_dim // 2, self.head_dim // 4, self.head_dim // 4)
        if sum(dims) != self.head_dim:
            raise ValueError(f"axis dims {dims} do not sum to head_dim {self.head_dim}")
        if any(d % 2 for d in dims):
            raise ValueError(f"axis dims must all be even, got {dims}")
        return dims


def video_positions(f: int, w: int, h: int) -> np.ndarray:
    """Grid of (t, x, y) triples for f*w*h video tokens, time outermost."""
    t, y, x = np.meshgrid(np.arange(f), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([t.ravel(), x.ravel(), y.ravel()], axis=1).astype(np.int64)


def identity_positions(k: int, w: int, h: int) -> np.ndarray:
    """Positions for subject k's image tokens: time -k, spatial shift (+w, +h)."""
    if k < 1:
        raise ValueError(f"subject index must be >= 1, got {k}")
    y, x = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    t = np.full(w * h, -k)
    return np.stack([t, x.ravel() + w, y.ravel() + h], axis=1).astype(np.int64)


def _pair_angles(positions: np.ndarray, config: RopeConfig) -> np.ndarray:
    """Rotation angle per (token, pair): [L, head_dim/2]."""
    dims = config.resolved_axis_dims()
    chunks = []
    for axis in range(3):
        da = dims[axis]
        if da == 0:
            continue
        m = np.arange(da // 2, dtype=np.float64)
        freqs = config.base ** (-2.0 * m / da)
        chunks.append(positions[:, axis:axis + 1].astype(np.float64) * freqs)
    return np.concatenate(chunks, axis=1)


def rotation_tables(positions: np.ndarray, config: RopeConfig, dtype=np.float64):
    """Per-pair cos/sin tables for a position grid: two [L, head_dim/2] arrays."""
    ang = _pair_angles(positions, config)
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def rotate(vector: np.ndarray, pos, config: RopeConfig) -> np.ndarray:
    """Rotate one head-dim vector to position pos = (t, x, y).

    Within each axis segment of size d_a the vector is treated as d_a/2
    two-dimensional pairs (first half, second half), each rotated by
    pos_axis * base**(-2m/d_a).  Norm-preserving by construction.
    """
    vector = np.asarray(vector)
    if vector.shape != (config.head_dim,):
        raise ValueError(f"expected vector of length {config.head_dim}, got {vector.shape}")
    pos = np.asarray(pos, dtype=np.int64).reshape(1, 3)
    cos, sin = rotation_tables(pos, config, dtype=vector.dtype)
    out = np.empty_like(vector)
    offset = 0
    pair = 0
    for da in config.resolved_axis_dims():
        half = da // 2
        u = vector[offset:offset + half]
        v = vector[offset + half:offset + da]
        c = cos[0, pair:pair + half]
        s = sin[0, pair:pair + half]
        out[offset:offset + half] = u * c - v * s
        out[offset + half:offset + da] = u * s + v * c
        offset += da
        pair += half
    return out


def apply_rotation(x: ag.Tensor, cos: np.ndarray, sin: np.ndarray,
                   config: RopeConfig) -> ag.Tensor:
    """Rotate taped activations [L, heads, head_dim] with precomputed tables.

    cos/sin are [L, head_dim/2] constants; they broadcast over heads.
    """
    pieces = []
    offset = 0
    pair = 0
    for da in config.resolved_axis_dims():
        half = da // 2
        u = ag.slice_axis(x, -1, offset, offset + half)
        v = ag.slice_axis(x, -1, offset + half, offset + da)
        c = cos[:, None, pair:pair + half]
        s = sin[:, None, pair:pair + half]
        pieces.append(ag.sub(ag.mul(u, c), ag.mul(v, s)))
        pieces.append(ag.add(ag.mul(u, s), ag.mul(v, c)))
        offset += da
        pair += half
    return ag.concat(pieces, axis=-1)
