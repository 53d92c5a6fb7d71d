"""Flow-matching objective with logit-normal timesteps and an Euler sampler.

Convention fixed project-wide: t = 0 is pure noise, t = 1 is data, so the
linear path z_t = (1-t) z_0 + t z_1 has constant velocity u = z_1 - z_0
pointing toward the data.  Only video tokens are noised and only video
tokens enter the loss; identity tokens stay clean during training and are
held fixed by the sampler.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import NumericalFailureError
from .model import CustomVideoModel, PreparedSample
from .nn import Adam

DIVERGENCE_LIMIT = 1e3


@dataclass(frozen=True)
class NoiseSchedule:
    """Logit-normal parameters for timestep sampling."""

    m: float = 0.0
    s: float = 1.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError(f"logit-normal scale must be positive, got {self.s}")

    def sample_t(self, rng: np.random.Generator) -> float:
        x = self.m + self.s * rng.standard_normal()
        return float(1.0 / (1.0 + np.exp(-x)))


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"sampler needs at least one step, got {self.steps}")


def interpolate(z0: np.ndarray, z1: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear path point z_t and its (t-independent) velocity u."""
    z0 = np.asarray(z0)
    z1 = np.asarray(z1)
    if z0.shape != z1.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {z1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return (1.0 - t) * z0 + t * z1, z1 - z0


def flow_loss_t(model: CustomVideoModel, ps: PreparedSample, t: float,
                z0: np.ndarray) -> ag.Tensor:
    """Taped loss for one sample: MSE of predicted vs true velocity on video tokens."""
    if ps.z1 is None:
        raise ValueError("prepared sample has no clean latent; not a training sample")
    zt, u = interpolate(z0, ps.z1, t)
    v = model.velocity_t(ps, ag.Tensor(zt.astype(model.store.dtype)), t)
    n_id = v.shape[0] - ps.n_video_tokens
    v_video = ag.slice_axis(v, 0, n_id, v.shape[0]) if n_id else v
    diff = ag.sub(v_video, u.astype(model.store.dtype))
    return ag.mean_(ag.mul(diff, diff))


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=[0, 0, 0, step]))


def train_flow(model: CustomVideoModel, samples: list[PreparedSample], *,
               steps: int, batch_size: int = 2, learning_rate: float = 1e-3,
               clip_norm: float = 1.0, schedule: NoiseSchedule = NoiseSchedule(),
               seed: int = 0, checkpoint_cb=None, checkpoint_every: int | None = None,
               log=None) -> list[float]:
    """Seed-deterministic training loop; returns the loss curve.

    Every random draw comes from a per-step counter-based generator keyed on
    (seed, step), so two runs with the same arguments produce identical
    curves and identical parameters.
    """
    if not samples:
        raise ValueError("dataset is empty")
    opt = Adam(model.store, lr=learning_rate, clip_norm=clip_norm)
    losses = []
    t_start = time.monotonic()
    for step in range(steps):
        rng = _step_rng(seed, step)
        idx = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
        model.store.zero_grad()
        total = 0.0
        for i in idx:
            ps = samples[int(i)]
            t = schedule.sample_t(rng)
            z0 = rng.standard_normal(ps.z1.shape).astype(model.store.dtype)
            loss = ag.mul(flow_loss_t(model, ps, t, z0), 1.0 / len(idx))
            loss.backward()
            total += float(loss.data)
        if not np.isfinite(total):
            raise NumericalFailureError(f"loss became non-finite at step {step}")
        if total > DIVERGENCE_LIMIT:
            raise NumericalFailureError(f"training diverged at step {step}: loss={total}")
        opt.step()
        losses.append(total)
        if log is not None:
            log(step=step, loss=total, wall_time=time.monotonic() - t_start)
        if (checkpoint_cb is not None and checkpoint_every
                and (step + 1) % checkpoint_every == 0):
            checkpoint_cb(step + 1)
    return losses


def sample_flow(model: CustomVideoModel, ps: PreparedSample,
                sampler: SamplerConfig) -> np.ndarray:
    """Euler-integrate the learned velocity field from noise to data.

    Returns normalized video latent tokens [f*wh, c]; identity tokens are
    held fixed inside the model assembly and never integrate.
    """
    rng = np.random.default_rng(sampler.seed)
    z = rng.standard_normal((ps.n_video_tokens,
                             model.config.backbone.latent_channels))
    z = z.astype(model.store.dtype)
    dt = 1.0 / sampler.steps
    with ag.no_grad():
        for k in range(sampler.steps):
            t = k / sampler.steps
            v = model.velocity_t(ps, ag.Tensor(z), t)
            n_id = v.shape[0] - ps.n_video_tokens
            v_video = v.data[n_id:] if n_id else v.data
            z = z + dt * v_video
    return z
