"""Train the full conditioned model on a few clips, then sample.

Small enough to finish in about a minute; the acceptance suite runs the
same loop at a larger scale.
"""

import numpy as np

from hcustom.eval_metrics import EvalRef, evaluate
from hcustom.flow_match import SamplerConfig, train_flow
from hcustom.latent_codec import CodecConfig, LatentCodec, train_codec
from hcustom.model import CustomVideoModel
from hcustom.pipeline import (compute_latent_stats, model_config_from,
                              prepare_samples, sample_to_pixel, validate_config)
from hcustom.synth_data import SceneParams, generate_sample, identity_pool

scene = SceneParams(frames=9, size=32)
pool = identity_pool(seed=0, count=4, sizes=(10, 13))
samples = [generate_sample(pool[i], scene, seed=i) for i in range(4)]

codec = LatentCodec(CodecConfig(spatial_factor=8, latent_channels=16,
                                hidden_channels=16, seed=0))
closs = train_codec(codec, [s.video for s in samples], steps=120, batch_size=2,
                    learning_rate=2e-3, seed=0)
print(f"codec loss {closs[0]:.4f} -> {closs[-1]:.4f}")

stats = compute_latent_stats(codec, samples)
cfg = validate_config({"task": "single_subject", "dataset": "-", "out_dir": "-",
                       "model": {"width": 64, "heads": 4, "blocks": 2,
                                 "text_width": 64, "mlp_ratio": 4}})
model = CustomVideoModel(model_config_from(cfg))
prepared = prepare_samples(model, codec, stats, samples, "single_subject")
losses = train_flow(model, prepared, steps=120, batch_size=2, seed=0)
print(f"flow loss {losses[0]:.4f} -> {np.mean(losses[-5:]):.4f}")

videos, refs = [], []
for i in range(2):
    videos.append(sample_to_pixel(model, codec, stats, prepared[i],
                                  SamplerConfig(steps=30, seed=i)))
    refs.append(EvalRef(identity_image=samples[i].identity_images[0],
                        prompt=samples[i].caption))
report = evaluate(videos, refs)
print(report.render_table("demo"))
print("(short run: quality is rough; see the acceptance suite for the full overfit)")
