"""End-to-end orchestration: configs, task wiring, training runs, ablations.

A run config is a plain nested dict (JSON on disk).  Training is staged:
the codec is overfit first on the dataset's pixel videos, latent statistics
are frozen, every sample is encoded once into its prepared layout, and the
flow model then trains on those cached latents.  All stage seeds derive
from the run seed, so identical configs yield byte-identical checkpoints.
"""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import asdict

import numpy as np

from .audio_net import AudioInjectConfig
from .backbone import BackboneConfig
from .errors import ConfigError
from .eval_metrics import (EvalRef, MetricsReport, evaluate, frame_error,
                           masked_region_error)
from .flow_match import NoiseSchedule, SamplerConfig, sample_flow, train_flow
from .latent_codec import CodecConfig, LatentCodec, PixelVideo, train_codec, untokenize
from .model import (CustomVideoModel, LatentStats, ModelConfig, PreparedSample,
                    load_checkpoint, save_checkpoint)
from .prompt_fusion import PromptSpec, Template
from .synth_data import SceneParams, TrainSample, generate_dataset, load_dataset
from .video_inject import ConditionVideo

TASKS = ("t2v", "single_subject", "multi_subject", "audio_custom", "video_custom")

DEFAULT_CONFIG = {
    "task": "single_subject",
    "dataset": "data/train",
    "out_dir": "runs/run0",
    "seed": 0,
    "template": "image_appended",
    "codec": {"spatial_factor": 8, "latent_channels": 16, "hidden_channels": 16,
              "train_steps": 400, "batch_size": 2, "learning_rate": 2e-3},
    "model": {"width": 128, "heads": 4, "blocks": 4, "text_width": 128,
              "mlp_ratio": 4},
    "ablation": {"identity_enhancement": True, "channel_concat": False,
                 "fusion_images": True},
    "schedule": {"m": 0.0, "s": 1.0},
    "train": {"steps": 300, "batch_size": 2, "learning_rate": 1e-3,
              "clip_norm": 1.0, "checkpoint_every": 0},
    "sample": {"steps": 50, "count": 4},
}

_OPTIONAL_SECTIONS = {"audio": "audio_custom", "video_inject": "video_custom"}


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge_config(out[key], value)
        else:
            out[key] = value
    return out


def apply_overrides(config: dict, pairs: list[str]) -> dict:
    """Apply `--set a.b=value` overrides, last one wins."""
    config = copy.deepcopy(config)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError("--set", f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "path traverses a non-dict value")
        node[parts[-1]] = value
    return config


def validate_config(config: dict) -> dict:
    """Fill defaults, check task/section compatibility; returns the resolved dict."""
    cfg = merge_config(DEFAULT_CONFIG, config)
    if cfg["task"] not in TASKS:
        raise ConfigError("task", f"must be one of {TASKS}, got {cfg['task']!r}")
    for section, task in _OPTIONAL_SECTIONS.items():
        if section in config and cfg["task"] != task:
            raise ConfigError(section,
                              f"section is only valid for task {task!r}, "
                              f"not {cfg['task']!r}")
    if cfg["ablation"]["channel_concat"] and cfg["ablation"]["identity_enhancement"]:
        raise ConfigError("ablation.channel_concat",
                          "channel concat replaces identity enhancement")
    if cfg["task"] == "audio_custom":
        cfg.setdefault("audio", {"lambda_a": 1.0, "width": 32, "heads": 1})
    if cfg["task"] == "video_custom":
        cfg.setdefault("video_inject", {"mode": "add", "align_hidden": None})
    if cfg["template"] not in ("image_appended", "image_embedded"):
        raise ConfigError("template", f"unknown template {cfg['template']!r}")
    out_env = os.environ.get("HCUSTOM_OUT")
    if out_env:
        cfg["out_dir"] = out_env
    return cfg


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=1)


def parse_config(text: str) -> dict:
    return json.loads(text)


def model_config_from(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    audio = cfg.get("audio", {})
    vid = cfg.get("video_inject", {})
    ab = cfg["ablation"]
    backbone = BackboneConfig(
        width=m["width"], heads=m["heads"], blocks=m["blocks"],
        latent_channels=cfg["codec"]["latent_channels"],
        text_width=m["text_width"], mlp_ratio=m["mlp_ratio"],
        gate_init=m.get("gate_init", 1.0))
    return ModelConfig(
        backbone=backbone,
        audio=AudioInjectConfig(lambda_a=audio.get("lambda_a", 1.0),
                                width=audio.get("width", 32),
                                heads=audio.get("heads", 1)),
        align_hidden=vid.get("align_hidden"),
        video_mode=vid.get("mode", "add"),
        identity_enhancement=ab["identity_enhancement"],
        channel_concat=ab["channel_concat"],
        fusion_images=ab["fusion_images"],
        seed=cfg["seed"],
    )


def codec_config_from(cfg: dict) -> CodecConfig:
    c = cfg["codec"]
    return CodecConfig(spatial_factor=c["spatial_factor"],
                       latent_channels=c["latent_channels"],
                       hidden_channels=c["hidden_channels"],
                       decoder_width=c.get("decoder_width", 1.5),
                       seed=cfg["seed"])


# ---------------------------------------------------------------------------
# task wiring


def spec_for_sample(sample: TrainSample, task: str, template: str) -> PromptSpec:
    if task == "t2v":
        return PromptSpec(sample.caption, [], Template(template))
    subjects = list(zip(sample.descriptors, sample.identity_images))
    if task in ("single_subject", "audio_custom", "video_custom"):
        subjects = subjects[:1]
    return PromptSpec(sample.caption, subjects, Template(template))


def condition_for_sample(sample: TrainSample) -> ConditionVideo:
    """Replacement-task conditioning: blank the subject region, keep background."""
    keep = (1 - sample.masks).astype(np.uint8)
    return ConditionVideo(sample.video, keep)


def prepare_samples(model: CustomVideoModel, codec: LatentCodec, stats: LatentStats,
                    samples: list[TrainSample], task: str,
                    template: str = "image_appended") -> list[PreparedSample]:
    prepared = []
    for s in samples:
        identity_images = [] if task == "t2v" else (
            s.identity_images if task == "multi_subject" else s.identity_images[:1])
        prepared.append(model.prepare(
            codec, stats,
            video=s.video,
            identity_images=identity_images,
            spec=spec_for_sample(s, task, template),
            audio=s.audio if task == "audio_custom" else None,
            condition=condition_for_sample(s) if task == "video_custom" else None))
    return prepared


def compute_latent_stats(codec: LatentCodec, samples: list[TrainSample]) -> LatentStats:
    from .latent_codec import tokenize
    tokens = [tokenize(codec.encode(s.video))[0] for s in samples]
    return LatentStats.from_tokens(np.concatenate(tokens, axis=0))


def sample_to_pixel(model: CustomVideoModel, codec: LatentCodec, stats: LatentStats,
                    ps: PreparedSample, sampler: SamplerConfig) -> PixelVideo:
    tokens = sample_flow(model, ps, sampler)
    latent = untokenize(stats.denormalize(tokens), ps.frames, ps.height, ps.width)
    return codec.decode(latent)


# ---------------------------------------------------------------------------
# runs


def codec_training_set(samples: list[TrainSample]):
    """Videos plus identity images (so the first-frame path and clean sprite
    renders are in distribution), with subject-focus masks for each."""
    videos = [s.video for s in samples]
    masks = [s.masks for s in samples]
    for s in samples:
        for img in s.identity_images:
            videos.append(img)
            sat = img.data.max(axis=-1) - img.data.min(axis=-1)
            masks.append((sat > 0.18).astype(np.uint8))
    return videos, masks


def run_training(cfg: dict, log=None) -> dict:
    """Stage A: codec; stage B: flow model.  Returns artifact paths."""
    cfg = validate_config(cfg)
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    samples = load_dataset(cfg["dataset"])
    codec = LatentCodec(codec_config_from(cfg))
    c = cfg["codec"]
    t0 = time.monotonic()
    codec_videos, codec_masks = codec_training_set(samples)
    codec_losses = train_codec(codec, codec_videos,
                               steps=c["train_steps"], batch_size=c["batch_size"],
                               learning_rate=c["learning_rate"], seed=cfg["seed"],
                               focus_masks=codec_masks,
                               focus_weight=c.get("focus_weight", 3.0),
                               log=(lambda step, loss: log(stage="codec", step=step,
                                                           loss=loss,
                                                           wall_time=time.monotonic() - t0))
                               if log else None)
    stats = compute_latent_stats(codec, samples)
    model = CustomVideoModel(model_config_from(cfg))
    prepared = prepare_samples(model, codec, stats, samples, cfg["task"],
                               cfg["template"])
    tr = cfg["train"]
    ckpt_path = os.path.join(out_dir, "checkpoint.hc")

    def save_intermediate(step):
        save_checkpoint(os.path.join(out_dir, f"checkpoint_step{step:06d}.hc"),
                        model, codec, stats, step)

    losses = train_flow(
        model, prepared, steps=tr["steps"], batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"], clip_norm=tr["clip_norm"],
        schedule=NoiseSchedule(**cfg["schedule"]), seed=cfg["seed"],
        checkpoint_cb=save_intermediate if tr["checkpoint_every"] else None,
        checkpoint_every=tr["checkpoint_every"] or None,
        log=(lambda **kw: log(stage="flow", **kw)) if log else None)
    save_checkpoint(ckpt_path, model, codec, stats, step=tr["steps"],
                    extra_meta={"task": cfg["task"]})
    curve_path = os.path.join(out_dir, "loss_curve.csv")
    with open(curve_path, "w") as f:
        f.write("step,loss\n")
        for i, loss in enumerate(losses):
            f.write(f"{i},{loss:.10g}\n")
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        f.write(serialize_config(cfg))
    return {"checkpoint": ckpt_path, "loss_curve": curve_path,
            "losses": losses, "codec_losses": codec_losses,
            "model": model, "codec": codec, "stats": stats,
            "prepared": prepared, "samples": samples, "config": cfg}


def sample_training_conditions(result: dict, count: int, sampler_steps: int,
                               seed: int = 0) -> tuple[list[PixelVideo], list[EvalRef]]:
    """Re-sample videos for the first `count` training items' conditioning."""
    model, codec, stats = result["model"], result["codec"], result["stats"]
    videos, refs = [], []
    for i, (ps, s) in enumerate(zip(result["prepared"], result["samples"])):
        if i >= count:
            break
        videos.append(sample_to_pixel(model, codec, stats, ps,
                                      SamplerConfig(steps=sampler_steps,
                                                    seed=seed * 7919 + i)))
        refs.append(EvalRef(identity_image=s.identity_images[0],
                            prompt=s.caption, source_video=s.video))
    return videos, refs


ABLATION_AXES = ("no_fusion", "no_identity_enhancement", "channel_concat",
                 "video_inject_concat")


def ablation_variant(cfg: dict, axis: str) -> dict:
    cfg = copy.deepcopy(cfg)
    ab = cfg["ablation"]
    if axis == "no_fusion":
        ab["fusion_images"] = False
    elif axis == "no_identity_enhancement":
        ab["identity_enhancement"] = False
    elif axis == "channel_concat":
        ab["identity_enhancement"] = False
        ab["channel_concat"] = True
    elif axis == "video_inject_concat":
        if cfg["task"] != "video_custom":
            raise ConfigError("ablate", "video_inject_concat requires task video_custom")
        cfg.setdefault("video_inject", {"mode": "add", "align_hidden": None})
        cfg["video_inject"]["mode"] = "concat"
    else:
        raise ConfigError("ablate", f"unknown axis {axis!r}; choose from {ABLATION_AXES}")
    return cfg


def _run_metrics(result: dict, n_eval: int, sampler_steps: int) -> dict:
    videos, refs = sample_training_conditions(result, n_eval, sampler_steps)
    report = evaluate(videos, refs)
    first_frame = float(np.mean([
        frame_error(v.data[0], s.video.data[0])
        for v, s in zip(videos, result["samples"][:len(videos)])]))
    out = {"metrics": report.as_columns(), "first_frame_error": first_frame,
           "missing_detections": report.missing_detections}
    if result["config"]["task"] == "video_custom":
        bg = [masked_region_error(v.data, s.video.data[:v.frames],
                                  (1 - s.masks[:v.frames]))
              for v, s in zip(videos, result["samples"][:len(videos)])]
        out["background_error"] = float(np.mean(bg))
    return out


def run_ablation(cfg: dict, axis: str, log=None, n_eval: int = 8,
                 sampler_steps: int = 30) -> dict:
    """Seed-matched pair of runs differing only in the ablated flag."""
    cfg = validate_config(cfg)
    base_cfg = copy.deepcopy(cfg)
    base_cfg["out_dir"] = os.path.join(cfg["out_dir"], "base")
    variant_cfg = ablation_variant(cfg, axis)
    variant_cfg["out_dir"] = os.path.join(cfg["out_dir"], axis)
    base = run_training(base_cfg, log=log)
    variant = run_training(variant_cfg, log=log)
    base_m = _run_metrics(base, n_eval, sampler_steps)
    var_m = _run_metrics(variant, n_eval, sampler_steps)
    deltas = {}
    for key, bval in base_m["metrics"].items():
        vval = var_m["metrics"].get(key)
        if bval is not None and vval is not None:
            deltas[key] = bval - vval
    report = {"axis": axis, "base": base_m, "variant": var_m, "deltas": deltas,
              "base_first_frame_error": base_m["first_frame_error"],
              "variant_first_frame_error": var_m["first_frame_error"]}
    os.makedirs(cfg["out_dir"], exist_ok=True)
    with open(os.path.join(cfg["out_dir"], f"ablation_{axis}.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True, default=float)
    report["_base_result"] = base
    report["_variant_result"] = variant
    return report


def default_scene(cfg_scene: dict | None = None) -> SceneParams:
    return SceneParams(**cfg_scene) if cfg_scene else SceneParams()


def run_generate_data(out_dir: str, count: int, seed: int,
                      scene: SceneParams = SceneParams(),
                      subjects_per_sample: int = 1) -> list[str]:
    return generate_dataset(out_dir, count, seed, scene, subjects_per_sample)
