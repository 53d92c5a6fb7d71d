"""Command-line harness: gen-data, train, sample, evaluate, ablate,
inspect-positions.

Exit codes: 0 success, 2 configuration/usage problems (the message names the
offending field), 1 runtime failure.  Progress goes to stderr as
line-delimited JSON records; artifacts land in the run's output directory.
The HCUSTOM_OUT environment variable overrides configured output
directories.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .audio_net import load_track
from .container import load_container
from .errors import ConfigError, HCustomError
from .eval_metrics import EvalRef, evaluate
from .flow_match import SamplerConfig
from .latent_codec import PixelVideo
from .model import load_checkpoint
from .pipeline import (ABLATION_AXES, apply_overrides, parse_config,
                       run_ablation, run_generate_data, run_training,
                       sample_to_pixel, validate_config)
from .prompt_fusion import PromptSpec, Template
from .rope3d import identity_positions, video_positions
from .synth_data import SceneParams, load_sample
from .video_inject import ConditionVideo


def _emit(**record):
    print(json.dumps(record, sort_keys=True, default=float), file=sys.stderr)


def _load_config(path: str, overrides: list[str]) -> dict:
    try:
        with open(path) as f:
            cfg = parse_config(f.read())
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("config", f"invalid JSON in {path}: {e}")
    return apply_overrides(cfg, overrides or [])


def cmd_gen_data(args) -> int:
    out = os.environ.get("HCUSTOM_OUT") or args.out
    scene = SceneParams(frames=args.frames, size=args.size,
                        caption_style=args.caption_style)
    paths = run_generate_data(out, args.count, args.seed, scene,
                              subjects_per_sample=args.subjects)
    _emit(event="gen-data", count=len(paths), out=out)
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set)
    if args.codec_config:
        with open(args.codec_config) as f:
            cfg["codec"] = {**cfg.get("codec", {}), **json.load(f)}
    result = run_training(cfg, log=_emit)
    _emit(event="train-done", checkpoint=result["checkpoint"],
          final_loss=result["losses"][-1] if result["losses"] else None)
    print(result["checkpoint"])
    return 0


def _parse_subject(spec: str) -> tuple[str, str]:
    fields = dict(part.split("=", 1) for part in spec.split(",") if "=" in part)
    if "name" not in fields or "image" not in fields:
        raise ConfigError("--subject", f"expected name=<word>,image=<path>, got {spec!r}")
    return fields["name"], fields["image"]


def cmd_sample(args) -> int:
    model, codec, stats, step, _ = load_checkpoint(args.ckpt)
    subjects = []
    for spec in args.subject or []:
        word, image_path = _parse_subject(spec)
        subjects.append((word, PixelVideo.load(image_path)))
    template = Template.image_embedded if args.template == "embedded" \
        else Template.image_appended
    prompt_spec = PromptSpec(args.prompt, subjects, template)
    audio = load_track(args.audio) if args.audio else None
    if args.lambda_audio is not None:
        model.audio_injector.config = dataclasses.replace(
            model.audio_injector.config, lambda_a=args.lambda_audio)
    condition = None
    if args.condition_video:
        mask = None
        if args.condition_mask:
            arrays, _ = load_container(args.condition_mask)
            mask = arrays["mask"]
        condition = ConditionVideo(PixelVideo.load(args.condition_video), mask)
    if args.video_inject_mode:
        model.config = dataclasses.replace(model.config,
                                           video_mode=args.video_inject_mode)
    ps = model.prepare(codec, stats,
                       identity_images=[img for _, img in subjects],
                       spec=prompt_spec, audio=audio, condition=condition,
                       frames=args.frames,
                       size=(args.size, args.size) if args.size else None)
    video = sample_to_pixel(model, codec, stats, ps,
                            SamplerConfig(steps=args.steps, seed=args.seed))
    video.save(args.out)
    _emit(event="sample-done", out=args.out, frames=video.frames, ckpt_step=step)
    print(args.out)
    return 0


def cmd_evaluate(args) -> int:
    names = sorted(n for n in os.listdir(args.videos) if n.endswith(".hc"))
    if not names:
        raise ConfigError("--videos", f"no .hc video containers in {args.videos}")
    videos, refs = [], []
    for name in names:
        videos.append(PixelVideo.load(os.path.join(args.videos, name)))
        ref_path = os.path.join(args.refs, name)
        if not os.path.exists(ref_path):
            raise ConfigError("--refs", f"missing reference sample for {name}")
        ref = load_sample(ref_path)
        refs.append(EvalRef(identity_image=ref.identity_images[0],
                            prompt=ref.caption, source_video=ref.video))
    report = evaluate(videos, refs)
    report.save(args.report)
    print(report.render_table("hcustom"))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args.set)
    report = run_ablation(cfg, args.axis, log=_emit, n_eval=args.eval_count,
                          sampler_steps=args.sampler_steps)
    summary = {k: v for k, v in report.items() if not k.startswith("_")}
    print(json.dumps(summary, indent=1, sort_keys=True, default=float))
    return 0


def cmd_inspect_positions(args) -> int:
    try:
        w, h, f = (int(x) for x in args.latent.lower().split("x"))
    except ValueError:
        raise ConfigError("--latent", f"expected WxHxF, got {args.latent!r}")
    rows = []
    for k in range(1, args.subjects + 1):
        for t, x, y in identity_positions(k, w, h):
            rows.append(("identity-%d" % k, t, x, y))
    for t, x, y in video_positions(f, w, h):
        rows.append(("video", t, x, y))
    print(f"{'segment':<12} {'t':>4} {'x':>4} {'y':>4}")
    for segment, t, x, y in rows:
        print(f"{segment:<12} {t:>4} {x:>4} {y:>4}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hcustom",
        description="Desk-scale multi-modal conditioned video generation harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic sprite dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=33)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--caption-style", choices=("full", "plain"), default="full")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train codec then flow model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--codec-config", help="JSON file overriding the codec section")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry (dotted path, last wins)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate a video from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--subject", action="append",
                   metavar="name=<word>,image=<path>")
    p.add_argument("--template", choices=("embedded", "appended"), default="appended")
    p.add_argument("--audio")
    p.add_argument("--lambda-audio", type=float, default=None)
    p.add_argument("--condition-video")
    p.add_argument("--condition-mask")
    p.add_argument("--video-inject-mode", choices=("add", "concat"), default=None)
    p.add_argument("--frames", type=int, default=33)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("evaluate", help="score generated videos against references")
    p.add_argument("--videos", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train a seed-matched pair differing in one flag")
    p.add_argument("--axis", required=True, choices=ABLATION_AXES)
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--eval-count", type=int, default=8)
    p.add_argument("--sampler-steps", type=int, default=30)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect-positions",
                       help="print the rotary position grid for a config")
    p.add_argument("--subjects", type=int, default=1)
    p.add_argument("--latent", required=True, metavar="WxHxF")
    p.set_defaults(func=cmd_inspect_positions)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except HCustomError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
