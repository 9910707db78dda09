"""Command-line entry point.

Every command exits 0 on success. Failures print a single line
``error: <code>: <message>`` to stderr and exit nonzero.
"""

import argparse
import glob
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import __version__
from .audio_features import extract_features, load_audio, load_vcf, save_vcf
from .config import dump_config, load_config
from .exceptions import ConductorError, ConfigError
from .inference import (
    export_for_pose_transfer,
    generate_motion,
    mux_video,
    render_skeleton,
    smooth_motion,
    sync_score,
)
from .models import load_checkpoint, read_checkpoint, save_checkpoint
from .motion_data import load_corpus, load_manifest, load_motion, make_synthetic_dataset, save_motion
from .training import pair_accuracy, train_amc, train_generator

log = logging.getLogger("conductor_motion")

CONFIG_ECHO = "config.echo"
METRICS = "metrics.jsonl"
CKPT_LATEST = "ckpt_latest"
CKPT_BEST = "ckpt_best"


def warn(message):
    print(f"warning: {message}", file=sys.stderr)


# --- features ----------------------------------------------------------------


def _audio_inputs(paths):
    found = []
    for p in paths:
        if os.path.isdir(p):
            found += sorted(glob.glob(os.path.join(p, "*.wav")))
        else:
            found.append(p)
    return found


def cmd_features(args):
    cfg = load_config(args.config)
    os.makedirs(args.output, exist_ok=True)
    files = _audio_inputs(args.inputs)
    warnings = 0
    if not files:
        warn(f"no audio files found in {', '.join(args.inputs)}")
        warnings += 1
    written = 0
    for path in files:
        try:
            seq = extract_features(load_audio(path, cfg.features.sample_rate), cfg.features)
        except Exception as exc:  # unreadable or too-short audio is skipped, not fatal
            warn(f"skipping {path}: {exc}")
            warnings += 1
            continue
        out = os.path.join(args.output, os.path.splitext(os.path.basename(path))[0] + ".vcf")
        save_vcf(seq, out)
        written += 1
    print(json.dumps({"written": written, "warnings": warnings}))
    return 0


# --- synthetic data ------------------------------------------------------------


def cmd_synth(args):
    cfg = load_config(args.config)
    make_synthetic_dataset(
        args.clips,
        args.seconds,
        (args.bpm_min, args.bpm_max),
        seed=args.seed,
        out_dir=args.output,
        feature_cfg=cfg.features,
    )
    manifest = load_manifest(os.path.join(args.output, "manifest.json"))
    manifest.validate(root=args.output)
    print(json.dumps({"clips": len(manifest.entries), "manifest": os.path.join(args.output, "manifest.json")}))
    return 0


# --- training --------------------------------------------------------------------


class RunDir:
    """Fixed run-directory layout with JSONL metrics and resumable checkpoints."""

    def __init__(self, path):
        self.path = path
        os.makedirs(path, exist_ok=True)
        self.best = None

    def file(self, name):
        return os.path.join(self.path, name)

    def resume_state(self):
        if not os.path.exists(self.file(CKPT_LATEST)):
            return None
        bundle, header, state = read_checkpoint(self.file(CKPT_LATEST))
        state["bundle"] = bundle
        self.best = header["extra"].get("best")
        self._truncate_metrics(state["iteration"])
        return state

    def _truncate_metrics(self, iteration):
        path = self.file(METRICS)
        if not os.path.exists(path):
            return
        with open(path) as fh:
            keep = [line for line in fh if line.strip() and json.loads(line)["iter"] < iteration]
        with open(path, "w") as fh:
            fh.writelines(keep)

    def logger(self):
        fh = open(self.file(METRICS), "a")

        def write(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        return write, fh

    def checkpoint(self, bundle, payload, score, lower_is_better):
        better = self.best is None or (score < self.best if lower_is_better else score > self.best)
        if better:
            self.best = score
        extra = {"iteration": payload["iteration"], "score": score, "best": self.best}
        log.info("checkpoint at iteration %d, score %.4f (best %.4f)", payload["iteration"], score, self.best)
        save_checkpoint(bundle, self.file(CKPT_LATEST), extra=extra, state=payload)
        if better:
            save_checkpoint(bundle, self.file(CKPT_BEST), extra=extra)


def _training_config(args, section):
    """Load the config, then apply command-line overrides; ``VC_SEED`` still takes precedence."""
    cfg = load_config(args.config)
    changes = {k: getattr(args, k) for k in ("iterations", "seed") if getattr(args, k) is not None}
    if "seed" in changes and os.environ.get("VC_SEED", ""):
        del changes["seed"]
    if changes:
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **changes)})
    if args.checkpoint_every is not None:
        cfg = replace(cfg, run=replace(cfg.run, checkpoint_every=args.checkpoint_every))
    return cfg


def _echo_config(run, cfg, args):
    dump_config(cfg, run.file(CONFIG_ECHO))
    with open(run.file("command.json"), "w") as fh:
        json.dump({"argv": sys.argv[1:], "manifest": os.path.abspath(args.manifest)}, fh, indent=1)


def _corpora(manifest_path):
    manifest = load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    train = load_corpus(manifest, root, "train")
    val = load_corpus(manifest, root, "val") if manifest.split.get("val") else None
    return train, val


def cmd_train_amc(args):
    cfg = _training_config(args, "amc")
    train, val = _corpora(args.manifest)
    cfg = cfg.with_channels(train.features[0].shape[1], train.motions[0].shape[1])
    run = RunDir(args.output)
    _echo_config(run, cfg, args)
    resume = None if args.restart else run.resume_state()
    if resume is None and os.path.exists(run.file(METRICS)):
        os.remove(run.file(METRICS))
    recent = []

    def on_ckpt(bundle, payload):
        if val is not None:
            score = pair_accuracy(bundle, val, window=cfg.amc.window, scale_range=cfg.amc.scale_range)
            bundle.train()
            run.checkpoint(bundle, payload, score, lower_is_better=False)
        else:
            run.checkpoint(bundle, payload, float(np.mean(recent[-50:])), lower_is_better=True)

    write, fh = run.logger()

    def log_rec(rec):
        recent.append(rec["loss_amc"])
        write(rec)

    try:
        bundle, records = train_amc(
            train, cfg.model, cfg.amc, resume=resume, log=log_rec,
            on_checkpoint=on_ckpt, checkpoint_every=cfg.run.checkpoint_every,
        )  # fmt: skip
    finally:
        fh.close()
    summary = {"iterations": cfg.amc.iterations, "logged": len(records)}
    if val is not None:
        summary["val_accuracy"] = pair_accuracy(bundle, val, window=cfg.amc.window)
    print(json.dumps(summary))
    return 0


def cmd_train_gen(args):
    cfg = _training_config(args, "gen")
    if not os.path.exists(args.amc_ckpt):
        raise FileNotFoundError(f"AMC checkpoint not found: {args.amc_ckpt}")
    amc = load_checkpoint(args.amc_ckpt, stage="amc")
    train, _ = _corpora(args.manifest)
    run = RunDir(args.output)
    _echo_config(run, cfg, args)
    resume = None if args.restart else run.resume_state()
    if resume is None and os.path.exists(run.file(METRICS)):
        os.remove(run.file(METRICS))
    recent = []
    write, fh = run.logger()

    def log_rec(rec):
        recent.append(rec["loss_per"])
        write(rec)

    def on_ckpt(bundle, payload):
        run.checkpoint(bundle, payload, float(np.mean(recent[-50:])), lower_is_better=True)

    try:
        _, records = train_generator(
            train, amc, cfg.gen, resume=resume, log=log_rec,
            on_checkpoint=on_ckpt, checkpoint_every=cfg.run.checkpoint_every,
        )  # fmt: skip
    finally:
        fh.close()
    print(json.dumps({"iterations": cfg.gen.iterations, "logged": len(records)}))
    return 0


# --- generation and evaluation ---------------------------------------------------


def cmd_generate(args):
    cfg = load_config(args.config)
    bundle = load_checkpoint(args.gen_ckpt, stage="generator")
    os.makedirs(args.output, exist_ok=True)
    t0 = time.perf_counter()
    motion = generate_motion(args.audio, bundle, cfg.inference, cfg.features)
    motion = smooth_motion(motion, cfg.inference.smooth_window)
    elapsed = time.perf_counter() - t0
    save_motion(motion, os.path.join(args.output, "motion.json"))
    summary = {"frames": len(motion), "fps": motion.fps, "generation_seconds": round(elapsed, 3)}
    if args.export_pose:
        summary["pose_export"] = export_for_pose_transfer(motion, os.path.join(args.output, "pose_coco17.json"))
    if args.frames or args.video:
        frame_dir = os.path.join(args.output, "frames")
        render_skeleton(motion, frame_dir, cfg.inference.canvas, workers=args.workers)
        summary["frame_dir"] = frame_dir
        if args.video:
            video = os.path.join(args.output, "skeleton.mp4")
            if mux_video(frame_dir, motion.fps, video):
                summary["video"] = video
            else:
                warn("ffmpeg not found; frames written, video skipped")
    print(json.dumps(summary))
    return 0


def cmd_eval_sync(args):
    bundle = load_checkpoint(args.amc_ckpt, stage="amc")
    feats = load_vcf(args.features)
    motion = load_motion(args.motion)
    mean, scores = sync_score(feats, motion, bundle, args.window, args.stride)
    doc = {
        "mean_score": mean,
        "window": args.window,
        "stride": args.stride,
        "starts": [int(s) for s in range(0, len(scores) * args.stride, args.stride)],
        "scores": [float(s) for s in scores],
    }
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump(doc, fh, indent=1)
    print(f"{mean:.6f}")
    if not args.json_out:
        print(json.dumps(doc))
    return 0


def cmd_plot_metrics(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(args.metrics) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    keys = [k for k in ("loss_mse", "loss_per", "w_estimate", "loss_amc") if recs and k in recs[0]]
    fig, axes = plt.subplots(len(keys), 1, figsize=(7, 2.2 * len(keys)), sharex=True, squeeze=False)
    it = [r["iter"] for r in recs]
    for ax, k in zip(axes[:, 0], keys):
        ax.plot(it, [r[k] for r in recs], lw=0.8)
        ax.set_ylabel(k)
    axes[-1, 0].set_xlabel("iteration")
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(json.dumps({"plot": args.output, "curves": keys}))
    return 0


# --- parser ------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument errors follow the same one-line format as runtime errors."""

    def error(self, message):
        self.exit(2, f"error: usage: {self.prog}: {message}\n")


def build_parser():
    p = _Parser(prog="conductor-motion", description="Music-driven conductor motion toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("features", help="extract .vcf feature files from WAV audio")
    s.add_argument("inputs", nargs="+", help="WAV files or directories of WAV files")
    s.add_argument("-o", "--output", required=True, help="output directory for .vcf files")
    s.add_argument("--config", help="YAML run config (features section is used)")
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("synth", help="write a synthetic beat-locked dataset and manifest")
    s.add_argument("--clips", type=int, default=20, help="number of clips")
    s.add_argument("--seconds", type=float, default=30.0, help="clip duration in seconds (>= 10)")
    s.add_argument("--seed", type=int, default=0, help="dataset seed")
    s.add_argument("--bpm-min", type=float, default=80.0, help="lowest tempo drawn")
    s.add_argument("--bpm-max", type=float, default=140.0, help="highest tempo drawn")
    s.add_argument("--config", help="YAML run config (features section is used)")
    s.add_argument("-o", "--output", required=True, help="dataset directory")
    s.set_defaults(func=cmd_synth)

    for name, func, help_ in (
        ("train-amc", cmd_train_amc, "train the audio-motion correspondence net"),
        ("train-gen", cmd_train_gen, "train the motion generator"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="YAML run config")
        s.add_argument("--manifest", required=True, help="dataset manifest.json")
        if name == "train-gen":
            s.add_argument("--amc-ckpt", required=True, help="stage-amc checkpoint to transfer from")
        s.add_argument("-o", "--output", required=True, help="run directory")
        s.add_argument("--restart", action="store_true", help="ignore ckpt_latest and start from scratch")
        s.add_argument("--iterations", type=int, help="override the configured iteration count")
        s.add_argument("--seed", type=int, help="override the configured seed (VC_SEED wins over both)")
        s.add_argument("--checkpoint-every", type=int, help="override run.checkpoint_every")
        s.set_defaults(func=func)

    s = sub.add_parser("generate", help="generate conductor motion for an audio file")
    s.add_argument("audio", help="input WAV file")
    s.add_argument("--gen-ckpt", required=True, help="stage-generator checkpoint")
    s.add_argument("-o", "--output", required=True, help="output directory")
    s.add_argument("--config", help="YAML run config (features and inference sections)")
    s.add_argument("--frames", action="store_true", help="render skeleton frames as PNG")
    s.add_argument("--video", action="store_true", help="also encode frames with ffmpeg when available")
    s.add_argument("--export-pose", action="store_true", help="write COCO-17 keypoints for pose transfer")
    s.add_argument("--workers", type=int, default=1, help="rendering threads")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval-sync", help="score music-motion synchronization with an AMC checkpoint")
    s.add_argument("--amc-ckpt", required=True, help="stage-amc checkpoint")
    s.add_argument("--features", required=True, help=".vcf feature file")
    s.add_argument("--motion", required=True, help="motion JSON file")
    s.add_argument("--window", type=int, default=60, help="window length in frames")
    s.add_argument("--stride", type=int, default=30, help="window stride in frames")
    s.add_argument("--json-out", help="write per-window scores here instead of stdout")
    s.set_defaults(func=cmd_eval_sync)

    s = sub.add_parser("plot-metrics", help="plot loss and Wasserstein curves from metrics.jsonl")
    s.add_argument("metrics", help="metrics.jsonl from a run directory")
    s.add_argument("-o", "--output", required=True, help="output image path")
    s.set_defaults(func=cmd_plot_metrics)
    return p


def _error_code(exc):
    if isinstance(exc, ConductorError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return "not-found"
    if isinstance(exc, PermissionError):
        return "permission-denied"
    return "internal"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConductorError, ConfigError, OSError, ValueError) as exc:
        message = str(exc).replace("\n", " ")
        print(f"error: {_error_code(exc)}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
