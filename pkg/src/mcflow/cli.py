"""Command line exposing every pipeline stage as a subcommand.

One binary, JSON config, mandatory seeds on stochastic paths.  Thread
caps are applied from MCFLOW_THREADS (default 1) before numpy loads so
BLAS pools obey them.
"""

import os
import sys


def _configure_threads():
    raw = os.environ.get("MCFLOW_THREADS", "").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"error: MCFLOW_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise SystemExit(f"error: MCFLOW_THREADS must be >= 1, got {n}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


_configure_threads()

import argparse
import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .chunking import KeyframeRequest, snap_keyframes, keyframe_latent_positions
from .codec import encode_video
from .data import default_cut, make_scenarios, synth_video
from .dit import ModelConfig, load_model, save_model
from .dsr import DegradeParams, sr_sample, train_sr
from .flowgen import generate, train_gen
from .mcrope import mc_temporal_indices
from .metrics import collapse_ratings, gsb, keyframe_adherence, psnr, ssim
from .video import Video, dump_frames_pgm, load_pgm, load_video, save_video


@dataclass(frozen=True)
class RunConfig:
    seed: int
    model_dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    lr: float = 3e-3
    steps: int = 1700
    batch: int = 1
    height: int = 32
    width: int = 32
    channels: int = 1


def load_run_config(path) -> RunConfig:
    """Parse a JSON RunConfig; seed is mandatory, unknown keys rejected."""
    with open(path) as f:
        obj = json.load(f)
    if not isinstance(obj, dict):
        raise ValueError(f"config must be a JSON object, got {type(obj).__name__}")
    known = {f.name: f.type for f in fields(RunConfig)}
    unknown = sorted(set(obj) - set(known))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    if "seed" not in obj:
        raise ValueError('config is missing required key "seed"')
    for key, val in obj.items():
        if key == "lr":
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ValueError(f"config key {key} must be a number, got {val!r}")
        elif isinstance(val, bool) or not isinstance(val, int):
            raise ValueError(f"config key {key} must be an integer, got {val!r}")
    return RunConfig(**obj)


def _model_config(run: RunConfig, n_scenarios: int) -> ModelConfig:
    return ModelConfig(
        model_dim=run.model_dim,
        n_layers=run.n_layers,
        n_heads=run.n_heads,
        n_scenarios=n_scenarios,
        in_channels=run.channels,
    )


def _parse_int_list(text: str, flag: str) -> tuple:
    try:
        items = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated integers, got {text!r}")
    if not items:
        raise ValueError(f"{flag} must not be empty")
    return items


def _scenario_dirs(data_dir) -> list:
    root = Path(data_dir)
    dirs = sorted(p for p in root.glob("scenario_*") if p.is_dir())
    if not dirs:
        raise ValueError(f"no scenario_* directories under {root}")
    return dirs


def _load_scenario(path) -> tuple:
    video = load_video(path / "video.mcvd")
    req = KeyframeRequest.from_json((path / "request.json").read_text())
    if req.total_frames != video.frames:
        raise ValueError(
            f"{path.name}: request covers {req.total_frames} frames, video has {video.frames}"
        )
    return video, req


def _check_dims(video: Video, run: RunConfig, name: str):
    want = (run.channels, run.height, run.width)
    got = (video.channels, video.height, video.width)
    if got != want:
        raise ValueError(f"{name}: video dims {got} do not match config {want}")


def _read_keyframe_images(frames_dir, indices) -> list:
    return [load_pgm(Path(frames_dir) / f"frame_{k:05d}.pgm") for k in indices]


def _write_rows(rows, out_path):
    text = "metric,name,value\n" + "".join(f"{m},{n},{v!r}\n" for m, n, v in rows)
    if out_path is None:
        sys.stdout.write(text)
    else:
        Path(out_path).write_text(text)


def cmd_make_data(args) -> int:
    if args.channels != 1:
        raise ValueError("frame dumps are single-channel PGM; use --channels 1")
    cut = default_cut(args.length) if args.cut is None else args.cut
    keyframes = (0,) if cut is None else (0, cut)
    req = KeyframeRequest(args.length, keyframes)
    snap_keyframes(req)  # fail fast on inadmissible totals
    out = Path(args.out)
    scenarios = make_scenarios(args.n, args.length, args.height, args.width, cut, args.seed)
    for s in scenarios:
        video, _, caption = synth_video(s, args.height, args.width, args.channels)
        d = out / f"scenario_{s.id:03d}"
        d.mkdir(parents=True, exist_ok=True)
        save_video(d / "video.mcvd", video)
        (d / "caption.json").write_text(caption.to_json())
        (d / "request.json").write_text(req.to_json())
        dump_frames_pgm(video, d / "frames")
    print(f"wrote {len(scenarios)} scenarios under {out}")
    return 0


def cmd_chunk_plan(args) -> int:
    req = KeyframeRequest(args.total, _parse_int_list(args.keyframes, "--keyframes"))
    plan = snap_keyframes(req)
    print(
        json.dumps(
            {
                "total_frames": plan.total_frames,
                "keyframes": list(plan.starts),
                "offsets": list(plan.offsets),
                "lengths": list(plan.lengths),
                "latent_lengths": list(plan.latent_lengths),
                "keyframe_latent_positions": list(keyframe_latent_positions(plan)),
            },
            indent=1,
        )
    )
    return 0


def cmd_rope_dump(args) -> int:
    lengths = _parse_int_list(args.lengths, "--lengths")
    u = mc_temporal_indices(lengths)
    chunk_of = np.repeat(np.arange(len(lengths)), lengths)
    lines = ["index,chunk,u"]
    lines += [f"{i},{int(chunk_of[i])},{float(u[i])!r}" for i in range(len(u))]
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return 0


def cmd_gen_train(args) -> int:
    run = load_run_config(args.config)
    latents, ids = [], []
    dirs = _scenario_dirs(args.data)
    for i, d in enumerate(dirs):
        video, req = _load_scenario(d)
        _check_dims(video, run, d.name)
        latents.append(encode_video(video, snap_keyframes(req)))
        ids.append(i)
    cfg = _model_config(run, n_scenarios=len(dirs))
    store, losses = train_gen(latents, ids, cfg, run.steps, run.batch, run.lr, run.seed)
    save_model(args.out, store, cfg)
    if args.losses is not None:
        Path(args.losses).write_text(
            "step,loss\n" + "".join(f"{i},{l!r}\n" for i, l in enumerate(losses))
        )
    print(f"trained {run.steps} steps on {len(dirs)} scenarios; final loss {losses[-1]:.6f}")
    print(f"saved model to {args.out}")
    return 0


def cmd_gen_sample(args) -> int:
    store, cfg = load_model(args.model)
    req = KeyframeRequest.from_json(Path(args.request).read_text())
    images = _read_keyframe_images(args.frames, req.keyframes)
    video = generate(store, cfg, images, req, args.steps, args.scenario, args.seed)
    save_video(args.out, video)
    print(f"wrote {video.frames} frames to {args.out}")
    return 0


def cmd_sr_train(args) -> int:
    run = load_run_config(args.config)
    videos, reqs = [], []
    dirs = _scenario_dirs(args.data)
    for d in dirs:
        video, req = _load_scenario(d)
        _check_dims(video, run, d.name)
        videos.append(video)
        reqs.append(req)
    if any(r != reqs[0] for r in reqs):
        raise ValueError("sr-train expects every scenario to share one keyframe request")
    plan = snap_keyframes(reqs[0])
    p = DegradeParams(blur_sigma=args.blur, noise_sigma=args.noise)
    cfg = _model_config(run, n_scenarios=1)
    store, losses = train_sr(videos, plan, p, cfg, run.steps, run.batch, run.lr, run.seed)
    save_model(args.out, store, cfg)
    print(f"trained {run.steps} steps on {len(dirs)} videos; final loss {losses[-1]:.6f}")
    print(f"saved model to {args.out}")
    return 0


def cmd_sr_sample(args) -> int:
    store, cfg = load_model(args.model)
    req = KeyframeRequest.from_json(Path(args.request).read_text())
    lr_video = load_video(args.lr_video)
    images = _read_keyframe_images(args.frames, req.keyframes)
    video = sr_sample(store, cfg, lr_video, images, req, args.steps)
    save_video(args.out, video)
    print(f"wrote {video.frames} frames to {args.out}")
    return 0


def cmd_eval(args) -> int:
    rows = []
    if args.ratings is not None:
        ratings = [
            int(tok)
            for line in Path(args.ratings).read_text().splitlines()
            for tok in line.replace(",", " ").split()
        ]
        rows.append(("gsb", "overall", gsb(collapse_ratings(ratings))))
    if (args.pred is None) != (args.ref is None):
        raise ValueError("--pred and --ref must be given together")
    if args.pred is not None:
        pred = load_video(args.pred)
        ref = load_video(args.ref)
        rows.append(("psnr", "pred_vs_ref", psnr(pred, ref)))
        rows.append(
            ("ssim", "pred_vs_ref", float(np.mean([ssim(p, r) for p, r in zip(pred.data, ref.data)])))
        )
        if args.request is not None:
            req = KeyframeRequest.from_json(Path(args.request).read_text())
            plan = snap_keyframes(req)
            keyframes = [ref.data[s] for s in plan.starts]
            rows.append(("adherence", "min_keyframe_psnr", keyframe_adherence(pred, keyframes, plan)))
    if not rows:
        raise ValueError("nothing to evaluate: pass --pred/--ref and/or --ratings")
    _write_rows(rows, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcflow",
        description="Keyframe-conditioned video generation pipeline (chunked causal latents).",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("make-data", help="synthesize scenario directories")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=8, help="number of scenarios (default 8)")
    p.add_argument("--length", type=int, default=98, help="frames per video (default 98)")
    p.add_argument("--height", type=int, default=32, help="frame height (default 32)")
    p.add_argument("--width", type=int, default=32, help="frame width (default 32)")
    p.add_argument("--channels", type=int, default=1, help="frame channels (default 1)")
    p.add_argument("--cut", type=int, default=None, help="cut frame (default: auto for the length)")
    p.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("chunk-plan", help="snap keyframes and print the chunk plan as JSON")
    p.add_argument("--total", type=int, required=True, help="total frame count")
    p.add_argument("--keyframes", required=True, help="comma-separated frame indices, e.g. 0,50")
    p.set_defaults(func=cmd_chunk_plan)

    p = sub.add_parser("rope-dump", help="dump per-latent-frame temporal rope indices as CSV")
    p.add_argument("--lengths", required=True, help="comma-separated latent chunk lengths, e.g. 3,2")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_rope_dump)

    p = sub.add_parser("gen-train", help="train the keyframe-conditioned generator")
    p.add_argument("--data", required=True, help="directory of scenario_* subdirectories")
    p.add_argument("--config", required=True, help="JSON run config (seed is required in it)")
    p.add_argument("--out", required=True, help="output checkpoint path (.mckp)")
    p.add_argument("--losses", default=None, help="optional CSV path for the loss trace")
    p.set_defaults(func=cmd_gen_train)

    p = sub.add_parser("gen-sample", help="generate a video from keyframe images")
    p.add_argument("--model", required=True, help="checkpoint from gen-train")
    p.add_argument("--frames", required=True, help="directory of frame_XXXXX.pgm keyframe images")
    p.add_argument("--request", required=True, help="keyframe request JSON path")
    p.add_argument("--out", required=True, help="output video path (.mcvd)")
    p.add_argument("--steps", type=int, default=20, help="Euler steps (default 20)")
    p.add_argument("--scenario", type=int, default=0, help="scenario id to condition on (default 0)")
    p.add_argument("--seed", type=int, required=True, help="RNG seed (required)")
    p.set_defaults(func=cmd_gen_sample)

    p = sub.add_parser("sr-train", help="train the keyframe-conditioned super-resolver")
    p.add_argument("--data", required=True, help="directory of scenario_* subdirectories (HR)")
    p.add_argument("--config", required=True, help="JSON run config (seed is required in it)")
    p.add_argument("--out", required=True, help="output checkpoint path (.mckp)")
    p.add_argument("--blur", type=float, default=1.0, help="degradation blur sigma (default 1.0)")
    p.add_argument("--noise", type=float, default=0.05, help="degradation noise sigma (default 0.05)")
    p.set_defaults(func=cmd_sr_train)

    p = sub.add_parser("sr-sample", help="super-resolve an LR video under HR keyframes")
    p.add_argument("--model", required=True, help="checkpoint from sr-train")
    p.add_argument("--lr-video", required=True, help="input LR video (.mcvd)")
    p.add_argument("--frames", required=True, help="directory of HR frame_XXXXX.pgm keyframes")
    p.add_argument("--request", required=True, help="keyframe request JSON path")
    p.add_argument("--out", required=True, help="output video path (.mcvd)")
    p.add_argument("--steps", type=int, default=8, help="Euler steps (default 8)")
    p.set_defaults(func=cmd_sr_sample)

    p = sub.add_parser("eval", help="write quality metrics as CSV (metric,name,value)")
    p.add_argument("--pred", default=None, help="generated video (.mcvd)")
    p.add_argument("--ref", default=None, help="reference video (.mcvd)")
    p.add_argument("--request", default=None, help="request JSON for keyframe adherence")
    p.add_argument("--ratings", default=None, help="file of 5-point ratings for a GSB score")
    p.add_argument("--out", default=None, help="output CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
