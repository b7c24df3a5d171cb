"""Command-line interface: track, simulate, eval and visualize.

Exit codes are a stable contract: 0 success, 1 usage, 2 input error,
3 backend startup failure, 4 run failure (the partial tracklet is still
written).

Every tracking run writes a manifest next to its CSV — the full
configuration, backend description, input paths and seed — sufficient to
reproduce the run bit-exactly with oracle backends (``track --replay``).
The manifest deliberately carries no timing, so repeated runs of the same
configuration produce byte-identical files; wall-clock duration goes to
stderr instead.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .backends.base import BackendSpec, close_session, open_session
from .backends.oracle import OracleNoise
from .errors import (
    AnnotationError,
    BackendStartupError,
    EvalRangeError,
    SceneError,
)
from .evaluation import (
    DEFAULT_DPR_THRESHOLD,
    DEFAULT_OSR_THRESHOLD,
    evaluate,
    load_annotations,
    render_report,
    report_records,
    save_tracklet,
)
from .pipeline import TrackResult, track_sequence
from .simulator import (
    SceneConfig,
    annotation_text,
    export_scene,
    frame_filename,
    generate,
    ground_truth,
    standard_suite,
)
from .types import BoundingBox, Frame, PipelineConfig, VideoSequence

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_STARTUP = 3
EXIT_RUN = 4

_CONFIG_FIELDS = {f.name for f in dataclasses.fields(PipelineConfig)}


class CliError(Exception):
    """An operator-facing failure carrying its exit code."""

    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    """argparse reports usage problems with exit code 1, not its default 2."""

    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


def _box_arg(text: str) -> BoundingBox:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"expected X,Y,W,H, got {text!r}")
    try:
        x, y, w, h = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"non-numeric box {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError(f"box size {w:g}x{h:g} is not positive")
    return BoundingBox(x, y, w, h)


# input loading --------------------------------------------------------------

def load_frames(dir_path: Path, sequence_id: str | None = None) -> VideoSequence:
    """Read a directory of zero-padded 1-based PNG frames."""
    if not dir_path.is_dir():
        raise CliError(f"frame directory {dir_path} does not exist")
    names = {p.name for p in dir_path.glob("*.png")}
    if not names:
        raise CliError(f"no PNG frames in {dir_path}")
    expected = {frame_filename(i) for i in range(len(names))}
    missing = sorted(expected - names)
    if missing:
        raise CliError(
            f"{dir_path}: found {len(names)} PNGs but frame {missing[0]} is "
            f"missing (frames must be numbered {frame_filename(0)}, "
            f"{frame_filename(1)}, ... without gaps)")
    frames = []
    for i in range(len(names)):
        with Image.open(dir_path / frame_filename(i)) as image:
            frames.append(Frame(index=i, pixels=np.asarray(image)))
    if len({(f.height, f.width) for f in frames}) > 1:
        raise CliError(f"{dir_path}: frame sizes differ")
    return VideoSequence(frames, sequence_id=sequence_id or dir_path.name)


def _load_scene(path: Path) -> SceneConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"scene file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"scene file {path}: {exc}") from None
    try:
        return SceneConfig.from_dict(data)
    except (SceneError, TypeError, ValueError) as exc:
        raise CliError(f"scene file {path}: {exc}") from None


def _env_seed() -> int | None:
    raw = os.environ.get("ORBIT_SOT_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"ORBIT_SOT_SEED must be an integer, got {raw!r}") from None


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Assemble the run configuration: flags > config file > environment
    seed > built-in defaults."""
    overrides: dict = {}
    env = _env_seed()
    if env is not None:
        overrides["rng_seed"] = env
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise CliError(f"config file {path} does not exist") from None
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path}: {exc}") from None
        if not isinstance(data, dict):
            raise CliError(f"config file {path}: expected a JSON object")
        unknown = sorted(set(data) - _CONFIG_FIELDS)
        if unknown:
            raise CliError(f"config file {path}: unknown fields {unknown}")
        overrides.update(data)
    if getattr(args, "keyframe_interval", None) is not None:
        overrides["keyframe_interval"] = args.keyframe_interval
    if getattr(args, "num_points", None) is not None:
        overrides["num_points"] = args.num_points
    if getattr(args, "seed", None) is not None:
        overrides["rng_seed"] = args.seed
    try:
        return PipelineConfig().with_overrides(**overrides)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}") from None


def _noise_from_args(args: argparse.Namespace) -> OracleNoise | None:
    if not (args.noise_jitter or args.noise_dropout or args.noise_erosion):
        return None
    return OracleNoise(jitter_sigma=args.noise_jitter, dropout_p=args.noise_dropout,
                       erosion_radius=args.noise_erosion, seed=args.noise_seed)


# manifests -------------------------------------------------------------------

def describe_backend(spec: BackendSpec) -> dict:
    noise = spec.noise
    return {
        "kind": spec.kind,
        "scene": spec.scene.to_dict() if spec.scene is not None else None,
        "noise": None if noise is None else {
            "jitter_sigma": noise.jitter_sigma, "dropout_p": noise.dropout_p,
            "erosion_radius": noise.erosion_radius, "seed": noise.seed},
        "bridge_cmd": list(spec.bridge_cmd) if spec.bridge_cmd else None,
    }


def build_manifest(sequence_id: str, cfg: PipelineConfig, backend: dict,
                   inputs: dict, result: TrackResult) -> dict:
    return {
        "tool": "orbit-sot",
        "version": __version__,
        "sequence": sequence_id,
        "seed": cfg.rng_seed,
        "config": {name: getattr(cfg, name) for name in sorted(_CONFIG_FIELDS)},
        "backend": backend,
        "inputs": inputs,
        "outcome": {
            "frames": len(result.tracklet),
            "crop_used": result.stats.crop_used,
            "degraded_init": result.stats.degraded_init,
            "track_calls": result.stats.track_calls,
            "refreshes": [
                {"frame": e.frame_index, "path": e.path,
                 "arrived_points": e.arrived_points, "inliers": e.inliers}
                for e in result.stats.refresh_events],
            "error": result.error,
        },
    }


def write_manifest(path: Path | str, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_tracking(video: VideoSequence, init_box: BoundingBox, cfg: PipelineConfig,
                 spec: BackendSpec, out_csv: Path, manifest_path: Path,
                 inputs: dict) -> TrackResult:
    """Open a session, track, and write the CSV + manifest pair."""
    session = open_session(spec)
    try:
        result = track_sequence(video, init_box, cfg, session)
    finally:
        close_session(session)
    save_tracklet(result.tracklet, out_csv)
    write_manifest(manifest_path,
                   build_manifest(video.sequence_id, cfg, describe_backend(spec),
                                  inputs, result))
    return result


def run_suite(scenes: list[SceneConfig], out_dir: Path | str, cfg: PipelineConfig,
              noise: OracleNoise | None = None, jobs: int = 1,
              scenes_root: Path | None = None) -> list[tuple[str, TrackResult]]:
    """Track every scene with an oracle backend; one CSV + ground-truth CSV +
    manifest per scene.  Frames come from ``scenes_root/<scene_id>`` when
    given, otherwise scenes are generated in memory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(scene: SceneConfig) -> tuple[str, TrackResult]:
        if scenes_root is not None:
            frames_dir = Path(scenes_root) / scene.scene_id
            video = load_frames(frames_dir, sequence_id=scene.scene_id)
            gt = ground_truth(scene)
            if len(video) != scene.frame_count:
                raise CliError(
                    f"{scene.scene_id}: {len(video)} frames on disk but the "
                    f"scene defines {scene.frame_count}")
            frames_input = str(frames_dir)
        else:
            video, gt = generate(scene)
            frames_input = None
        init_box = gt.target.boxes[0]
        spec = BackendSpec(kind="oracle", scene=scene, noise=noise)
        result = run_tracking(
            video, init_box, cfg, spec,
            out / f"{scene.scene_id}.csv", out / f"{scene.scene_id}.manifest.json",
            inputs={"frames": frames_input, "scene": None,
                    "init_box": list(init_box.as_tuple())})
        (out / f"{scene.scene_id}.gt.csv").write_text(annotation_text(gt))
        return scene.scene_id, result

    if jobs <= 1:
        return [one(scene) for scene in scenes]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(one, scenes))


# subcommands -----------------------------------------------------------------

def _select_records(groups: dict, object_id: int, path: Path | str):
    if object_id in groups:
        return groups[object_id]
    if len(groups) == 1:
        return next(iter(groups.values()))
    raise CliError(f"{path}: no object {object_id} "
                   f"(file has ids {sorted(groups)})")


def cmd_track(args: argparse.Namespace) -> int:
    if args.replay:
        return _track_replay(args)
    cfg = build_config(args)
    noise = _noise_from_args(args)

    if args.suite:
        if args.backend != "oracle":
            raise CliError("--suite supports the oracle backend only")
        root = Path(args.suite)
        if not root.is_dir():
            raise CliError(f"suite directory {root} does not exist")
        scene_dirs = sorted(p for p in root.iterdir()
                            if (p / "scene.json").is_file())
        if not scene_dirs:
            raise CliError(f"no scene directories (with scene.json) under {root}")
        scenes = []
        for scene_dir in scene_dirs:
            scene = _load_scene(scene_dir / "scene.json")
            if scene.scene_id != scene_dir.name:
                raise CliError(f"{scene_dir}: directory name does not match "
                               f"scene id {scene.scene_id!r}")
            scenes.append(scene)
        started = time.perf_counter()
        results = run_suite(scenes, Path(args.output), cfg, noise=noise,
                            jobs=args.jobs, scenes_root=root)
        for sid, result in results:
            print(f"{sid}: {len(result.tracklet)} frames, "
                  f"{result.stats.consensus_refreshes}/"
                  f"{result.stats.total_refreshes} consensus refreshes",
                  file=sys.stderr)
        print(f"{len(results)} sequences in "
              f"{time.perf_counter() - started:.2f}s", file=sys.stderr)
        failed = [sid for sid, result in results if result.error]
        if failed:
            print(f"run failures: {', '.join(failed)}", file=sys.stderr)
            return EXIT_RUN
        return EXIT_OK

    if not args.frames:
        raise CliError("--frames is required (or use --suite)", EXIT_USAGE)
    if args.init_box is None:
        raise CliError("--init-box is required for single-sequence runs",
                       EXIT_USAGE)
    video = load_frames(Path(args.frames))
    if args.backend == "oracle":
        if not args.scene:
            raise CliError("--backend oracle requires --scene", EXIT_USAGE)
        scene = _load_scene(args.scene)
        if scene.frame_count != len(video):
            raise CliError(f"scene defines {scene.frame_count} frames but "
                           f"{len(video)} PNGs were found")
        spec = BackendSpec(kind="oracle", scene=scene, noise=noise)
    else:
        if not args.bridge_cmd:
            raise CliError("--backend external requires --bridge-cmd", EXIT_USAGE)
        spec = BackendSpec(
            kind="external", bridge_cmd=tuple(shlex.split(args.bridge_cmd)),
            session_dir=Path(args.session_dir) if args.session_dir else None)

    out_csv = Path(args.output)
    manifest_path = (Path(args.manifest) if args.manifest
                     else out_csv.with_suffix(".manifest.json"))
    inputs = {"frames": str(args.frames),
              "scene": str(args.scene) if args.scene else None,
              "init_box": list(args.init_box.as_tuple())}
    started = time.perf_counter()
    try:
        result = run_tracking(video, args.init_box, cfg, spec, out_csv,
                              manifest_path, inputs)
    except (SceneError, ValueError) as exc:
        raise CliError(str(exc)) from None
    print(f"{video.sequence_id}: {len(result.tracklet)} frames in "
          f"{time.perf_counter() - started:.2f}s -> {out_csv}", file=sys.stderr)
    if result.error:
        print(f"run failed after {len(result.tracklet)} frames: "
              f"{result.error}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _track_replay(args: argparse.Namespace) -> int:
    path = Path(args.replay)
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise CliError(f"manifest {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"manifest {path}: {exc}") from None
    try:
        backend = manifest["backend"]
        config_fields = manifest["config"]
        inputs = manifest["inputs"]
        init_box = BoundingBox(*inputs["init_box"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"manifest {path} is incomplete: {exc}") from None
    if backend.get("kind") != "oracle" or backend.get("scene") is None:
        raise CliError("--replay supports oracle runs with a scene only")
    try:
        cfg = PipelineConfig().with_overrides(**config_fields)
        scene = SceneConfig.from_dict(backend["scene"])
        noise = OracleNoise(**backend["noise"]) if backend.get("noise") else None
    except (SceneError, TypeError, ValueError) as exc:
        raise CliError(f"manifest {path}: {exc}") from None
    if inputs.get("frames"):
        video = load_frames(Path(inputs["frames"]), sequence_id=scene.scene_id)
    else:
        video, _ = generate(scene)
    out_csv = Path(args.output)
    manifest_path = (Path(args.manifest) if args.manifest
                     else out_csv.with_suffix(".manifest.json"))
    spec = BackendSpec(kind="oracle", scene=scene, noise=noise)
    result = run_tracking(video, init_box, cfg, spec, out_csv, manifest_path,
                          inputs)
    return EXIT_RUN if result.error else EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.output)
    if args.suite:
        seed = args.seed if args.seed is not None else _env_seed()
        if seed is None:
            seed = PipelineConfig().rng_seed
        scenes = standard_suite(seed)
        for scene in scenes:
            export_scene(scene, out / scene.scene_id)
        print(f"{len(scenes)} scenes under {out}", file=sys.stderr)
        return EXIT_OK
    if not args.scene:
        raise CliError("provide --scene scene.json or --suite", EXIT_USAGE)
    scene = _load_scene(args.scene)
    export_scene(scene, out)
    print(f"{scene.scene_id}: {scene.frame_count} frames under {out}",
          file=sys.stderr)
    return EXIT_OK


def _eval_pair(pred_path: Path, gt_path: Path, sequence_id: str,
               args: argparse.Namespace):
    try:
        pred_groups = load_annotations(pred_path)
    except AnnotationError as exc:
        raise CliError(f"{pred_path}: {exc}") from None
    try:
        gt_groups = load_annotations(gt_path)
    except AnnotationError as exc:
        raise CliError(f"{gt_path}: {exc}") from None
    pred_records = _select_records(pred_groups, args.object_id, pred_path)
    gt_records = _select_records(gt_groups, args.object_id, gt_path)
    try:
        return evaluate(pred_records, gt_records, sequence_id,
                        args.dpr_threshold, args.osr_threshold,
                        strict=not args.non_strict)
    except EvalRangeError as exc:
        raise CliError(f"{sequence_id}: {exc}") from None


def cmd_eval(args: argparse.Namespace) -> int:
    if args.suite:
        root = Path(args.suite)
        gt_files = sorted(root.glob("*.gt.csv"))
        if not gt_files:
            raise CliError(f"no *.gt.csv files under {root}")

        def one(gt_path: Path):
            sequence_id = gt_path.name[:-len(".gt.csv")]
            pred_path = root / f"{sequence_id}.csv"
            if not pred_path.is_file():
                raise CliError(f"{sequence_id}: prediction file {pred_path} "
                               f"is missing")
            return _eval_pair(pred_path, gt_path, sequence_id, args)

        if args.jobs <= 1:
            results = [one(p) for p in gt_files]
        else:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(one, gt_files))
    else:
        if not (args.pred and args.gt):
            raise CliError("provide --pred and --gt, or --suite", EXIT_USAGE)
        pred_path = Path(args.pred)
        results = [_eval_pair(pred_path, Path(args.gt), pred_path.stem, args)]
    print(render_report(results), end="")
    if args.json:
        Path(args.json).write_text(
            json.dumps(report_records(results), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_visualize(args: argparse.Namespace) -> int:
    from .visualize import render_overlays

    video = load_frames(Path(args.frames))
    try:
        groups = load_annotations(args.tracklet)
    except AnnotationError as exc:
        raise CliError(f"{args.tracklet}: {exc}") from None
    records = _select_records(groups, args.object_id, args.tracklet)
    if len(records) != len(video):
        raise CliError(f"tracklet covers {len(records)} frames but "
                       f"{len(video)} frames are on disk")
    gt_boxes = None
    if args.gt:
        try:
            gt_groups = load_annotations(args.gt)
        except AnnotationError as exc:
            raise CliError(f"{args.gt}: {exc}") from None
        gt_records = _select_records(gt_groups, args.gt_object_id, args.gt)
        if len(gt_records) != len(video):
            raise CliError(f"ground truth covers {len(gt_records)} frames but "
                           f"{len(video)} frames are on disk")
        gt_boxes = [r.box for r in gt_records]
    paths = render_overlays(video, [r.box for r in records], args.output,
                            gt_boxes)
    print(f"{len(paths)} overlays under {args.output}", file=sys.stderr)
    return EXIT_OK


# wiring ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="orbit-sot",
                     description="Point-renewal single-object tracker for "
                                 "small objects in satellite video.")
    parser.add_argument("--version", action="version",
                        version=f"orbit-sot {__version__}")
    sub = parser.add_subparsers(dest="command")

    track = sub.add_parser("track", help="track one sequence or a scene suite")
    track.add_argument("--frames", help="directory of numbered PNG frames")
    track.add_argument("--init-box", type=_box_arg,
                       help="first-frame box as X,Y,W,H")
    track.add_argument("--backend", choices=("oracle", "external"),
                       default="oracle")
    track.add_argument("--scene", help="scene.json for the oracle backend")
    track.add_argument("--bridge-cmd",
                       help="command line that starts an external bridge")
    track.add_argument("--session-dir",
                       help="staging directory for the external bridge")
    track.add_argument("-K", "--keyframe-interval", type=int)
    track.add_argument("-N", "--num-points", type=int)
    track.add_argument("--seed", type=int)
    track.add_argument("--config", help="JSON file with configuration fields")
    track.add_argument("--noise-jitter", type=float, default=0.0)
    track.add_argument("--noise-dropout", type=float, default=0.0)
    track.add_argument("--noise-erosion", type=int, default=0)
    track.add_argument("--noise-seed", type=int, default=0)
    track.add_argument("--suite", help="directory of exported scenes to track")
    track.add_argument("--jobs", type=int, default=1)
    track.add_argument("--replay", help="manifest of a previous run to repeat")
    track.add_argument("--manifest", help="manifest path (default: next to -o)")
    track.add_argument("-o", "--output", required=True,
                       help="tracklet CSV (or directory with --suite)")
    track.set_defaults(func=cmd_track)

    simulate = sub.add_parser("simulate", help="materialize synthetic scenes")
    simulate.add_argument("--suite", action="store_true",
                          help="export the standard 20-scene suite")
    simulate.add_argument("--scene", help="scene.json to export")
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("-o", "--output", required=True)
    simulate.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--pred", help="prediction CSV")
    ev.add_argument("--gt", help="ground-truth CSV")
    ev.add_argument("--suite", help="directory of <id>.csv / <id>.gt.csv pairs")
    ev.add_argument("--object-id", type=int, default=1)
    ev.add_argument("--dpr-threshold", type=float, default=DEFAULT_DPR_THRESHOLD)
    ev.add_argument("--osr-threshold", type=float, default=DEFAULT_OSR_THRESHOLD)
    ev.add_argument("--non-strict", action="store_true",
                    help="count boundary cases exactly at a threshold as hits")
    ev.add_argument("--json", help="also write the rows as JSON records")
    ev.add_argument("--jobs", type=int, default=1)
    ev.set_defaults(func=cmd_eval)

    viz = sub.add_parser("visualize", help="render overlay PNGs for a tracklet")
    viz.add_argument("--frames", required=True)
    viz.add_argument("--tracklet", required=True)
    viz.add_argument("--gt", help="ground-truth CSV for dashed boxes")
    viz.add_argument("--object-id", type=int, default=1)
    viz.add_argument("--gt-object-id", type=int, default=1)
    viz.add_argument("-o", "--output", required=True)
    viz.set_defaults(func=cmd_visualize)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "command", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except BackendStartupError as exc:
        print(f"backend startup failed: {exc}", file=sys.stderr)
        return EXIT_STARTUP
    except (AnnotationError, SceneError, EvalRangeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
