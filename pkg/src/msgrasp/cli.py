"""Command-line driver: ``msgrasp {detect,label,evaluate,generate}``.

Exit status: 0 success, 2 bad input (files, config, arguments), 3 a
pipeline stage failed internally. Batches keep going past a failing scene
and exit with the worst status seen.
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import ConfigError, PipelineConfig, load_config

EXIT_OK, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3

log = logging.getLogger("msgrasp")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML file overriding pipeline defaults")
    p.add_argument("--out-dir", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=int, default=0,
                   help="random seed (generate); detect and label are deterministic")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel scenes, or FFT threads for a single scene")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msgrasp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="scene directories -> grasp lists")
    _common(d)
    d.add_argument("scenes", nargs="+", help="scene directories")
    q = d.add_mutually_exclusive_group()
    q.add_argument("--quality-file",
                   help="external quality PFM, or a directory of <scene_id>.quality.pfm")
    q.add_argument("--quality-analytic", action="store_true",
                   help="label the live scene (default)")
    d.add_argument("--rotation-step", type=float)
    d.add_argument("--max-rotation", type=float)
    d.add_argument("--epsilon", type=float)
    d.add_argument("--no-penalty", action="store_true",
                   help="rank by accumulated quality only (diagnostic)")
    d.add_argument("--emit-raw-stack", action="store_true",
                   help="also save the full feasibility stack as .npy")
    d.add_argument("--footprints", help="footprint set file")
    d.add_argument("--intrinsics", help="intrinsics file overriding each scene's")

    lab = sub.add_parser("label", help="scene directories -> quality labels")
    _common(lab)
    lab.add_argument("scenes", nargs="+")
    lab.add_argument("--intrinsics")

    ev = sub.add_parser("evaluate", help="grasp files + ground truth -> metrics report")
    _common(ev)
    ev.add_argument("--grasps", nargs="+", required=True, help="<scene>.grasps.jsonl files")
    ev.add_argument("--gt", nargs="+", required=True, help="scene directories with ground truth")
    ev.add_argument("--stem", default="report")

    g = sub.add_parser("generate", help="render synthetic scene directories")
    _common(g)
    g.add_argument("configs", nargs="*", help="scene description YAML files")
    g.add_argument("--random", type=int, default=0, metavar="N",
                   help="also render N random scenes")
    g.add_argument("--difficulty", choices=("simple", "typical", "complex", "mixed"),
                   default="mixed")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    over = {}
    for flag, key in (("rotation_step", "rotation_step"), ("max_rotation", "max_rotation"),
                      ("epsilon", "epsilon"), ("footprints", "footprints"),
                      ("intrinsics", "intrinsics")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    if getattr(args, "no_penalty", False):
        over["use_penalty"] = False
    return cfg.replace(**over) if over else cfg


# ---------------------------------------------------------------- per-scene jobs

def _detect_one(scene_dir: str, cfg: PipelineConfig, quality_file: Optional[str],
                out_dir: str, workers: int, emit_raw: bool) -> tuple[int, str]:
    from . import pipeline as pl
    from .quality import QualityFileError, QualitySource, load_quality
    try:
        inputs = pl.load_scene_dir(scene_dir, cfg.intrinsics)
        quality = None
        if quality_file is not None:
            qpath = Path(quality_file)
            if qpath.is_dir():
                qpath = qpath / f"{inputs.scene_id}.quality.pfm"
            try:
                quality = load_quality(qpath, (inputs.scene.height, inputs.scene.width),
                                       strict=cfg.strict_quality)
            except (QualityFileError, FileNotFoundError, ValueError) as exc:
                raise pl.InputError(str(exc)) from exc
            quality.source = QualitySource.EXTERNAL
        res = pl.detect(inputs, cfg, quality=quality, workers=workers, emit_raw=emit_raw)
        pl.write_detect_outputs(res, out_dir)
        if emit_raw:
            pl.write_raw_stack(res, out_dir)
        t = res.timings
        stages = " ".join(f"{k}={v:.0f}ms" for k, v in t.items())
        return EXIT_OK, f"{inputs.scene_id}: {len(res.grasps)} grasps  {stages}"
    except pl.InputError as exc:
        return EXIT_INPUT, f"{scene_dir}: input error: {exc}"
    except pl.StageError as exc:
        return EXIT_INTERNAL, f"{scene_dir}: {exc}"
    except Exception as exc:  # noqa: BLE001 - per-scene isolation
        return EXIT_INTERNAL, f"{scene_dir}: internal error: {exc!r}\n{traceback.format_exc()}"


def _label_one(scene_dir: str, cfg: PipelineConfig, out_dir: str) -> tuple[int, str]:
    from . import pipeline as pl
    try:
        inputs = pl.load_scene_dir(scene_dir, cfg.intrinsics)
        res = pl.label_scene(inputs, cfg)
        path = pl.write_labels(res, out_dir, inputs.scene_id)
        return EXIT_OK, f"{inputs.scene_id}: {res.clusters.count} clusters -> {path}"
    except pl.InputError as exc:
        return EXIT_INPUT, f"{scene_dir}: input error: {exc}"
    except Exception as exc:  # noqa: BLE001
        return EXIT_INTERNAL, f"{scene_dir}: internal error: {exc!r}"


def _run_batch(fn, items, jobs: int, *extra) -> int:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(fn, items, *([e] * len(items) for e in extra)))
    else:
        results = [fn(it, *extra) for it in items]
    worst = EXIT_OK
    for code, msg in results:
        (print if code == EXIT_OK else lambda m: print(m, file=sys.stderr))(msg)
        worst = max(worst, code)
    return worst


# ---------------------------------------------------------------- commands

def cmd_detect(args) -> int:
    cfg = _config(args)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    single = len(args.scenes) == 1
    workers = max(1, args.jobs) if single else 1
    return _run_batch(_detect_one, args.scenes, args.jobs, cfg, args.quality_file,
                      args.out_dir, workers, args.emit_raw_stack)


def cmd_label(args) -> int:
    cfg = _config(args)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    return _run_batch(_label_one, args.scenes, args.jobs, cfg, args.out_dir)


def cmd_evaluate(args) -> int:
    from . import pipeline as pl
    from .evaluation import format_table, write_report
    try:
        report = pl.evaluate_files(args.grasps, args.gt)
    except pl.InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    write_report(report, args.out_dir, args.stem)
    print(format_table(report), end="")
    return EXIT_OK


def cmd_generate(args) -> int:
    from . import pipeline as pl
    from .scenegen import corpus_scene, load_scene_config
    cfg = _config(args)
    out = Path(args.out_dir)
    jobs = []
    try:
        for path in args.configs:
            scene, camera = load_scene_config(path)
            jobs.append((scene, camera))
        levels = ("simple", "typical", "complex")
        for i in range(args.random):
            diff = levels[i % 3] if args.difficulty == "mixed" else args.difficulty
            jobs.append(corpus_scene(args.seed + i, diff))
    except (OSError, ValueError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if not jobs:
        print("input error: nothing to generate (give configs or --random N)", file=sys.stderr)
        return EXIT_INPUT
    code = EXIT_OK
    for scene, camera in jobs:
        try:
            path = pl.render_to_dir(scene, out, camera, cfg)
            print(f"{scene.scene_id}: {len(scene.primitives)} objects -> {path}")
        except ValueError as exc:
            print(f"{scene.scene_id}: input error: {exc}", file=sys.stderr)
            code = max(code, EXIT_INPUT)
    return code


COMMANDS = {"detect": cmd_detect, "label": cmd_label, "evaluate": cmd_evaluate,
            "generate": cmd_generate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
