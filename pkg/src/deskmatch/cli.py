"""CLI entry point for dataset generation, training, evaluation and match rendering."""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from collections.abc import Callable, Sequence
from pathlib import Path

from pydantic import ValidationError

from deskmatch._io import atomic_write_text
from deskmatch._version import __version__
from deskmatch.config import EvalConfig, MatcherConfig, RunConfig, SceneConfig, TrainConfig
from deskmatch.dataset import build_dataset
from deskmatch.errors import ConfigurationError, DeskmatchError
from deskmatch.evaluation import (
    eval_homography,
    eval_pose,
    model_matches,
    oracle_matches,
    param_count,
)
from deskmatch.model import Matcher, load_checkpoint
from deskmatch.reports import ComparisonReport, ComparisonRow, MatchExport, RunManifest
from deskmatch.sources import DiskPairSource
from deskmatch.training import Trainer, train_baseline, train_student, train_teacher
from deskmatch.visualize import epipolar_inliers, render_matches

logger = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".stfm"
TRAIN_LOG = "train_log.jsonl"
MANIFEST = "manifest.json"


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="Seed (overrides --config)")
    parser.add_argument(
        "--config", type=Path, metavar="JSON", help="RunConfig file; flags override its values"
    )
    parser.add_argument("--out", type=Path, required=True, help="Output directory")
    parser.add_argument(
        "--threads", type=int, default=None, help="Worker threads for per-pair passes"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")


def _training(parser: argparse.ArgumentParser, teacher: str = "optional") -> None:
    parser.add_argument("--data", type=Path, required=True, help="Training dataset root")
    parser.add_argument("--val-data", type=Path, help="Validation dataset root")
    parser.add_argument("--epochs", type=int, help="Epochs (overrides --config)")
    if teacher != "none":
        parser.add_argument(
            "--teacher",
            type=Path,
            required=teacher == "required",
            metavar="CHECKPOINT",
            help="Frozen RGB-D teacher checkpoint",
        )


def create_parser() -> argparse.ArgumentParser:
    """Build the CLI argument parser."""
    parser = argparse.ArgumentParser(
        prog="deskmatch",
        description="RGB-D teacher / RGB student feature matching at desk scale",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    gen = subparsers.add_parser("gen-data", help="Render a synthetic benchmark to disk")
    _common(gen)
    gen.add_argument("--pairs", type=int, required=True, help="Number of pairs")
    gen.add_argument(
        "--kind", choices=["textured-planes", "box-room", "plane"], help="Scene family"
    )
    gen.add_argument(
        "--illumination-fraction", type=float, help="Share of same-pose illumination pairs"
    )

    teacher = subparsers.add_parser("train-teacher", help="Train the RGB-D teacher")
    _common(teacher)
    _training(teacher, teacher="none")

    student = subparsers.add_parser("train-student", help="Distil an RGB student")
    _common(student)
    _training(student, teacher="required")
    student.add_argument("--no-mqd", action="store_true", help="Disable the L_MQD term")
    student.add_argument("--no-att", action="store_true", help="Disable the L_att term")

    baseline = subparsers.add_parser("train-baseline", help="Train an RGB model without teacher")
    _common(baseline)
    _training(baseline, teacher="none")

    for name, helptext in (
        ("eval-pose", "Relative pose AUC on a dataset"),
        ("eval-homography", "Homography AUC and MMA on a planar dataset"),
    ):
        ev = subparsers.add_parser(name, help=helptext)
        _common(ev)
        ev.add_argument("--data", type=Path, required=True, help="Evaluation dataset root")
        group = ev.add_mutually_exclusive_group(required=True)
        group.add_argument("--checkpoint", type=Path, help="Model to evaluate")
        group.add_argument(
            "--oracle", action="store_true", help="Use ground-truth correspondences"
        )
        ev.add_argument("--csv", action="store_true", help="Also write per-pair rows as CSV")
        if name == "eval-homography":
            ev.add_argument("--top-k", type=int, help="Matches kept per pair")

    match = subparsers.add_parser("match", help="Match one pair and render it")
    _common(match)
    match.add_argument("--checkpoint", type=Path, required=True, help="Model to run")
    match.add_argument("--data", type=Path, required=True, help="Dataset root")
    match.add_argument("--pair", help="Pair id (default: first pair)")
    match.add_argument("--format", choices=["ppm", "png"], default="ppm", help="Image format")

    for name, helptext in (
        ("ablate", "Teacher, unimodal, +MQD and +MQD+Att with shared seeds"),
        ("compress", "Full and slim (half coarse layers) models, supervised and distilled"),
    ):
        exp = subparsers.add_parser(name, help=helptext)
        _common(exp)
        _training(exp)
        exp.add_argument("--eval-data", type=Path, help="Pose benchmark (default: --val-data)")
        exp.add_argument(
            "--seeds",
            type=int,
            nargs="+",
            metavar="SEED",
            help="Train every variant once per seed and average (default: --seed)",
        )

    count = subparsers.add_parser("param-count", help="Count model parameters")
    _common(count)
    count.add_argument("--checkpoint", type=Path, help="Checkpoint (default: configured model)")
    count.add_argument("--slim", action="store_true", help="Count the slim variant")
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Read ``--config`` and apply flag overrides."""
    config = (
        RunConfig.model_validate_json(args.config.read_bytes()) if args.config else RunConfig()
    )
    train = config.train.model_dump()
    evaluation = config.evaluation.model_dump()
    if args.seed is not None:
        train["seed"] = args.seed
        evaluation["seed"] = args.seed
    if args.threads is not None:
        train["threads"] = args.threads
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if getattr(args, "data", None) is not None:
        train["dataset"] = args.data
    if getattr(args, "val_data", None) is not None:
        train["validation_dataset"] = args.val_data
    if getattr(args, "top_k", None) is not None:
        evaluation["top_k"] = args.top_k
    scene = config.scene.model_dump()
    if getattr(args, "kind", None) is not None:
        scene["kind"] = args.kind
    if getattr(args, "illumination_fraction", None) is not None:
        scene["illumination_fraction"] = args.illumination_fraction
    return RunConfig(
        matcher=config.matcher,
        train=TrainConfig.model_validate(train),
        scene=SceneConfig.model_validate(scene),
        evaluation=EvalConfig.model_validate(evaluation),
    )


def digest_inputs(paths: Sequence[Path | None]) -> str:
    """sha256 over dataset roots and checkpoint files (with sidecars), in order."""
    h = hashlib.sha256()
    for path in paths:
        if path is None:
            continue
        if path.is_dir():
            h.update(DiskPairSource(path).digest().encode("ascii"))
        else:
            h.update(path.read_bytes())
            sidecar = path.with_name(path.name + ".json")
            if sidecar.exists():
                h.update(sidecar.read_bytes())
    return h.hexdigest()


def write_manifest(
    args: argparse.Namespace,
    argv: Sequence[str],
    config: RunConfig,
    inputs: Sequence[Path | None],
    outputs: Sequence[Path],
) -> None:
    """Record the resolved run under ``<out>/manifest.json`` before any work starts."""
    manifest = RunManifest(
        command=args.command,
        argv=list(argv),
        version=__version__,
        seed=config.train.seed,
        config=config,
        input_digest=digest_inputs(inputs),
        outputs=[str(p) for p in outputs],
    )
    atomic_write_text(args.out / MANIFEST, manifest.model_dump_json(indent=2))


def _write_json(path: Path, text: str) -> None:
    atomic_write_text(path, text)
    logger.info("Wrote %s", path)


def cmd_gen_data(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Render ``--pairs`` pairs into ``--out``."""
    config = load_run_config(args)
    write_manifest(args, argv, config, [], [args.out / "index.json"])
    entries = build_dataset(config.train.seed, args.pairs, args.out, config.scene)
    print(f"Wrote {len(entries)} {config.scene.kind} pairs to {args.out}")
    return 0


def _train_config(config: RunConfig, **updates: object) -> TrainConfig:
    return TrainConfig.model_validate({**config.train.model_dump(), **updates})


def _log_summary(role: str, trainer: Trainer, path: Path) -> None:
    last = trainer.history[-1]
    print(f"{role}: {len(trainer.history)} epochs, final total loss {last.total:.4f} -> {path}")


def cmd_train(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Train the teacher, the student or the unimodal baseline."""
    config = load_run_config(args)
    teacher_path: Path | None = getattr(args, "teacher", None)
    name = {"train-teacher": "teacher", "train-student": "student"}.get(args.command, "baseline")
    checkpoint = args.out / f"{name}{CHECKPOINT_SUFFIX}"
    log_path = args.out / TRAIN_LOG
    write_manifest(
        args,
        argv,
        config,
        [args.data, args.val_data, teacher_path],
        [checkpoint, log_path],
    )
    if args.command == "train-teacher":
        trainer = train_teacher(config.train, config.matcher, checkpoint, log_path)
    elif args.command == "train-student":
        assert teacher_path is not None
        train = _train_config(
            config,
            role="student",
            teacher_checkpoint=teacher_path,
            use_mqd=not args.no_mqd,
            use_att=not args.no_att,
        )
        trainer = train_student(train, config.matcher, teacher_path, checkpoint, log_path)
    else:
        trainer = train_baseline(config.train, config.matcher, checkpoint, log_path)
    _log_summary(name, trainer, checkpoint)
    return 0


def cmd_eval(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Run the pose or homography benchmark."""
    config = load_run_config(args)
    benchmark = "pose" if args.command == "eval-pose" else "homography"
    report_path = args.out / f"eval_{benchmark}.json"
    outputs = [report_path] + ([args.out / f"eval_{benchmark}.csv"] if args.csv else [])
    write_manifest(args, argv, config, [args.data, args.checkpoint], outputs)
    source = DiskPairSource(args.data)
    model = oracle_matches if args.oracle else model_matches(load_checkpoint(args.checkpoint))
    threads = config.train.threads
    if benchmark == "pose":
        report = eval_pose(model, source, config.evaluation, threads=threads)
    else:
        report = eval_homography(model, source, config.evaluation, threads=threads)
    _write_json(report_path, report.model_dump_json(indent=2))
    if args.csv:
        _write_json(outputs[1], report.to_csv())
    for threshold, value in zip(report.thresholds, report.auc, strict=True):
        print(f"AUC@{threshold:g}: {value:.2f}")
    for subset, values in report.mma.items():
        print(f"MMA {subset}: " + " ".join(f"{v:.3f}" for v in values))
    print(f"mean inliers: {report.mean_inliers:.1f}")
    return 0


def cmd_match(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Match one pair; write the visualisation and the match list."""
    config = load_run_config(args)
    image_path = args.out / f"matches.{args.format}"
    json_path = args.out / "matches.json"
    write_manifest(args, argv, config, [args.data, args.checkpoint], [image_path, json_path])
    source = DiskPairSource(args.data)
    ids = source.pair_ids()
    if not ids:
        raise ConfigurationError(f"dataset {args.data} holds no pairs")
    pair_id = args.pair or ids[0]
    try:
        pair = source.get_pair(pair_id)
    except KeyError as e:
        raise ConfigurationError(f"unknown pair {pair_id!r} in {args.data}") from e
    matches = model_matches(load_checkpoint(args.checkpoint))(pair)
    inliers = epipolar_inliers(pair, matches, config.evaluation.inlier_threshold)
    render_matches(pair, matches, inliers, image_path)
    export = MatchExport(
        pair_id=pair_id,
        checkpoint=str(args.checkpoint),
        matches=[
            [*pa.tolist(), *pb.tolist(), float(c), float(ok)]
            for pa, pb, c, ok in zip(
                matches.points_a, matches.points_b, matches.confidence, inliers, strict=True
            )
        ],
    )
    _write_json(json_path, export.model_dump_json(indent=2))
    print(f"{pair_id}: {len(matches)} matches, {export.n_inliers} inliers -> {image_path}")
    return 0


def _teachers_for(
    args: argparse.Namespace, config: RunConfig, seeds: Sequence[int]
) -> dict[int, Path]:
    """Teacher checkpoint per seed: the given one for every seed, or one trained per seed."""
    if args.teacher is not None:
        return {seed: Path(args.teacher) for seed in seeds}
    paths: dict[int, Path] = {}
    for seed in seeds:
        path = args.out / f"teacher.seed{seed}{CHECKPOINT_SUFFIX}"
        log_path = args.out / f"teacher.seed{seed}.{TRAIN_LOG}"
        train_teacher(_train_config(config, seed=seed), config.matcher, path, log_path)
        paths[seed] = path
    return paths


def _comparison_row(
    name: str,
    matcher: Matcher,
    checkpoint: Path,
    eval_source: DiskPairSource,
    config: RunConfig,
    seed: int | None = None,
    trainer: Trainer | None = None,
) -> ComparisonRow:
    report = eval_pose(matcher, eval_source, config.evaluation, config.train.threads)
    return ComparisonRow(
        name=name,
        checkpoints=[str(checkpoint)],
        seeds=[] if seed is None else [seed],
        auc=report.auc,
        auc_per_seed=[report.auc],
        mean_inliers=report.mean_inliers,
        final_val_coarse=None if trainer is None else trainer.history[-1].val_coarse,
        param_count=matcher.params.count(),
    )


Variant = tuple[str, MatcherConfig, bool | None, bool | None]


def experiment_variants(command: str, matcher: MatcherConfig) -> list[Variant]:
    """``(name, architecture, use_mqd, use_att)`` for every trained variant.

    ``None`` flags train the unimodal baseline instead of a distilled student.
    """
    full, slim = matcher, matcher.slim()
    if command == "ablate":
        return [
            ("unimodal", full, None, None),
            ("unimodal+mqd", full, True, False),
            ("unimodal+mqd+att", full, True, True),
        ]
    return [
        ("full", full, None, None),
        ("student", full, True, True),
        ("slim", slim, None, None),
        ("slim-student", slim, True, True),
    ]


def cmd_experiment(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Train and compare the ablation or compression variants, averaged over ``--seeds``.

    Every seed trains each variant from scratch; ``ablate`` also reports the
    RGB-D teacher evaluated on the same pairs with its depth inputs.
    """
    config = load_run_config(args)
    eval_root = args.eval_data or args.val_data
    if eval_root is None:
        raise ConfigurationError(f"{args.command} needs --eval-data or --val-data")
    seeds: list[int] = list(dict.fromkeys(args.seeds or [config.train.seed]))
    report_path = args.out / f"{args.command}.json"
    write_manifest(
        args, argv, config, [args.data, args.val_data, eval_root, args.teacher], [report_path]
    )
    teacher_paths = _teachers_for(args, config, seeds)
    eval_source = DiskPairSource(eval_root)

    per_seed: dict[str, list[ComparisonRow]] = {}
    if args.command == "ablate":
        runs: list[tuple[int | None, Path]] = (
            [(None, Path(args.teacher))]
            if args.teacher is not None
            else [(seed, path) for seed, path in teacher_paths.items()]
        )
        per_seed["teacher"] = [
            _comparison_row("teacher", load_checkpoint(path), path, eval_source, config, seed)
            for seed, path in runs
        ]

    variants = experiment_variants(args.command, config.matcher)
    for seed in seeds:
        teacher = load_checkpoint(teacher_paths[seed])
        for name, matcher_config, use_mqd, use_att in variants:
            checkpoint = args.out / f"{name}.seed{seed}{CHECKPOINT_SUFFIX}"
            log_path = args.out / f"{name}.seed{seed}.{TRAIN_LOG}"
            if use_mqd is None:
                train = _train_config(config, seed=seed)
                trainer = train_baseline(train, matcher_config, checkpoint, log_path)
            else:
                train = _train_config(
                    config,
                    seed=seed,
                    role="student",
                    teacher_checkpoint=teacher_paths[seed],
                    use_mqd=use_mqd,
                    use_att=use_att,
                )
                trainer = train_student(train, matcher_config, teacher, checkpoint, log_path)
            row = _comparison_row(
                name, trainer.matcher, checkpoint, eval_source, config, seed, trainer
            )
            per_seed.setdefault(name, []).append(row)
            logger.info("%s seed %d: AUC %s", name, seed, row.auc)

    report = ComparisonReport(
        experiment="ablate" if args.command == "ablate" else "compress",
        seeds=seeds,
        thresholds=list(config.evaluation.pose_thresholds),
        rows=[ComparisonRow.average(rows) for rows in per_seed.values()],
    )
    for row in report.rows:
        print(f"{row.name}: AUC " + " ".join(f"{v:.2f}" for v in row.auc))
    _write_json(report_path, report.model_dump_json(indent=2))
    return 0


def cmd_param_count(args: argparse.Namespace, argv: Sequence[str]) -> int:
    """Print the parameter count of a checkpoint or of the configured architecture."""
    config = load_run_config(args)
    out_path = args.out / "param_count.json"
    write_manifest(args, argv, config, [args.checkpoint], [out_path])
    if args.checkpoint is not None:
        matcher = load_checkpoint(args.checkpoint)
    else:
        matcher_config = config.matcher.slim() if args.slim else config.matcher
        matcher = Matcher.initialise(matcher_config, seed=config.train.seed)
    counts = param_count(matcher)
    _write_json(out_path, counts.model_dump_json(indent=2))
    print(f"total: {counts.total}")
    for group, n in counts.by_module.items():
        print(f"  {group}: {n}")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace, Sequence[str]], int]] = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train,
    "train-student": cmd_train,
    "train-baseline": cmd_train,
    "eval-pose": cmd_eval,
    "eval-homography": cmd_eval,
    "match": cmd_match,
    "ablate": cmd_experiment,
    "compress": cmd_experiment,
    "param-count": cmd_param_count,
}


def main(argv: list[str] | None = None) -> int:
    """CLI entry point.

    Returns 0 on success, 1 on a domain or I/O error and 2 on a usage or
    configuration validation error.
    """
    raw = sys.argv[1:] if argv is None else argv
    parser = create_parser()
    try:
        args = parser.parse_args(raw)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    if args.command is None:
        parser.print_help()
        return 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        return COMMANDS[args.command](args, raw)
    except ValidationError as e:
        logger.error("Invalid configuration: %s", e)
        return 2
    except (DeskmatchError, OSError) as e:
        logger.error("%s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
