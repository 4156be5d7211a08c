"""CLI entrypoint: pretrain, train, infer, eval, export-edges and selftest.

Every subcommand accepts ``--config FILE`` plus one ``--section.key VALUE``
flag for each configuration key it consumes (``--help`` lists them with their
defaults). Each invocation creates a timestamped run directory under
``run.root`` holding the resolved configuration (``config.cfg``), the log
(``run.log``) and whatever the subcommand produces.

Failures are printed to stderr as ``Error (<category>): <message>`` and the
process exits with the category's status (see :mod:`edgeseg.errors`).
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from datetime import datetime
from pathlib import Path

import numpy as np

from edgeseg.checkpoint import load_model_checkpoint
from edgeseg.config import (
    DATA_ROOT_ENV,
    SCHEMA,
    RunConfig,
    keys_for_sections,
    parse_config_file,
    render_config,
    resolve_config,
)
from edgeseg.dataset import case_id_from_path
from edgeseg.edge import LEVEL_FACTORS, edge_targets
from edgeseg.errors import EdgesegError, UsageError
from edgeseg.inference import binarize, predict_volume
from edgeseg.logs import configure_logging
from edgeseg.metaimage import read_metaimage, write_metaimage
from edgeseg.metrics import evaluate_case
from edgeseg.network import Mode
from edgeseg.report import write_report
from edgeseg.selftest import run_selftest
from edgeseg.trainer import resolve_device, train
from edgeseg.volume import Volume, VolumeKind

logger = logging.getLogger("edgeseg.cli")

IO_EXIT_STATUS = 5
METAIMAGE_SUFFIXES = (".mhd", ".mha")

EPILOG = """
Examples:
  edgeseg selftest
  edgeseg pretrain --config runs.cfg --max-iterations 2000
  edgeseg train --config runs.cfg --train.encoder_checkpoint pre/checkpoint_002000.pt
  edgeseg infer --checkpoint run/checkpoint_006000.pt --input Case00.mhd --output Case00_pred.mhd
  edgeseg eval --pred-dir preds --gt-dir data --report report.csv
  edgeseg export-edges --label Case00_segmentation.mhd --output-dir edges
"""

_COMMON = ("run", "log")
COMMAND_KEYS: dict[str, list[str]] = {
    "pretrain": keys_for_sections("data", "augment", "network", "loss", "train", *_COMMON),
    "train": keys_for_sections("data", "augment", "edge", "network", "loss", "train", *_COMMON),
    "infer": keys_for_sections("data", "infer", *_COMMON) + ["train.device"],
    "eval": keys_for_sections(*_COMMON),
    "export-edges": keys_for_sections("edge", *_COMMON),
    "selftest": keys_for_sections(*_COMMON),
}

COMMAND_HELP = {
    "pretrain": "Pretrain the encoder with the simple decoder (cross entropy, SGD).",
    "train": "Train the full edge-attention network (dice + edge losses, Adam).",
    "infer": "Predict a label volume with sliding windows.",
    "eval": "Compare predicted labels with ground truth and write a report.",
    "export-edges": "Write the three per-scale edge maps of a label volume.",
    "selftest": "Run the phantom-based self-test.",
}


def _add_key_flags(parser: argparse.ArgumentParser, keys: Sequence[str]) -> None:
    group = parser.add_argument_group("configuration keys")
    for key in keys:
        spec = SCHEMA[key]
        default = spec.default
        if key == "data.root":
            default = f"${DATA_ROOT_ENV}"
        kwargs = {"nargs": "+"} if isinstance(spec.default, tuple) else {}
        group.add_argument(
            f"--{key}",
            dest=key,
            default=argparse.SUPPRESS,
            metavar="VALUE",
            help=f"{spec.help} (default: {default})",
            **kwargs,
        )


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(
        prog="edgeseg",
        description="Boundary-aware 3D prostate segmentation: training, inference and evaluation.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for name, keys in COMMAND_KEYS.items():
        sub = commands.add_parser(name, help=COMMAND_HELP[name], description=COMMAND_HELP[name])
        sub.add_argument("--config", type=Path, default=None, help="Configuration file (section/key = value lines).")
        if name in ("pretrain", "train"):
            sub.add_argument(
                "--max-iterations", dest="train.max_iterations", default=argparse.SUPPRESS, metavar="N",
                help="Alias of --train.max_iterations.",
            )
        elif name == "infer":
            sub.add_argument("--checkpoint", type=Path, required=True, help="Full-mode checkpoint.")
            sub.add_argument("--input", type=Path, required=True, help="Input image (.mhd or .mha).")
            sub.add_argument("--output", type=Path, required=True, help="Output label volume (.mhd).")
            sub.add_argument("--prob-output", type=Path, default=None, help="Also write the probability map here.")
            sub.add_argument("--threshold", dest="infer.threshold", default=argparse.SUPPRESS, metavar="P",
                             help="Alias of --infer.threshold.")
            sub.add_argument("--lcc", dest="infer.lcc", action="store_const", const="true",
                             default=argparse.SUPPRESS, help="Keep only the largest connected component.")
        elif name == "eval":
            sub.add_argument("--pred-dir", type=Path, required=True, help="Directory of predicted labels.")
            sub.add_argument("--gt-dir", type=Path, required=True, help="Directory of ground-truth labels.")
            sub.add_argument("--report", type=Path, default=None,
                             help="CSV report path (default: report.csv in the run directory).")
        elif name == "export-edges":
            sub.add_argument("--label", type=Path, required=True, help="Label volume (.mhd or .mha).")
            sub.add_argument("--output-dir", type=Path, required=True, help="Directory for the edge maps.")
        _add_key_flags(sub, keys)
    return parser


def collect_overrides(args: argparse.Namespace) -> dict[str, str]:
    """Raw ``{dotted_key: value}`` for every configuration flag given on the command line."""
    overrides = {}
    for key, value in vars(args).items():
        if key in SCHEMA:
            overrides[key] = " ".join(value) if isinstance(value, list) else str(value)
    return overrides


def make_run_dir(root: str | Path, command: str, now: datetime | None = None) -> Path:
    """Create ``<root>/<command>-YYYYmmdd-HHMMSS`` (suffixed ``-1``, ``-2``... if taken)."""
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    base = Path(root) / f"{command}-{stamp}"
    candidate, n = base, 0
    while True:
        try:
            candidate.mkdir(parents=True)
            return candidate
        except FileExistsError:
            n += 1
            candidate = base.with_name(f"{base.name}-{n}")


def _metaimage_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in METAIMAGE_SUFFIXES)


def pair_eval_cases(pred_dir: Path, gt_dir: Path) -> dict[str, tuple[Path, Path]]:
    """Match predicted and ground-truth label files by case id.

    Ground-truth files named ``<case>_segmentation`` are preferred when the
    directory also holds images; the suffix is stripped from both sides.

    :raises UsageError: If the two directories do not hold the same cases; the
        missing cases are named.
    """
    preds = {case_id_from_path(p): p for p in _metaimage_files(pred_dir)}
    gt_files = _metaimage_files(gt_dir)
    labelled = [p for p in gt_files if p.stem.lower().endswith("_segmentation")]
    gts = {case_id_from_path(p): p for p in (labelled or gt_files)}
    missing_pred = sorted(set(gts) - set(preds))
    missing_gt = sorted(set(preds) - set(gts))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"no prediction for {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"no ground truth for {', '.join(missing_gt)}")
        raise UsageError("case lists differ: " + "; ".join(parts))
    if not gts:
        raise UsageError(f"no MetaImage files in {gt_dir}")
    return {case: (preds[case], gts[case]) for case in sorted(gts)}


def cmd_train(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> int:
    mode = Mode.PRETRAIN if args.command == "pretrain" else Mode.FULL
    final = train(config, mode, run_dir)
    print(final)
    return 0


def cmd_infer(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> int:
    model, container = load_model_checkpoint(args.checkpoint)
    if model.mode is not Mode.FULL:
        raise UsageError(f"{args.checkpoint} is a {model.mode.value} checkpoint; inference needs a full-mode one")
    image = read_metaimage(args.input, VolumeKind.IMAGE)
    device = resolve_device(config["train.device"])
    model.to(device)
    logger.info("predicting %s with %s (iteration %d)", args.input, args.checkpoint, container["iteration"])
    prob = predict_volume(
        model,
        image,
        config["data.spacing"],
        config["data.normalization"],
        window=config["infer.window"],
        stride=config["infer.stride"],
        workers=config["infer.workers"],
        device=device,
    )
    label = binarize(prob, config["infer.threshold"], config["infer.lcc"])
    for path in (args.output, args.prob_output):
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
    print(write_metaimage(label, args.output))
    if args.prob_output is not None:
        print(write_metaimage(prob, args.prob_output))
    return 0


def cmd_eval(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> int:
    reports = []
    for case, (pred_path, gt_path) in pair_eval_cases(args.pred_dir, args.gt_dir).items():
        pred = read_metaimage(pred_path, VolumeKind.LABEL)
        gt = read_metaimage(gt_path, VolumeKind.LABEL)
        reports.append(evaluate_case(pred, gt, case))
        logger.info("evaluated %s: dice %.4f", case, reports[-1].dice)
    csv_path, text_path = write_report(reports, args.report or run_dir / "report.csv")
    print(text_path.read_text(encoding="utf-8"), end="")
    print(csv_path)
    return 0


def cmd_export_edges(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> int:
    label = read_metaimage(args.label, VolumeKind.LABEL)
    # pad every axis up to a multiple of the coarsest level factor
    coarsest = LEVEL_FACTORS[0]
    pads = [(0, (-n) % f) for n, f in zip(label.shape, coarsest)]
    data = np.pad(label.data, pads, mode="constant", constant_values=0)
    maps = edge_targets(data, config["edge.extractor"])
    args.output_dir.mkdir(parents=True, exist_ok=True)
    stem = case_id_from_path(args.label) or args.label.stem
    for level, (edge, factor) in enumerate(zip(maps.maps, LEVEL_FACTORS), start=1):
        spacing = tuple(s * f for s, f in zip(label.spacing, factor))
        volume = Volume(edge.astype(np.float32), spacing, label.origin, VolumeKind.IMAGE)
        print(write_metaimage(volume, args.output_dir / f"{stem}_edge{level}.mhd"))
    return 0


def cmd_selftest(args: argparse.Namespace, config: RunConfig, run_dir: Path) -> int:
    results = run_selftest(run_dir / "phantom")
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    failed = sum(1 for _, passed, _ in results if not passed)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


COMMANDS = {
    "pretrain": cmd_train,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "export-edges": cmd_export_edges,
    "selftest": cmd_selftest,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run one subcommand and return the process exit status.

    :param argv: Arguments without the program name (``sys.argv[1:]`` if None).
    :returns: 0 on success, the error category's status otherwise.
    :rtype: int
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        file_values = parse_config_file(args.config) if args.config is not None else {}
        config = resolve_config(file_values, collect_overrides(args))
        run_dir = make_run_dir(config["run.root"], args.command)
        (run_dir / "config.cfg").write_text(render_config(config), encoding="utf-8")
        configure_logging(config["log.level"], run_dir / "run.log")
        logger.info("%s: run directory %s", args.command, run_dir)
        return COMMANDS[args.command](args, config, run_dir)
    except EdgesegError as e:
        print(f"Error ({e.category}): {e}", file=sys.stderr)
        return e.exit_status
    except OSError as e:
        print(f"Error (io): {e}", file=sys.stderr)
        return IO_EXIT_STATUS


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
