"""Batch entry point: transform, place, eval and heatmap subcommands."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src import __version__
from src.bookshelf import (
    BundleIoError,
    FormatError,
    InfeasibleTransformError,
    ParseError,
    Transform3DSpec,
    load_instance,
    parse_bookshelf,
    read_placement_3d,
    transform_2d_to_3d,
    write_instance_3d,
    write_placement_3d,
)
from src.config import FlowConfig, get_settings, load_flow_config
from src.edensity import DensityMap, remove_mean, solve_field, splat_density, write_heatmaps
from src.evaluate import default_eval_grid, evaluate
from src.flow import FlowResult, StageError, flow_region, grid_3d, run_flow
from src.legalize import LegalizationFailure
from src.logging_setup import setup_logging
from src.model import BinGridSpec, InvalidInputError, InvalidRegionError
from src.schemas import EvalReport, RunManifest, StageReport

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

_USAGE_ERRORS = (
    ValidationError,
    ParseError,
    FormatError,
    BundleIoError,
    InfeasibleTransformError,
    InvalidInputError,
    InvalidRegionError,
)

# stage timings live in the manifest; stages.csv stays reproducible
_STAGE_COLUMNS = ["stage", "hpwl", "vi", "tau", "macro_overlap", "iterations"]


def _fraction(value: str) -> float:
    number = float(value)
    if not 0.0 <= number < 1.0:
        raise argparse.ArgumentTypeError(f"whitespace must be in [0, 1), got {value}")
    return number


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eplace3d", description="Mixed-size 3D-IC analytic placement.")
    sub = parser.add_subparsers(dest="command", required=True)

    transform = sub.add_parser("transform", help="Turn a 2D Bookshelf bundle into a tiered 3D bundle.")
    transform.add_argument("aux", type=Path)
    transform.add_argument("--tiers", type=_positive_int, required=True)
    transform.add_argument("--whitespace", type=_fraction, default=0.10)
    transform.add_argument("--name", default=None)
    transform.add_argument("--out", type=Path, required=True)

    place = sub.add_parser("place", help="Run the full placement flow.")
    place.add_argument("aux", type=Path, nargs="?")
    place.add_argument("--tiers", type=_positive_int, default=None)
    place.add_argument("--whitespace", type=_fraction, default=None)
    place.add_argument("--target-density", type=float, default=None)
    place.add_argument("--vi-weight", type=float, default=None)
    place.add_argument("--bin-k", type=float, default=None)
    place.add_argument("--seed", type=int, default=None)
    place.add_argument("--tau-stop", type=float, default=None)
    place.add_argument("--snapshots", action="store_true")
    place.add_argument("--density-only", action="store_true")
    place.add_argument("--precond", choices=["3d", "2d"], default=None)
    place.add_argument("--threads", type=_positive_int, default=None)
    place.add_argument("--config", type=Path, default=None)
    place.add_argument("--manifest", type=Path, default=None, help="Replay the run recorded in a manifest.")
    place.add_argument("--out", type=Path, required=True)

    for name, text in (("eval", "Check legality and report metrics."), ("heatmap", "Dump density and field slices.")):
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("aux", type=Path)
        cmd.add_argument("pl", type=Path)
        cmd.add_argument("--grid", type=_positive_int, default=None)
        cmd.add_argument("--tiers", type=_positive_int, default=None)
        cmd.add_argument("--whitespace", type=_fraction, default=None)
        cmd.add_argument("--vi-weight", type=float, default=None)
        cmd.add_argument("--config", type=Path, default=None)
        cmd.add_argument("--out", type=Path, required=True)
        if name == "heatmap":
            cmd.add_argument(
                "--inject-mode", type=int, nargs=3, metavar=("J", "K", "L"), default=None,
                help="Replace the placement density by a single cosine mode.",
            )
    return parser


def _resolve_config(args: argparse.Namespace) -> FlowConfig:
    """config.json, then environment, then flags."""
    settings = get_settings()
    path = getattr(args, "config", None) or settings.config_path
    config = load_flow_config(Path(path) if path else None)
    if "threads" in settings.model_fields_set:
        config = config.with_overrides(threads=settings.threads)
    config = config.with_overrides(seed=settings.seed)
    tau_stop = getattr(args, "tau_stop", None)
    precond = getattr(args, "precond", None)
    return config.with_overrides(
        tiers=getattr(args, "tiers", None),
        whitespace=getattr(args, "whitespace", None),
        target_density=getattr(args, "target_density", None),
        vi_weight=getattr(args, "vi_weight", None),
        bin_k=getattr(args, "bin_k", None),
        seed=getattr(args, "seed", None),
        threads=getattr(args, "threads", None),
        tau_stop_3d=tau_stop,
        tau_stop_2d=tau_stop,
        density_only=True if getattr(args, "density_only", False) else None,
        **{"optimizer.preconditioner": precond},
    )


def _load(aux: Path, config: FlowConfig, tiers_given: bool):
    tiers = config.tiers if (tiers_given or config.tiers > 1) else None
    instance = load_instance(aux, tiers=tiers, whitespace=config.whitespace)
    return instance, config.with_overrides(tiers=instance.region.tiers)


def _write_report(report: EvalReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report.to_text())
    (out_dir / "report.json").write_text(report.model_dump_json(indent=2) + "\n")


def _stage_table(reports: Sequence[StageReport]) -> Table:
    table = Table(title="Stages")
    for column in ("Stage", "HPWL", "#VI", "tau", "Om", "Iters", "Time (s)"):
        table.add_column(column, justify="left" if column == "Stage" else "right")
    for r in reports:
        table.add_row(
            r.stage,
            f"{r.hpwl:.6g}",
            "-" if r.vi is None else str(r.vi),
            f"{r.tau:.4f}",
            f"{r.macro_overlap:.3g}",
            str(r.iterations),
            f"{r.wall_time:.2f}",
        )
    return table


def _write_tables(result: FlowResult, out_dir: Path) -> None:
    stages = pd.DataFrame([r.model_dump() for r in result.reports], columns=_STAGE_COLUMNS)
    stages.to_csv(out_dir / "stages.csv", index=False)
    iterations = pd.DataFrame(
        [rec.model_dump(by_alias=True) for rec in result.history],
        columns=["stage", "iter", "hpwl", "wl", "energy", "lambda", "gamma", "tau", "alpha"],
    )
    iterations.to_csv(out_dir / "iterations.csv", index=False)


def cmd_transform(args: argparse.Namespace) -> int:
    bundle = parse_bookshelf(args.aux)
    if bundle.tiers is not None:
        raise FormatError(f"{args.aux} is already a {bundle.tiers}-tier bundle")
    spec = Transform3DSpec(tiers=args.tiers, extra_whitespace=args.whitespace if args.tiers > 1 else 0.0)
    instance = transform_2d_to_3d(bundle, spec)
    aux = write_instance_3d(instance, args.out, args.name)
    print(f"Wrote {instance.region.tiers}-tier bundle for {instance.netlist.num_cells} cells to {aux}")
    return EXIT_OK


def cmd_place(args: argparse.Namespace) -> int:
    out_dir: Path = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.manifest is not None:
        manifest = RunManifest.model_validate_json(Path(args.manifest).read_text())
        aux = Path(manifest.inputs[0])
        config = FlowConfig(**manifest.config)
        tiers_given = True
        logging.info("[cli] replaying %s", args.manifest)
    else:
        if args.aux is None:
            raise InvalidInputError("place needs an AUX file or --manifest")
        aux = args.aux
        config = _resolve_config(args)
        tiers_given = args.tiers is not None
    instance, config = _load(aux, config, tiers_given)

    manifest = RunManifest(
        inputs=[str(aux)],
        config=config.model_dump(),
        seed=config.seed,
        out_dir=str(out_dir),
        version=__version__,
    )
    manifest_path = out_dir / "manifest.json"
    snapshots = out_dir / "snapshots" if args.snapshots else None
    try:
        result = run_flow(instance, config, snapshot_dir=snapshots)
    except StageError as exc:
        cause = exc.__cause__
        if isinstance(cause, LegalizationFailure):
            logging.error("[cli] legalization failed on tier %s, residual overlap %.4g", cause.tier, cause.residual_overlap)
        logging.error("[cli] %s", exc)
        manifest.exit_code = EXIT_FAILED
        manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n")
        return EXIT_FAILED

    region = result.region
    write_placement_3d(result.placement, result.netlist, region, out_dir / "placement.pl")
    report = evaluate(result.placement, result.netlist, region, default_eval_grid(result.netlist, region))
    _write_report(report, out_dir)
    _write_tables(result, out_dir)
    Console().print(_stage_table(result.reports))

    manifest.stage_times = dict(result.stage_times)
    manifest.exit_code = EXIT_OK if report.legal else EXIT_FAILED
    manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n")
    if not report.legal:
        logging.error("[cli] final placement has %d violations", len(report.violations))
    print(
        f"Placed {instance.name}: hpwl={report.hpwl:.6g} vi={report.vi} tau={report.tau:.4f} "
        f"legal={str(report.legal).lower()}"
    )
    return manifest.exit_code


def _instance_and_placement(args: argparse.Namespace):
    config = _resolve_config(args)
    instance, config = _load(args.aux, config, args.tiers is not None)
    region = flow_region(instance, config)
    placement = read_placement_3d(args.pl, instance.netlist, region)
    return instance, region, placement, config


def cmd_eval(args: argparse.Namespace) -> int:
    instance, region, placement, _ = _instance_and_placement(args)
    report = evaluate(placement, instance.netlist, region, default_eval_grid(instance.netlist, region, args.grid))
    _write_report(report, args.out)
    for v in report.violations[:20]:
        logging.warning("[eval] %s %s amount=%.6g", v.kind, " ".join(v.cells), v.amount)
    print(report.to_text(), end="")
    return EXIT_OK if report.legal else EXIT_FAILED


def injected_density(grid: BinGridSpec, mode: Sequence[int]) -> DensityMap:
    """cos(pi j x) cos(pi k y) cos(pi l z) sampled at the bin centers."""
    centers = [(np.arange(m) + 0.5) / m for m in grid.shape]
    gx, gy, gz = np.meshgrid(*centers, indexing="ij")
    j, k, l = mode
    rho = np.cos(np.pi * j * gx) * np.cos(np.pi * k * gy) * np.cos(np.pi * l * gz)
    return DensityMap(grid=grid, rho=rho)


def cmd_heatmap(args: argparse.Namespace) -> int:
    instance, region, placement, config = _instance_and_placement(args)
    grid = BinGridSpec.cubic(args.grid) if args.grid else grid_3d(instance.netlist, region, config)
    if args.inject_mode is not None:
        density = injected_density(grid, args.inject_mode)
    else:
        density = splat_density(placement, instance.netlist, region, grid)
    written: List[Path] = write_heatmaps(density, solve_field(remove_mean(density), workers=config.threads), args.out)
    print(f"Wrote {len(written)} heatmap files for grid {grid.shape} to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "transform": cmd_transform,
    "place": cmd_place,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    settings = get_settings()
    log_dir = Path(settings.log_dir)
    if not log_dir.is_absolute():
        log_dir = args.out / log_dir
    setup_logging(log_dir, settings.log_level)
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleTransformError as exc:
        logging.error(
            "[cli] macro %s needs whitespace >= %.4f: %s", exc.macro, exc.required_whitespace, exc
        )
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        logging.error("[cli] %s", exc)
        return EXIT_USAGE
    except (StageError, LegalizationFailure) as exc:
        logging.error("[cli] %s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
