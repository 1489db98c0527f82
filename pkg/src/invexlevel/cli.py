"""Command-line entry point.

Subcommands: train, minimize, levelset, interpolate, verify, export. Every
run prints its fully resolved configuration first, and failures exit
nonzero with the error class named in the message.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass

import torch

from . import store
from .diffnet import DTYPE
from .levelset import (
    SubspaceBox,
    find_minimum,
    find_minimum_box,
    levelset_interpolate,
    levelset_sample,
)
from .model import MODEL_KINDS, TrainConfig, train
from .targets import GridSpec, dataset_to_csv, grid_dataset, make_target
from .verify import PROBE_SUITES, oracle_level_points, run_probes


@dataclass
class RunConfig:
    """Resolved invocation, printed before any computation."""

    command: str
    options: dict

    def show(self) -> None:
        print(f"config: {self.command} "
              + json.dumps(self.options, sort_keys=True, default=str))


def _parse_point(text: str, name: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"{name} must be comma-separated numbers, got {text!r}")
    return vals


def _parse_box(text: str) -> SubspaceBox:
    vals = _parse_point(text, "--box")
    if len(vals) % 2 != 0:
        raise ValueError("--box needs lo,hi pairs per dimension")
    return SubspaceBox(vals[0::2], vals[1::2])


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="invexlevel",
                                 description="invex property models with "
                                             "exact level-set extraction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a synthetic target")
    p.add_argument("--target", choices=("rosenbrock", "gauss2"), required=True)
    p.add_argument("--model", choices=MODEL_KINDS, default="invex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--out", required=True, help="archive path")
    p.add_argument("--report", help="loss-curve CSV path")

    p = sub.add_parser("minimize", help="locate the property minimum")
    p.add_argument("--model", required=True, help="archive path")
    p.add_argument("--box", help="latent box lo1,hi1,lo2,hi2,...")

    p = sub.add_parser("levelset", help="sample a level set")
    p.add_argument("--model", required=True, help="archive path")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--box", help="restrict to a latent box lo1,hi1,lo2,hi2,...")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--svg", help="optional SVG path")

    p = sub.add_parser("interpolate", help="on-level path between two points")
    p.add_argument("--model", required=True, help="archive path")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--from", dest="from_", metavar="x1,x2", required=True)
    p.add_argument("--to", metavar="x1,x2", required=True)
    p.add_argument("--steps", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--box", help="restrict to a latent box lo1,hi1,lo2,hi2,...")
    p.add_argument("--out", required=True, help="CSV path")

    p = sub.add_parser("verify", help="run the probe suite")
    p.add_argument("--suite", action="append", choices=PROBE_SUITES,
                   help="restrict to named suites (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="JSON verdict path")

    p = sub.add_parser("export", help="write a target dataset or oracle curve")
    p.add_argument("--target", choices=("rosenbrock", "gauss2"), required=True)
    p.add_argument("--alpha", type=float,
                   help="export the oracle level curve instead of the dataset")
    p.add_argument("--grid", type=int, default=40, help="points per axis")
    p.add_argument("--lo", type=float, default=-0.4)
    p.add_argument("--hi", type=float, default=0.4)
    p.add_argument("--out", required=True)
    return ap


def _show_config(args: argparse.Namespace) -> None:
    opts = {k: v for k, v in vars(args).items() if k != "command"}
    RunConfig(args.command, opts).show()


def _cmd_train(args) -> int:
    target = make_target(args.target)
    dataset = grid_dataset(GridSpec(), target)
    config = TrainConfig(epochs=args.epochs, seed=args.seed)
    result = train(args.model, dataset, config)
    store.save_model(result.model, args.out, train_config=config, seed=args.seed)
    if args.report:
        result.report.to_csv(args.report)
    final = result.report.rows[-1] if result.report.rows else None
    if final is not None:
        print(f"trained {args.model} on {args.target}: final total loss "
              f"{final.total:.6f} after {args.epochs} epochs")
    print(f"archive written to {args.out}")
    return 0


def _cmd_minimize(args) -> int:
    model = store.load_model(args.model)
    if args.box:
        box = _parse_box(args.box)
        z = find_minimum_box(model.property_latent, box)
    else:
        z = find_minimum(model.property_latent,
                         torch.zeros(model.latent_dim, dtype=DTYPE))
    with torch.no_grad():
        x = model.decode_mean(z.reshape(1, -1))[0]
        f = float(model.property_latent(z.reshape(1, -1))[0])
    print("z* = [" + ", ".join(f"{v:.12g}" for v in z.tolist()) + "]")
    print("x* = [" + ", ".join(f"{v:.12g}" for v in x.tolist()) + "]")
    print(f"F(z*) = {f:.12g}")
    return 0


def _cmd_levelset(args) -> int:
    model = store.load_model(args.model)
    box = _parse_box(args.box) if args.box else None
    points = levelset_sample(model, args.alpha, args.samples, tol=args.tol,
                             seed=args.seed, subspace=box)
    store.export_curve(points, args.out, "csv")
    if args.svg:
        store.export_curve(points, args.svg, "svg")
    worst = float((points.values - args.alpha).abs().max())
    print(f"wrote {points.inputs.shape[0]} level-set points to {args.out} "
          f"(max |F - alpha| = {worst:.3e})")
    return 0


def _cmd_interpolate(args) -> int:
    model = store.load_model(args.model)
    x_a = _parse_point(args.from_, "--from")
    x_b = _parse_point(args.to, "--to")
    box = _parse_box(args.box) if args.box else None
    path = levelset_interpolate(model, x_a, x_b, args.alpha, args.steps,
                                tol=args.tol, subspace=box)
    store.export_curve(path, args.out, "csv")
    worst = float((path.values - args.alpha).abs().max())
    print(f"wrote {args.steps}-step path to {args.out} "
          f"(max |F - alpha| = {worst:.3e})")
    return 0


def _cmd_verify(args) -> int:
    verdicts = run_probes(args.suite, seed=args.seed)
    for v in verdicts:
        mark = "pass" if v.passed else "FAIL"
        print(f"[{mark}] {v.name}: value={v.value:.6g} threshold={v.threshold:.6g}")
    if args.report:
        with open(args.report, "w") as fh:
            json.dump([v.as_dict() for v in verdicts], fh, indent=2)
    return 0 if all(v.passed for v in verdicts) else 1


def _cmd_export(args) -> int:
    target = make_target(args.target)
    spec = GridSpec(args.lo, args.hi, args.grid)
    if args.alpha is None:
        dataset = grid_dataset(spec, target)
        dataset_to_csv(dataset, args.out)
        print(f"wrote {dataset.n} dataset rows to {args.out}")
        return 0
    curve = oracle_level_points(target, args.alpha, spec)
    with open(args.out, "w") as fh:
        fh.write("x1,x2\n")
        for row in curve.points:
            fh.write(f"{row[0]:.17g},{row[1]:.17g}\n")
    print(f"wrote {curve.size} oracle curve points to {args.out}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "minimize": _cmd_minimize,
    "levelset": _cmd_levelset,
    "interpolate": _cmd_interpolate,
    "verify": _cmd_verify,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    _show_config(args)
    try:
        return _COMMANDS[args.command](args)
    except Exception as e:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
