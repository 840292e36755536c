"""``swaplab`` command line.

Exit codes: 0 success, 2 invalid config or arguments, 3 diverged run,
4 degenerate landscape plane, 5 unreadable or mismatched inputs,
1 any other library error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import MODES, RunConfig, load_config, load_datasets, output_dir
from .diagnostics import GridSpec, cosine_trace, loss_surface, plane_basis
from .errors import (ConfigError, ContractError, DegeneratePlaneError, DivergenceError,
                     ParseError, SwapLabError)
from .experiments import read_trace_bundle, run_mode, write_cosine, write_run
from .swa import MethodSummary, swa_vs_swap_report

log = logging.getLogger("swaplab")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DEGENERATE, EXIT_INPUT = 0, 1, 2, 3, 4, 5


class InputError(SwapLabError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    threads = 1 if getattr(args, "single_thread", False) else getattr(args, "threads", None)
    return cfg.with_overrides(seed=getattr(args, "seed", None), threads=threads)


def cmd_train(args) -> int:
    cfg = _config(args)
    cfg.validate_mode(args.mode)
    out = output_dir(cfg, args.out)
    outcome = run_mode(cfg, args.mode)
    write_run(outcome, out)
    s = outcome.summary()
    if "test_acc_after_averaging" in s:
        print(f"{args.mode}: test accuracy before averaging {s['test_acc_before_averaging']:.4f}, "
              f"after averaging {s['test_acc_after_averaging']:.4f}")
    else:
        print(f"{args.mode}: test accuracy {s['test_acc']:.4f}")
    print(f"artifacts in {out}")
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = _config(args)
    train, test = load_datasets(cfg)
    cks = []
    for p in args.checkpoints:
        if not Path(p).is_file():
            raise InputError(f"checkpoint not found: {p}")
        cks.append(load_checkpoint(p))
    spec = cks[0].spec
    if any(c.spec != spec for c in cks[1:]):
        raise InputError("checkpoints use different model specs")
    basis = plane_basis(*(c.model for c in cks), labels=tuple(args.labels))
    grid = GridSpec(resolution=(args.resolution, args.resolution), margin=args.margin)
    surface = loss_surface(basis, grid, spec, train, test, threads=cfg.threads)
    out = Path(args.out or output_dir(cfg) / "landscape")
    csv_path, _ = surface.write(out, extra={"checkpoints": [str(p) for p in args.checkpoints]})
    a, b, err = surface.best
    print(f"surface written to {csv_path}; BEST at ({a:.4g}, {b:.4g}) with test error {err:.2f}%")
    return EXIT_OK


def cmd_diag(args) -> int:
    run = Path(args.run)
    bundle = run / "trace.bundle"
    if not bundle.is_file():
        raise InputError(f"no trace snapshots in {run} (train with diagnostics.trace_every > 0)")
    ref = Path(args.reference) if args.reference else run / "checkpoints" / "final.ckpt"
    if not ref.is_file():
        raise InputError(f"reference checkpoint not found: {ref}")
    trace = cosine_trace(read_trace_bundle(bundle), load_checkpoint(ref).model)
    if args.phase is not None:
        trace = trace.select(phase=args.phase)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    write_cosine(out, trace)
    first, last = trace.quarter_means()
    print(f"cosine trace: {len(trace)} points, first-quarter mean {first:.4f}, "
          f"last-quarter mean {last:.4f}")
    return EXIT_OK


def _summary(run: Path) -> MethodSummary:
    if not run.is_dir():
        raise InputError(f"run directory not found: {run}")
    try:
        summary = json.loads((run / "summary.json").read_text())
        timing_path = run / "timing.json"
        timing = json.loads(timing_path.read_text()) if timing_path.is_file() else None
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"{run}: cannot read run summary ({err})") from err
    if "test_acc_after_averaging" not in summary:
        raise InputError(f"{run}: not an averaging run (mode {summary.get('mode')!r})")
    return MethodSummary.from_dict(summary, timing)


def cmd_compare(args) -> int:
    report = swa_vs_swap_report(_summary(Path(args.swa)), _summary(Path(args.swap)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(report.to_csv())
        (out / "comparison.txt").write_text(report.to_text(timing=False))
        (out / "comparison_timing.csv").write_text(report.timing_csv())
    print(report.to_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swaplab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, config_required=True):
        sp.add_argument("--config", required=config_required,
                        help="YAML/JSON config file or preset name")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--threads", type=int, help="worker thread cap")
        sp.add_argument("--single-thread", action="store_true",
                        help="force the serial, oracle-comparable mode")
        sp.add_argument("--out", help="output directory")

    t = sub.add_parser("train", help="run one experiment arm")
    t.add_argument("mode", choices=MODES)
    run_flags(t)
    t.set_defaults(func=cmd_train)

    ls = sub.add_parser("landscape", help="error surface on the plane through 3 checkpoints")
    ls.add_argument("checkpoints", nargs=3)
    run_flags(ls)
    ls.add_argument("--resolution", type=int, default=21)
    ls.add_argument("--margin", type=float, default=0.3)
    ls.add_argument("--labels", nargs=3, default=["LB", "SGD", "SWAP"])
    ls.set_defaults(func=cmd_landscape)

    d = sub.add_parser("diag", help="cosine trace of a traced run")
    d.add_argument("run")
    d.add_argument("--reference", help="checkpoint to aim at (default: the run's final model)")
    d.add_argument("--phase", type=int, choices=(1, 2))
    d.add_argument("--out")
    d.set_defaults(func=cmd_diag)

    c = sub.add_parser("compare", help="SWA vs SWAP table from two run directories")
    c.add_argument("swa")
    c.add_argument("swap")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except DegeneratePlaneError as err:
        print(f"error: degenerate plane: {err}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InputError, ParseError, ContractError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except SwapLabError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
