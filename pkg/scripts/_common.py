"""Helpers shared by the experiment scripts."""

import argparse
import csv
import dataclasses
from pathlib import Path

from swaplab.config import DiagnosticsConfig, load_config


def parser(doc: str, out: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    p.add_argument("--config", default="desk", help="config file or preset name")
    p.add_argument("--seeds", type=int, default=10, help="number of seeds, starting at 0")
    p.add_argument("--out", default=f"results/{out}", help="output directory")
    return p


def config(path: str, seed: int, trace_every: int | None = None):
    cfg = load_config(path).with_overrides(seed=seed)
    if trace_every is not None:
        cfg = dataclasses.replace(cfg, diagnostics=DiagnosticsConfig(trace_every))
    return cfg


def write_rows(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path
