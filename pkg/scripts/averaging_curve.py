"""Test accuracy of every worker and of their average during the small-batch phase.

Writes one row per (seed, epoch) and prints how often the averaged model
beats the mean and the best of the workers at the end of training.
"""

from pathlib import Path

import numpy as np

from _common import config, parser, write_rows
from swaplab.experiments import run_mode


def main():
    args = parser(__doc__, "averaging_curve").parse_args()
    rows, beat_mean, beat_max = [], 0, 0
    for seed in range(args.seeds):
        out = run_mode(config(args.config, seed, trace_every=0), "swap")
        for r in out.history.records:
            if r.phase == 2:
                rows.append([seed, r.epoch, r.avg_test_acc, *r.worker_test_acc])
        s = out.summary()
        after, workers = s["test_acc_after_averaging"], s["worker_test_acc"]
        beat_mean += after >= np.mean(workers)
        beat_max += after >= max(workers)
        print(f"seed {seed}: averaged {after:.4f}, worker mean {np.mean(workers):.4f}, "
              f"best worker {max(workers):.4f}")
    n_workers = len(rows[0]) - 3
    path = write_rows(Path(args.out) / "curve.csv",
                      ["seed", "epoch", "averaged_test_acc",
                       *[f"worker_{k}_test_acc" for k in range(n_workers)]], rows)
    print(f"averaged >= worker mean in {beat_mean}/{args.seeds} runs, "
          f">= best worker in {beat_max}/{args.seeds}; curve in {path}")


if __name__ == "__main__":
    main()
