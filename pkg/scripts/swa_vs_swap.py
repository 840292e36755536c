"""Sequential SWA against SWAP with the same number of averaged models.

Runs both arms per seed and reports accuracies before and after averaging
alongside wall-clock seconds.
"""

from pathlib import Path

import numpy as np

from _common import config, parser, write_rows
from swaplab.experiments import run_mode
from swaplab.swa import MethodSummary, swa_vs_swap_report


def main():
    p = parser(__doc__, "swa_vs_swap")
    p.add_argument("--threads", type=int, default=1, help="threads for the SWAP arm")
    args = p.parse_args()
    rows = []
    for seed in range(args.seeds):
        cfg = config(args.config, seed, trace_every=0)
        swa = run_mode(cfg, "swa")
        swap = run_mode(cfg.with_overrides(threads=args.threads), "swap")
        report = swa_vs_swap_report(MethodSummary.from_result(swa.result, swa.train),
                                    MethodSummary.from_result(swap.result, swap.train))
        print(f"seed {seed}\n{report.to_text()}")
        for r in report.rows:
            rows.append([seed, r.method, r.n_models, r.acc_before, r.acc_after, r.wall_clock])
    path = write_rows(Path(args.out) / "runs.csv",
                      ["seed", "method", "n_models", "test_acc_before_averaging",
                       "test_acc_after_averaging", "wall_clock_s"], rows)
    for method in dict.fromkeys(r[1] for r in rows):
        mine = [r for r in rows if r[1] == method]
        print(f"{method}: mean test accuracy {np.mean([r[4] for r in mine]):.4f}, "
              f"mean wall-clock {np.mean([r[5] for r in mine]):.2f} s")
    print(f"per-seed rows in {path}")


if __name__ == "__main__":
    main()
