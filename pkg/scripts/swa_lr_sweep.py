"""Sequential SWA accuracy as a function of the cyclic peak learning rate.

The minimum of each cycle stays at a tenth of the peak.
"""

import dataclasses
from pathlib import Path

import numpy as np

from _common import config, parser, write_rows
from swaplab.experiments import run_mode
from swaplab.schedules import ScheduleSpec


def main():
    p = parser(__doc__, "swa_lr_sweep")
    p.add_argument("--peaks", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3, 0.5])
    p.set_defaults(seeds=3)
    args = p.parse_args()
    rows = []
    for peak in args.peaks:
        accs = []
        for seed in range(args.seeds):
            cfg = config(args.config, seed, trace_every=0)
            plan = cfg.swa_plan()
            sched = ScheduleSpec.cyclic(plan.cycle_epochs, peak, peak / 10, plan.cycles)
            cfg = dataclasses.replace(cfg, schedules={**cfg.schedules, "swa": sched})
            s = run_mode(cfg, "swa").summary()
            accs.append(s["test_acc_after_averaging"])
            rows.append([peak, seed, s["test_acc_before_averaging"], accs[-1]])
        print(f"peak {peak:g}: mean averaged test accuracy {np.mean(accs):.4f}")
    path = write_rows(Path(args.out) / "sweep.csv",
                      ["lr_peak", "seed", "test_acc_before_averaging",
                       "test_acc_after_averaging"], rows)
    print(f"rows in {path}")


if __name__ == "__main__":
    main()
