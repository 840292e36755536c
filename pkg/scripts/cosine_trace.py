"""Cosine between the descent direction and the direction to the final averaged model.

Traces every step of the SWAP run (phase-1 consensus gradient, then worker 0
in phase 2) and compares the first and last quarter means per seed.
"""

from pathlib import Path

from _common import config, parser, write_rows
from swaplab.diagnostics import cosine_trace
from swaplab.experiments import final_model, run_mode


def main():
    p = parser(__doc__, "cosine_trace")
    p.add_argument("--trace-every", type=int, default=1)
    args = p.parse_args()
    rows, declines = [], 0
    for seed in range(args.seeds):
        out = run_mode(config(args.config, seed, trace_every=args.trace_every), "swap")
        trace = cosine_trace(out.history.trace, final_model(out))
        first, last = trace.quarter_means()
        declines += last < first
        print(f"seed {seed}: first quarter {first:.4f}, last quarter {last:.4f}, "
              f"phase-1 steps {out.history.T}")
        rows += [[seed, int(ph), int(st), float(c)]
                 for ph, st, c in zip(trace.phases, trace.steps, trace.cosines)]
    path = write_rows(Path(args.out) / "trace.csv", ["seed", "phase", "step", "cosine"], rows)
    print(f"last quarter below first quarter in {declines}/{args.seeds} seeds; trace in {path}")


if __name__ == "__main__":
    main()
