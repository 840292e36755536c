"""Error surface on the plane through the large-batch, small-batch SGD and SWAP solutions.

Trains the three models from one seed, then evaluates train and test error
on a grid spanning them.
"""

from pathlib import Path

from _common import config, parser
from swaplab.diagnostics import GridSpec, loss_surface, plane_basis
from swaplab.experiments import final_model, run_mode


def main():
    p = parser(__doc__, "landscape")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=21)
    p.add_argument("--margin", type=float, default=0.3)
    args = p.parse_args()
    cfg = config(args.config, args.seed, trace_every=0)
    swap = run_mode(cfg, "swap")
    sgd = run_mode(cfg, "sgd_small")
    lb = swap.result.phase1_model
    basis = plane_basis(lb, final_model(sgd), swap.result.final_model)
    grid = GridSpec(resolution=(args.resolution, args.resolution), margin=args.margin)
    extra = {f"worker_{w}": basis.project(m) for w, m in enumerate(swap.result.pre_average_models)}
    surface = loss_surface(basis, grid, swap.spec, swap.train, swap.test, extra_marked=extra,
                           threads=cfg.threads)
    csv_path, _ = surface.write(Path(args.out), extra={"seed": args.seed})
    for label, (a, b) in basis.marked.items():
        e = surface.at(a, b)
        print(f"{label:>5} at ({a:8.3f}, {b:8.3f}): train error {e['train_error']:6.2f}%, "
              f"test error {e['test_error']:6.2f}%")
    a, b, err = surface.best
    print(f"lowest test error {err:.2f}% at ({a:.3f}, {b:.3f}); grid in {csv_path}")


if __name__ == "__main__":
    main()
