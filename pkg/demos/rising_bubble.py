"""Rising bubble on a coarse mesh.

Runs a handful of time steps of the benchmark-1 bubble with the
block-triangular preconditioner and prints, per step, the Newton count,
the mean outer FGMRES count, the energy and the bubble centroid height.
"""
import numpy as np

from chnsprec.driver import RunConfig, bubble_centroid, run
from chnsprec.mesh import build_rect_mesh


def main(nx=8, steps=6):
    cfg = RunConfig(nx=nx, ny=2 * nx, n_steps=steps, solver="krylov")
    mesh = build_rect_mesh(cfg.width, cfg.height, cfg.nx, cfg.ny)
    print(f"{'step':>4} {'newton':>6} {'fgmres':>7} {'energy':>12} {'centroid y':>11}")

    def show(k, state, rec):
        y = bubble_centroid(mesh, state.phi)[1]
        print(f"{k:4d} {rec.newton_iters:6d} {rec.mean_fgmres:7.1f} {rec.energy:12.6e} {y:11.7f}")

    stats, state, _ = run(cfg, callback=show)
    print(f"mass drift {abs(stats.records[-1].mass - stats.initial_mass):.2e}, "
          f"max |phi| {np.abs(state.phi).max():.4f}")


if __name__ == "__main__":
    main()
