"""Measured spectral radius of the Cahn-Hilliard Schur approximation error.

For random active sets, compares the measured radius of X^{-1}(X - Y) with
the a priori bound, first at the benchmark step size and then at the step
size for which the bound equals one half.
"""
from chnsprec.mesh import build_rect_mesh
from chnsprec.physics import BENCHMARK1
from chnsprec.spectra import corollary_radius, sweep, tau_threshold


def main(nx=8, samples=5):
    mesh = build_rect_mesh(1.0, 2.0, nx, 2 * nx)
    small = BENCHMARK1.with_(tau=tau_threshold(BENCHMARK1))
    print(f"benchmark bound {corollary_radius(BENCHMARK1):.1f}, "
          f"step size for radius 1/2: {small.tau:.3e}")
    res = sweep(mesh, [BENCHMARK1, small], samples, seed=0)
    for label, rep in zip(res.labels, res.reports):
        print(f"{label:8s} measured {rep.measured_radius:10.4e}  "
              f"bound {rep.bound_radius:10.4e}  contained {rep.contained()}")


if __name__ == "__main__":
    main()
