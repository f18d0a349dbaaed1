"""Outer iteration counts: block-triangular vs block-diagonal baseline.

Takes the first Newton system of a few consecutive time steps and solves
each with the block-triangular preconditioner under FGMRES(30) and with the
baseline under GMRES(10) and FGMRES(30).
"""
from chnsprec.driver import advance, init_two_step
from chnsprec.mesh import build_dofmap, build_rect_mesh
from chnsprec.model import LinearSolverConfig, State, build_newton_system
from chnsprec.physics import BENCHMARK1
from chnsprec.precond import compare_preconditioners


def main(nx=8, steps=3):
    mesh = build_rect_mesh(1.0, 2.0, nx, 2 * nx)
    dof = build_dofmap(mesh)
    hist = init_two_step(BENCHMARK1, mesh, dof)
    print(f"{'step':>4} {'block-tri':>9} {'GMRES(10)':>9} {'FGMRES(30)':>10}")
    for k in range(1, steps + 1):
        x0 = State(v=hist.v_km1.copy(), p=0 * hist.phi_km1, phi=hist.phi_km1.copy(),
                   mu=hist.mu_km1.copy())
        system = build_newton_system(x0, hist, BENCHMARK1, mesh, dof)
        c = compare_preconditioners(system)
        print(f"{k:4d} {c.block_triangular:9d} {c.baseline:9d} {c.baseline_fgmres:10d}")
        _, _, hist = advance(hist, BENCHMARK1, mesh, dof, LinearSolverConfig(), step=k)


if __name__ == "__main__":
    main()
