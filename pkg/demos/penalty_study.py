"""Robustness of the outer iteration with respect to the penalty parameter.

Runs a short simulation for each penalty value and prints the mean outer
FGMRES count per Newton step, skipping the start-up steps.
"""
from chnsprec.driver import RunConfig, run_study


def main(nx=8, steps=4, skip=2):
    base = RunConfig(nx=nx, ny=2 * nx, n_steps=steps, solver="krylov")
    res = run_study("vary-penalty", base, values=[1e4, 1e6, 1e8])
    for label, stats in res.runs.items():
        print(f"{label:10s} mean FGMRES {stats.mean_fgmres(skip=skip):6.1f}  "
              f"max Newton {stats.max_newton}")
    for label, err in res.failures.items():
        print(f"{label:10s} failed: {err}")


if __name__ == "__main__":
    main()
