"""Timing comparison of the compiled CSR kernels vs the numpy fallback.

Measures raw matvec/rmatvec throughput on the discretized control
problems' Jacobians and a full MINRES solve that exercises the kernels
the way the solver does.  Run from the repository root:

    python3 benchmarks/bench_kernels.py --mesh 32 --repeats 200
"""

import argparse
import time

import numpy as np

from sisqo import kernels
from sisqo.krylov import minres_init
from sisqo.library import ControlProblemSpec, build_poisson_control
from sisqo.sparse import KktOperator


def _build(mesh):
    spec = ControlProblemSpec(mesh_size=mesh, n_terms=3, regularization=1e-5,
                              eps_n=1e-2, eps_s=float(np.sqrt(15.0)))
    problem = build_poisson_control(spec)
    j = problem.eval_jacobian(problem.x0)
    h = problem.eval_lagrangian_hessian(problem.x0, np.zeros(problem.m))
    return problem, h, j


def _time(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_matvec(j, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal(j.cols)
    xt = rng.standard_normal(j.rows)
    out = np.empty(j.rows)
    out_t = np.empty(j.cols)
    fwd = _time(lambda: kernels.csr_matvec(j.indptr, j.indices, j.data, x,
                                           out), repeats)
    rev = _time(lambda: kernels.csr_rmatvec(j.indptr, j.indices, j.data, xt,
                                            out_t), repeats)
    return fwd, rev


def bench_minres(h, j, steps, repeats):
    op = KktOperator(h, j)
    rng = np.random.default_rng(1)
    rhs = (rng.standard_normal(op.n), rng.standard_normal(op.m))

    def solve():
        state = minres_init(op, rhs)
        for _ in range(steps):
            if state.breakdown or state.stalled:
                break
            state.step()
        return state

    return _time(solve, repeats)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mesh", type=int, default=32,
                        help="interior grid points per side (default 32)")
    parser.add_argument("--repeats", type=int, default=100,
                        help="timing repeats, best-of (default 100)")
    parser.add_argument("--minres-steps", type=int, default=200,
                        help="MINRES steps per timed solve (default 200)")
    args = parser.parse_args(argv)

    problem, h, j = _build(args.mesh)
    nnz = len(j.data)
    print(f"problem {problem.name}: n={problem.n} m={problem.m}"
          f" jacobian nnz={nnz}")
    print(f"backends: {kernels.available_backends()}"
          f" (active: {kernels.active_backend()})")

    results = {}
    for name in kernels.available_backends():
        kernels.use_backend(name)
        fwd, rev = bench_matvec(j, args.repeats)
        solve = bench_minres(h, j, args.minres_steps,
                             max(3, args.repeats // 20))
        results[name] = (fwd, rev, solve)

    print(f"\n{'backend':<10} {'matvec':>12} {'rmatvec':>12}"
          f" {'minres x' + str(args.minres_steps):>14}")
    for name, (fwd, rev, solve) in sorted(results.items()):
        print(f"{name:<10} {fwd * 1e6:>10.1f}us {rev * 1e6:>10.1f}us"
              f" {solve * 1e3:>12.2f}ms")
    if len(results) == 2:
        py, comp = results["python"], results["compiled"]
        print(f"\nspeedup (python/compiled): matvec {py[0] / comp[0]:.2f}x,"
              f" rmatvec {py[1] / comp[1]:.2f}x,"
              f" minres {py[2] / comp[2]:.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
