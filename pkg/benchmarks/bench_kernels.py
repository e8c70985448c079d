"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--nx 64 128] [--repeat 5]

Inputs come from a real M1 CutFEM system, so the sparsity pattern and
conditioning are representative. Timings exclude the first (JIT) call.
Results agree to round-off; the largest difference is printed per kernel.
"""
import argparse
import timeit

import numpy as np

from cutflux import _kernels as K
from cutflux.cutfem import ProblemData, assemble_system, build_dofmap
from cutflux.cutgeom import InterfacePolyline, classify
from cutflux.harness import manufactured
from cutflux.mesh import build_structured_mesh


def _inputs(nx):
    mesh = build_structured_mesh(nx, nx)
    mc = manufactured("M1", 1.0, 10.0)
    topo = classify(mesh, mc.interface)
    data = ProblemData(1.0, 10.0, mc.f[0], mc.f[1])
    system = assemble_system(topo, build_dofmap(topo), data)
    return mesh, system.A, system.rhs


def _time(fn, repeat):
    fn()  # warm-up (triggers compilation for the numba variant)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _diff(a, b):
    if isinstance(a, tuple):
        return max(_diff(x, y) for x, y in zip(a, b) if isinstance(x, np.ndarray))
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def bench(nx, repeat):
    mesh, A, b = _inputs(nx)
    n = A.n
    rows, cols, vals = A.coo()
    # unsorted triplets, as produced by element-wise assembly
    perm = np.random.default_rng(0).permutation(rows.size)
    rows, cols, vals = rows[perm], cols[perm], vals[perm]
    indptr, indices, data = A.indptr, A.indices, A.data
    x = np.linspace(-1.0, 1.0, n)
    dinv = 1.0 / A.diagonal()
    xy = mesh.tri_coords()
    cases = {
        "coo_to_csr": lambda f: f(rows, cols, vals, n),
        "csr_matvec": lambda f: f(indptr, indices, data, x),
        "pcg": lambda f: f(indptr, indices, data, dinv, b, np.zeros(n), 1e-11, 10 * n),
        "p1_gradients": lambda f: f(xy),
    }
    out = []
    for name, call in cases.items():
        f_np, f_nb = getattr(K, f"{name}_numpy"), getattr(K, f"{name}_numba")
        t_np = _time(lambda: call(f_np), repeat)
        t_nb = _time(lambda: call(f_nb), repeat)
        out.append((nx, n, name, t_np, t_nb, _diff(call(f_np), call(f_nb))))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nx", type=int, nargs="+", default=[64, 128])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'nx':>5} {'dofs':>7} {'kernel':<13} {'numpy [ms]':>11} {'numba [ms]':>11} "
          f"{'speed-up':>9} {'max diff':>9}")
    for nx in args.nx:
        for nx_, n, name, t_np, t_nb, d in bench(nx, args.repeat):
            print(f"{nx_:>5} {n:>7} {name:<13} {1e3 * t_np:>11.3f} {1e3 * t_nb:>11.3f} "
                  f"{t_np / t_nb:>8.1f}x {d:>9.1e}")


if __name__ == "__main__":
    main()
