"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--size 64] [--repeat 5] [--json out.json]

Both variants are called directly, so the ``UQAUDIT_NUMBA`` flag does not
matter here. The numba column is blank when numba is not installed.
"""

import argparse
import json
import timeit

import numpy as np

from uqaudit import _accel, kernels
from uqaudit.priors import builtin_crr


def cases(n, rng):
    v = rng.random((n, n))
    z = np.zeros((n, n))
    crr = builtin_crr()
    zz = rng.normal(scale=0.5, size=n * n)
    pwq_args = (crr.knot_origin, crr.knot_spacing, crr.derivs[0], crr._cumint[0], crr._offset[0])
    w = rng.random((5, 5))
    return {
        "tv_fgp (200 it)": lambda f: f(v, 0.05, z.copy(), z.copy(), 200, 0.0),
        "tv_value": lambda f: f(v),
        "pwq_eval": lambda f: f(zz, *pwq_args),
        "stencil 5x5": lambda f: f(v, w, False),
    }


PAIRS = {
    "tv_fgp (200 it)": ("_tv_fgp_np", "_tv_fgp_nb"),
    "tv_value": ("_tv_value_np", "_tv_value_nb"),
    "pwq_eval": ("_pwq_eval_np", "_pwq_eval_nb"),
    "stencil 5x5": ("_stencil_np", "_stencil_nb"),
}


def best_time(call, repeat):
    call()  # warm-up, and JIT compilation for numba
    number, _ = timeit.Timer(call).autorange()
    return min(timeit.repeat(call, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=64, help="image side length")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    for name, run in cases(args.size, rng).items():
        np_name, nb_name = PAIRS[name]
        t_np = best_time(lambda: run(getattr(kernels, np_name)), args.repeat)
        t_nb = best_time(lambda: run(getattr(kernels, nb_name)), args.repeat) if _accel.HAVE_NUMBA else None
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb if t_nb else None})

    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>9}   ({args.size}x{args.size})")
    for r in rows:
        nb = f"{1e3 * r['numba_s']:12.3f}" if r["numba_s"] else f"{'':>12}"
        sp = f"{r['speedup']:8.1f}x" if r["speedup"] else f"{'':>9}"
        print(f"{r['kernel']:<18}{1e3 * r['numpy_s']:12.3f}{nb}{sp}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump({"size": args.size, "rows": rows}, f, indent=2)


if __name__ == "__main__":
    main()
