"""Time the compiled and NumPy kernel backends on the default arm.

    python3 benchmarks/bench_kernels.py [--repeat 2000]
"""
import argparse
import timeit

import numpy as np

from hybridvi import kernels
from hybridvi import manipulator as man


def bench(model, backend, q, qd, repeat):
    out = {}
    for name, fn in (("kinematics", lambda: man.kinematics(model, q, qd, backend)),
                     ("inertia_terms", lambda: man.inertia_terms(model, q, backend))):
        fn()  # warm up
        t = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat
        out[name] = t
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args(argv)

    model = man.load_default_model()
    rng = np.random.default_rng(0)
    q, qd = rng.uniform(-2, 2, (2, model.n))
    backs = kernels.available()
    if "compiled" not in backs:
        print("compiled extension not built; only timing the python backend")

    results = {name: bench(model, b, q, qd, args.repeat) for name, b in backs.items()}
    if "compiled" in results:
        # outputs must match before timings mean anything
        for a, b in zip(man.kinematics(model, q, qd, backs["python"]), man.kinematics(model, q, qd, backs["compiled"])):
            assert np.allclose(a, b, atol=1e-12)

    print(f"{'kernel':<16}" + "".join(f"{n:>14}" for n in results) + ("     speedup" if len(results) > 1 else ""))
    for k in results["python"]:
        row = f"{k:<16}" + "".join(f"{results[n][k] * 1e6:>11.1f} us" for n in results)
        if "compiled" in results:
            row += f"{results['python'][k] / results['compiled'][k]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
