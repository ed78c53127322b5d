"""Time the compiled kernel core against the numpy fallback.

    python3 benchmarks/bench_kernels.py --n 500 1000 2000 --repeat 5

The end-to-end row times one MAP objective-and-gradient evaluation; it runs in
a subprocess per backend because the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from oakgp import _backend


def _cases(n, D, order, rng):
    x = rng.standard_normal(n)
    grams = np.ascontiguousarray(rng.standard_normal((D, n * n)) * 0.3)
    E = _backend.get("numpy").elementary_symmetric(grams, order)
    var = rng.uniform(0.1, 1.0, order + 1)
    return {
        "constrained_se_gaussian+grad": lambda m: m.constrained_se_gaussian(x, x, 0.8, 0.0, 1.0,
                                                                            True),
        "elementary_symmetric": lambda m: m.elementary_symmetric(grams, order),
        "loo_weights": lambda m: m.loo_weights(grams[0].copy(), E, var),
        "sobol_cross_gaussian": lambda m: m.sobol_cross_gaussian(x, 0.8, 0.0, 1.0),
    }


_E2E = """
import json, sys, timeit
import numpy as np
from oakgp import _backend
from oakgp.gp import GammaPrior, map_objective
from oakgp.kernels import ConstrainedSE, OakHyperparams
from oakgp.measures import GaussianMeasure
n, D, order, repeat = map(int, sys.argv[1:5])
rng = np.random.default_rng(0)
X = rng.standard_normal((n, D))
y = np.sin(X).sum(axis=1)
hp = OakHyperparams(tuple(ConstrainedSE(1.0, GaussianMeasure(0, 1)) for _ in range(D)),
                    (1.0,) * (order + 1), 0.1, order)
t = min(timeit.repeat(lambda: map_objective(hp, X, y, GammaPrior()), number=1, repeat=repeat))
print(json.dumps({"backend": _backend.BACKEND, "seconds": t}))
"""


def _end_to_end(n, D, order, repeat, pure):
    env = dict(os.environ)
    if pure:
        env["OAKGP_PURE_PYTHON"] = "1"
    else:
        env.pop("OAKGP_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", _E2E, str(n), str(D), str(order), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, nargs="+", default=[250, 500, 1000])
    p.add_argument("--features", type=int, default=6)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write results to this file")
    args = p.parse_args(argv)

    if not _backend.HAS_COMPILED:
        sys.exit("compiled core not built; run `pip install -e . --no-build-isolation` first")
    impls = {"cython": _backend.get("cython"), "numpy": _backend.get("numpy")}
    rows = []
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'n':>6s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for n in args.n:
        for name, fn in _cases(n, args.features, args.order, rng).items():
            t = {k: min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat))
                 for k, m in impls.items()}
            rows.append({"kernel": name, "n": n, **t})
            print(f"{name:32s} {n:6d} {1e3 * t['cython']:10.2f} {1e3 * t['numpy']:10.2f} "
                  f"{t['numpy'] / t['cython']:8.2f}")
        a = _end_to_end(n, args.features, args.order, args.repeat, pure=False)
        b = _end_to_end(n, args.features, args.order, args.repeat, pure=True)
        rows.append({"kernel": "map_objective", "n": n, "cython": a["seconds"],
                     "numpy": b["seconds"]})
        print(f"{'map_objective (end to end)':32s} {n:6d} {1e3 * a['seconds']:10.2f} "
              f"{1e3 * b['seconds']:10.2f} {b['seconds'] / a['seconds']:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
