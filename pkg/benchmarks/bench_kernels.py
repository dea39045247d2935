"""Compare the compiled and pure-Python kernel backends.

Each backend runs in its own interpreter (the backend is chosen at import,
``PRIVAGG_PURE=1`` forces pure Python). Prints one line per workload with
the time per call for both backends and the speedup.

    python benchmarks/bench_kernels.py [--quick]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
from privagg import kernels, snip
from privagg.afe import CountMin, FreqCount, LinReg, Sum
from privagg.field import F31, GOLDILOCKS
from privagg.sharing import Rng, prg_expand

quick = sys.argv[1] == "1"
scale = 0.2 if quick else 1.0
F = GOLDILOCKS
p = F.modulus
rng = Rng(0)
a = rng.elements(F, 4096)
b = rng.elements(F, 4096)
short = rng.elements(F, 64)
raw = rng.random_bytes(8 * 5000)
results = {}


def bench(name, fn, number):
    number = max(1, int(number * scale))
    results[name] = timeit.timeit(fn, number=number) / number


bench("dot L=4096", lambda: kernels.dot(a, b, p), 300)
bench("vec_add L=4096", lambda: kernels.vec_add(a, b, p), 300)
bench("poly_mul 64x64", lambda: kernels.poly_mul(short, short, p), 300)
bench("poly_eval deg 4095", lambda: kernels.poly_eval(a, 12345, p), 300)
bench("bytes_to_field 4096", lambda: kernels.bytes_to_field(raw, 8, p, F.sample_bound, 4096), 300)
bench("prg_expand L=4096", lambda: prg_expand(F, bytes(16), 4096), 200)

for kind, x in ((Sum(32), 123456), (FreqCount(256), 7), (LinReg(2, 8), (3, 4, 5)),
                (CountMin(0.1, 0.05), 42)):
    c = kind.circuit
    enc = kind.encode(F, x, rng)
    cfg = snip.VerifierConfig.random(F, c.M, rng, Q=None)
    xs, ps = snip.prove(c, F, enc, 2, rng)
    coeffs = snip.random_batch_coeffs(F, c, rng)
    bench(f"prove {kind.config_string()}", lambda: snip.prove(c, F, enc, 2, rng), 100)
    bench(f"verify {kind.config_string()}", lambda: snip.verify(cfg, c, xs, ps, coeffs), 100)

print(json.dumps({"backend": kernels.BACKEND, "results": results}))
"""


def run(pure: bool, quick: bool) -> dict:
    env = dict(os.environ)
    if pure:
        env["PRIVAGG_PURE"] = "1"
    else:
        env.pop("PRIVAGG_PURE", None)
    out = subprocess.run([sys.executable, "-c", WORKER, "1" if quick else "0"], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="fewer repetitions")
    args = ap.parse_args(argv)
    fast = run(False, args.quick)
    slow = run(True, args.quick)
    if fast["backend"] != "cython":
        print("compiled kernels are not built; both columns are pure Python", file=sys.stderr)
    print(f"{'workload':<44}{fast['backend'] + ' us':>14}{'python us':>14}{'speedup':>10}")
    for name, t in fast["results"].items():
        u = slow["results"][name]
        print(f"{name:<44}{t * 1e6:>14.1f}{u * 1e6:>14.1f}{u / t:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
