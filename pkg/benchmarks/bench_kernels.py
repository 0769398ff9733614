"""Compiled vs pure-Python Merkle kernels on the same inputs.

    python3 benchmarks/bench_kernels.py --n 1000,4000,16000 --repeats 5
"""
import argparse
import sys

from coin_audit import _kernels
from coin_audit.harness.bench import bench_merkle


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="1000,4000,16000")
    ap.add_argument("--d", type=int, default=384)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    counts = [int(x) for x in args.n.split(",")]

    if _kernels.compiled_kernels is None:
        print("compiled kernels not built; only the Python fallback is timed")
        backends = ["python"]
    else:
        backends = ["python", "cython"]

    results = {b: bench_merkle(counts, [args.d], args.repeats, backend=b) for b in backends}
    print(f"{'n':>8} " + " ".join(f"{b + ' (s)':>14}" for b in backends) + "   speedup")
    for i, n in enumerate(counts):
        times = [results[b][i]["median_s"] for b in backends]
        roots = {results[b][i]["root"] for b in backends}
        if len(roots) != 1:
            sys.exit(f"backends disagree on the root at n={n}")
        speed = f"{times[0] / times[-1]:8.2f}x" if len(times) > 1 else ""
        print(f"{n:>8} " + " ".join(f"{t:>14.4f}" for t in times) + f"   {speed}")


if __name__ == "__main__":
    main()
