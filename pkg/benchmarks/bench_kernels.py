"""Time the hot kernels under the numba and the pure-numpy backend.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own interpreter because the choice is made at
import time from CRLC_DISABLE_NUMBA.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def cases():
    from crlc import kernels

    rng = np.random.default_rng(0)
    B, C, M = 256, 10, 256
    A = rng.dirichlet(np.ones(C), size=B)
    P = np.broadcast_to(rng.dirichlet(np.ones(C), size=M)[None], (B, M, C)).copy()
    G = rng.normal(size=(B, M))
    S = rng.normal(size=(B, M))
    pos = np.zeros(B, dtype=np.int64)
    a = rng.integers(0, C, 20_000)
    b = rng.integers(0, C, 20_000)
    F = rng.normal(size=(2000, 128))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    out = {}
    for name, code in (("LogDot", 0), ("NegJS", 3)):
        out[f"critic_scores[{name}]"] = lambda code=code: kernels.critic_scores(A, P, code)
        out[f"critic_backward[{name}]"] = lambda code=code: kernels.critic_backward(A, P, G, code)
    out["contrast_rows"] = lambda: kernels.contrast_rows(S, pos)
    out["contingency"] = lambda: kernels.contingency(a, b, C, C)
    out["topk_cosine[K=50]"] = lambda: kernels.topk_cosine(F, 50)
    return kernels.BACKEND, out


def worker(repeat):
    backend, fns = cases()
    res = {}
    for name, fn in fns.items():
        fn()  # warm-up, includes JIT compilation
        res[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(json.dumps({"backend": backend, "times": res}))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return

    results = {}
    for disable in ("0", "1"):
        env = {**os.environ, "CRLC_DISABLE_NUMBA": disable}
        proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        got = json.loads(proc.stdout.strip().splitlines()[-1])
        results[got["backend"]] = got["times"]
    if "numba" not in results:
        print("numba unavailable; numpy timings only")
    names = list(results["numpy"])
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for n in names:
        t_np = results["numpy"][n] * 1e3
        t_nb = results.get("numba", {}).get(n)
        if t_nb is None:
            print(f"{n:28s} {t_np:10.3f} {'-':>10s} {'-':>8s}")
        else:
            print(f"{n:28s} {t_np:10.3f} {t_nb * 1e3:10.3f} {t_np / (t_nb * 1e3):7.2f}x")


if __name__ == "__main__":
    main()
