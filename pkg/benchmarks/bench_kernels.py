"""Compare the jitted kernels against the pure-numpy fallbacks.

Shapes mirror the training hot path of the default model (1664 tokens,
dim 64, 4 heads): attention softmax rows are (tokens * heads, tokens),
layernorm rows are (tokens, dim), rope rows are (tokens * heads,
head_dim), and the Adam update covers every parameter once.

Run:  python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from mcflow.kernels import available_backends, get_backend


def timeit(fn, args, repeats):
    fn(*args)  # warm (jit compile, page in)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5, help="timing repeats (default 5)")
    ap.add_argument("--tokens", type=int, default=1664, help="token count (default 1664)")
    args = ap.parse_args()

    n, dim, heads = args.tokens, 64, 4
    hd = dim // heads
    rng = np.random.default_rng(0)
    scores = rng.standard_normal((n * heads, n))
    probs_g = rng.standard_normal((n * heads, n))
    rows = rng.standard_normal((n, dim))
    qk = rng.standard_normal((n * heads, hd))
    phase = rng.standard_normal((n * heads, hd // 2))
    cos, sin = np.cos(phase), np.sin(phase)
    n_params = 170_000
    p, g = rng.standard_normal(n_params), rng.standard_normal(n_params)
    m, v = np.zeros(n_params), np.zeros(n_params)

    cases = [
        ("softmax_rows", (scores,)),
        ("softmax_rows_grad", (None, probs_g)),  # out filled per backend below
        ("layernorm_rows", (rows, 1e-5)),
        ("layernorm_rows_grad", (None, None, probs_g[: n, :dim])),
        ("rope_rotate", (qk, cos, sin)),
        ("adam_update", (p.copy(), g, m.copy(), v.copy(), 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)),
    ]

    names = available_backends()
    results = {}
    for be_name in names:
        be = get_backend(be_name)
        out = be["softmax_rows"](scores)
        xhat, rstd = be["layernorm_rows"](rows, 1e-5)
        filled = {
            "softmax_rows_grad": (out, probs_g),
            "layernorm_rows_grad": (xhat, rstd, rng.standard_normal(rows.shape)),
        }
        for kernel, a in cases:
            a = filled.get(kernel, a)
            results[(kernel, be_name)] = timeit(be[kernel], a, args.repeats)

    width = max(len(k) for k, _ in cases)
    header = f"{'kernel':<{width}}" + "".join(f"  {b:>10}" for b in names)
    if len(names) > 1:
        header += f"  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for kernel, _ in cases:
        line = f"{kernel:<{width}}"
        times = [results[(kernel, b)] for b in names]
        for t in times:
            line += f"  {t * 1e3:>8.2f}ms"
        if len(times) > 1:
            line += f"  {times[1] / times[0]:>7.2f}x"
        print(line)


if __name__ == "__main__":
    main()
