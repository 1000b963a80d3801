"""Time the numba kernels against their numpy twins and check they agree.

    python3 benchmarks/bench_kernels.py [--repeat N]

A full training step is timed under whichever backend AODBENCH_NUMBA selects;
run once with AODBENCH_NUMBA=0 to compare end-to-end.
"""
import argparse
import time

import numpy as np

from aodbench.nn import default_architecture, kernels, mse_loss


def best_of(fn, repeat):
    fn()  # warm-up (triggers compilation on the numba side)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    """(kernel name, arguments, must match bit for bit)."""
    x = rng.standard_normal((32, 16, 30, 30))
    xpad = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = kernels.im2col_numpy(xpad, 3, 1)
    pooled, arg = kernels.maxpool_forward_numpy(x, 2, 2)
    g, b = rng.standard_normal(16), rng.standard_normal(16)
    _, xhat, _, _, inv = kernels.bn_forward_numpy(x, g, b, 1e-5)
    return [
        ("im2col", (xpad, 3, 1), True),
        ("col2im", (cols, xpad.shape, 3, 1), True),
        ("maxpool_forward", (x, 2, 2), True),
        ("maxpool_backward", (rng.standard_normal(pooled.shape), arg, x.shape, 2, 2), True),
        ("bn_forward", (x, g, b, 1e-5), False),
        ("bn_backward", (x, xhat, g, inv), False),
    ]


def _same(a, b, exact):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    if exact:
        return all(np.array_equal(u, v) for u, v in zip(a, b))
    return all(np.allclose(u, v, rtol=1e-10, atol=1e-12) for u, v in zip(a, b))


def training_step_time(repeat):
    rng = np.random.default_rng(0)
    model = default_architecture(0)
    x = rng.random((32, 1, 30, 30))
    y = rng.random((32, 1))

    def step():
        pred, cache = model.forward(x, train=True, rng=rng)
        model.backward(cache, mse_loss(pred, y)[1])
    return best_of(step, repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(1)
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, call_args, exact in cases(rng):
        f_np, f_nb = getattr(kernels, name + "_numpy"), getattr(kernels, name + "_numba")
        agree = _same(f_np(*call_args), f_nb(*call_args), exact)
        t_np = best_of(lambda: f_np(*call_args), args.repeat)
        t_nb = best_of(lambda: f_nb(*call_args), args.repeat)
        print(f"{name:<18}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x  "
              f"{'exact' if exact and agree else 'close' if agree else 'MISMATCH'}")
        if not agree:
            raise SystemExit(f"{name}: numba and numpy paths disagree")
    print(f"training step (batch 32, backend={kernels.BACKEND}): "
          f"{training_step_time(args.repeat) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
