"""Compare the compiled kernels with the numpy fallback on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N] [--G 16] [--n 128]

Also times one full training iteration with each backend selected.
"""
import argparse
import timeit

import numpy as np

from latentrl.kernels import _fallback, compiled_available


def inputs(G, n, seed=0):
    rng = np.random.default_rng(seed)
    mu, ls = rng.standard_normal(n), 0.3 * rng.standard_normal(n)
    z = mu + np.exp(ls) * rng.standard_normal((G, n))
    adv = rng.standard_normal(G)
    old = _fallback.diag_gaussian_logp(z, mu, ls) + 0.1 * rng.standard_normal(G)
    V = rng.standard_normal((G, 32))
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return dict(z=z, mu=mu, ls=ls, w=adv, adv=adv, old=old, new=old + 0.05,
                mu_q=mu + 0.1, ls_q=ls - 0.1, V=V)


def cases(mod, x):
    return {
        "logp": lambda: mod.diag_gaussian_logp(x["z"], x["mu"], x["ls"]),
        "logp_grad": lambda: mod.diag_gaussian_logp_grad(x["z"], x["mu"], x["ls"], x["w"]),
        "clipped_surrogate": lambda: mod.clipped_surrogate(x["new"], x["old"], x["adv"], 0.2),
        "kl": lambda: mod.diag_gaussian_kl(x["mu"], x["ls"], x["mu_q"], x["ls_q"]),
        "contrastive": lambda: mod.contrastive_loss(x["V"]),
    }


def best_us(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--G", type=int, default=16)
    ap.add_argument("--n", type=int, default=128, help="T * d")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=2000)
    args = ap.parse_args()
    if not compiled_available():
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")
    from latentrl.kernels import _ckernels

    x = inputs(args.G, args.n)
    py, cy = cases(_fallback, x), cases(_ckernels, x)
    print(f"G={args.G} n={args.n}  (best of {args.repeat} x {args.number} calls, microseconds per call)")
    print(f"{'kernel':<20}{'numpy':>10}{'cython':>10}{'speedup':>9}")
    for name in py:
        a, b = best_us(py[name], args.repeat, args.number), best_us(cy[name], args.repeat, args.number)
        print(f"{name:<20}{a:>10.2f}{b:>10.2f}{a / b:>8.1f}x")

    # End-to-end: one training iteration at desk defaults with each backend.
    import latentrl.kernels as K
    from latentrl.core import RunConfig
    from latentrl.trainer import train

    cfg = RunConfig(iterations=20)
    results = {}
    for label, mod in (("numpy", _fallback), ("cython", _ckernels)):
        for fn in ("diag_gaussian_logp", "diag_gaussian_logp_grad", "clipped_surrogate",
                   "diag_gaussian_kl", "contrastive_loss"):
            setattr(K, fn, getattr(mod, fn))
        results[label] = min(timeit.repeat(lambda: train(cfg), repeat=3, number=1)) / cfg.iterations * 1e3
    print(f"train iteration (ms): numpy {results['numpy']:.2f}  cython {results['cython']:.2f}  "
          f"speedup {results['numpy'] / results['cython']:.2f}x")


if __name__ == "__main__":
    main()
