"""Show what the shrinkage unit does to one head on synthetic tokens.

Prints the per-channel thresholds, the fraction of factorized-attention
entries zeroed by the soft threshold, and the share of the output norm
carried by the value shortcut.
"""

import argparse

import numpy as np

from shrinkattn.attention import compute_thresholds, factor_att, init_attention_params, init_shrinkage_params, project_qkv
from shrinkattn.tensor import Tensor, soft_threshold


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--c", type=int, default=32)
    ap.add_argument("--reduction", type=int, default=4)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    p = init_attention_params(rng, args.c, heads=1)
    s = init_shrinkage_params(rng, args.c, args.reduction)
    x = Tensor(rng.standard_normal((args.n, args.c)))
    (q,), (k,), (v,) = project_qkv(x, p)
    fa, ctx = factor_att(q, k, v)
    th = compute_thresholds(ctx, s)
    shrunk = soft_threshold(fa, th.tau).value

    np.set_printoptions(precision=4, suppress=True, linewidth=100)
    print("alpha:", th.alpha.value)
    print("tau:  ", th.tau.value)
    print(f"zeroed entries: {np.mean(shrunk == 0):.1%}")
    out = shrunk + v.value
    print(f"shortcut share of output norm: {np.linalg.norm(v.value) / np.linalg.norm(out):.3f}")


if __name__ == "__main__":
    main()
