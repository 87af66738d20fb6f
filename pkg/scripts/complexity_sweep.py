"""Sweep N for both attention mechanisms and print measured vs analytic scaling.

    python3 scripts/complexity_sweep.py --n 512,1024,2048,4096 --c 64 --out sweep.csv
"""

import argparse
from pathlib import Path

from shrinkattn.bench import records_to_csv, time_interleaved


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", default="512,1024,2048,4096")
    ap.add_argument("--c", type=int, default=64)
    ap.add_argument("--heads", type=int, default=1)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--warmup", type=int, default=3)
    ap.add_argument("--out", help="optional CSV path")
    args = ap.parse_args()

    ns = [int(v) for v in args.n.split(",")]
    records = []
    for mech in ("dot_product", "factorized"):
        records += time_interleaved(mech, ns, args.c, args.heads, args.trials, args.warmup)

    print(f"{'mechanism':<12} {'N':>6} {'ms':>10} {'GFLOP/s':>8} {'t/t_prev':>9} {'flop ratio':>10}")
    prev = None
    for r in records:
        step = prev if prev is not None and prev.mechanism == r.mechanism else None
        t_ratio = f"{r.mean_ns / step.mean_ns:9.2f}" if step else " " * 9
        f_ratio = f"{r.flops / step.flops:10.2f}" if step else " " * 10
        print(f"{r.mechanism:<12} {r.N:>6} {r.mean_ns / 1e6:10.3f} {r.flops / r.mean_ns:8.2f} {t_ratio} {f_ratio}")
        prev = r
    if args.out:
        Path(args.out).write_text(records_to_csv(records))


if __name__ == "__main__":
    main()
