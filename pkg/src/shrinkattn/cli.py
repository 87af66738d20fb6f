"""Command-line entry point: ``verify``, ``bench``, ``eval`` and ``forward``.

Exit codes: 0 success, 1 invariant or evaluation failure, 2 usage or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, DimensionError, DomainError, ParseError, UndefinedAPError

log = logging.getLogger("shrinkattn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _pair(text: str) -> tuple[int, int]:
    values = _int_list(text)
    if len(values) != 2:
        raise argparse.ArgumentTypeError(f"expected H,W, got {text!r}")
    return values[0], values[1]


def _triple(text: str) -> tuple[int, int, int]:
    values = _int_list(text)
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected c3,c4,c5, got {text!r}")
    return tuple(values)


def cmd_verify(args) -> int:
    from .verify import report_json, run_verify

    report = run_verify(args.seed, faults=args.inject_fault or (), timing=not args.no_timing)
    text = report_json(report)
    if args.out:
        Path(args.out).write_text(text)
    for entry in report["invariants"]:
        print(f"{entry['status']:>7}  {entry['name']}")
    failed = [e["name"] for e in report["invariants"] if e["status"] == "fail"]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_FAIL
    print("all invariants hold")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import records_to_csv, run_bench

    mechs = [m.strip() for m in args.mech.split(",") if m.strip()]
    records = run_bench(mechs, args.n, args.c, args.heads, args.trials, args.warmup, args.seed)
    text = records_to_csv(records)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import error_decomposition, load_detections, load_ground_truth, sort_detections

    dets = sort_detections(load_detections(args.dets))
    gts = load_ground_truth(args.gts)
    report = error_decomposition(dets, gts)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"AP50   {report.ap50:.6f}")
    print(f"E_cls  {report.e_cls:.4f}")
    print(f"E_loc  {report.e_loc:.4f}")
    print(f"E_miss {report.e_miss:.4f}")
    return EXIT_OK


def cmd_forward(args) -> int:
    from .encoder import EncoderConfig, FeatureMap, encoder_forward, init_encoder_params, synth_features
    from .tensor import load_tensor, save_tensor

    if args.synth:
        features = synth_features(args.seed, args.base, args.channels)
    else:
        features = []
        for level, path in zip((3, 4, 5), args.features):
            try:
                t = load_tensor(path)
            except (OSError, ValueError) as e:
                raise ParseError(f"{path}: {e}") from e
            features.append(FeatureMap(level, t))
    channels = [f.tensor.shape[2] for f in features]
    config = EncoderConfig(
        embed_dim=args.embed_dim, heads=args.heads, reduction=args.reduction, depth=args.depth
    )
    params = init_encoder_params(args.params_seed, channels, config)
    outputs = encoder_forward(features, params)
    for level, out in zip((3, 4, 5), outputs):
        path = f"{args.out_prefix}_l{level}.json"
        save_tensor(out.tokens, path)
        print(f"level {level}: {out.n} tokens x {out.channels} -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shrinkattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the invariant sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--no-timing", action="store_true", help="skip the wall-clock scaling check")
    p.add_argument("--inject-fault", action="append", metavar="NAME", help="deliberately break a check (negative-tau)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time dot-product vs factorized attention")
    p.add_argument("--mech", default="dot_product,factorized")
    p.add_argument("--n", type=_int_list, default=[1024, 2048, 4096])
    p.add_argument("--c", type=_int_list, default=[64])
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="AP50 and error breakdown for a detections file")
    p.add_argument("--dets", required=True)
    p.add_argument("--gts", required=True)
    p.add_argument("--out", help="JSON report path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forward", help="run the encoder and write per-level tokens")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--features", nargs=3, metavar=("F3", "F4", "F5"))
    src.add_argument("--synth", action="store_true")
    p.add_argument("--seed", type=int, default=0, help="synthetic feature seed")
    p.add_argument("--base", type=_pair, default=(8, 8), help="level-3 grid H,W")
    p.add_argument("--channels", type=_triple, default=(128, 256, 512))
    p.add_argument("--params-seed", type=int, default=0)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--reduction", type=int, default=4)
    p.add_argument("--depth", type=int, default=1)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_forward)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UndefinedAPError, DimensionError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
