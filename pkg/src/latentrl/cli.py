"""Command-line entry point: ``latentrl <subcommand> ...``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from .core import RunConfig, load_config
from .errors import LatentRLError

log = logging.getLogger("latentrl")


def default_out_dir(kind: str) -> Path:
    root = Path(os.environ.get("DLR_RUN_DIR") or "runs")
    return root / f"{kind}-{time.strftime('%Y%m%d-%H%M%S')}"


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_overrides(p: argparse.ArgumentParser):
    """One optional flag per RunConfig field; only flags actually given override the file."""
    g = p.add_argument_group("config overrides")
    for f in dataclasses.fields(RunConfig):
        if f.name in ("seed", "decode_mode"):
            continue
        typ = {"int": int, "float": float}.get(str(f.type), str)
        g.add_argument(_flag(f.name), dest=f"cfg_{f.name}", type=typ, default=None, metavar=str(f.type).upper(),
                       help=f"override {f.name} (default {f.default})")


def _overrides(args) -> dict:
    out = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "decode_mode", None) is not None:
        out["decode_mode"] = args.decode_mode
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentrl",
        description="Latent-space group-relative policy optimization with a frozen decoder.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("train", help="train a policy from a config file")
    p.add_argument("--config", required=True, help="JSON or YAML config file")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="run directory (default $DLR_RUN_DIR or ./runs, plus a timestamp)")
    p.add_argument("--decode-mode", choices=("full", "selective"))
    p.add_argument("--trainable-decoder", action="store_true",
                   help="update the decoder readout too (ablation only)")
    _add_config_overrides(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint at the distribution mean")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True, help="number of evaluation instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="also write report.json here")

    p = sub.add_parser("variance-lab", help="score-function gradient variance versus horizon")
    p.add_argument("--horizons", default="4,8,16,32", help="comma-separated horizons L")
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write variance.csv here")

    p = sub.add_parser("cost-report", help="main-model compute of full versus selective decoding")
    p.add_argument("--G", type=int, required=True)
    p.add_argument("--K", type=float, required=True, help="decode budget (fractional allowed)")
    p.add_argument("--ca", type=float, default=1.0, help="cost of one assistant forward")
    p.add_argument("--cm", type=float, default=1.0, help="cost of one main-model forward")
    p.add_argument("--out", help="write cost.csv here")

    p = sub.add_parser("ablate", help="paired base/ablated trainings over matched seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", required=True, choices=("no_contrastive", "trainable_decoder"))
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--seed", type=int, help="first seed")
    p.add_argument("--workers", type=int, default=1, help="parallel arms (default 1)")
    p.add_argument("--out", help="write ablation.csv here")
    _add_config_overrides(p)
    return parser


def _cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args.config, _overrides(args))
    out = Path(args.out) if args.out else default_out_dir("train")
    art = train(cfg, out, trainable_decoder=args.trainable_decoder)
    print(f"run directory: {out}")
    if art.metrics:
        last = art.metrics[-1]
        print(f"iterations: {last['iter']}  mean_reward: {last['mean_reward']:.4f}")
    if art.report:
        print(f"pass@1: {art.report['pass_at_1']:.4f}  format_valid: {art.report['format_valid_rate']:.4f}")
    print(f"decoder checksum: {art.checksum_end} ({'unchanged' if art.checksum_start == art.checksum_end else 'CHANGED'})")
    return 0


def _cmd_eval(args) -> int:
    from .trainer import evaluate

    report = evaluate(args.ckpt, None, args.n, args.seed)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.json").write_text(text + "\n", encoding="utf-8")
    return 0


def _parse_horizons(text: str) -> list[int]:
    try:
        hs = [int(h) for h in text.split(",") if h.strip()]
    except ValueError:
        hs = []
    if not hs:
        raise argparse.ArgumentTypeError(f"bad --horizons {text!r}")
    return hs


def _cmd_variance(args) -> int:
    from .lab import VARIANCE_KINDS, estimate_gradient_variance, write_csv

    horizons = _parse_horizons(args.horizons)
    reports = [estimate_gradient_variance(k, L, args.samples, args.seed)
               for k in VARIANCE_KINDS for L in horizons]
    print(f"{'kind':<14}{'L':>5}{'var_mean':>12}{'var_max':>12}")
    for r in reports:
        print(f"{r.kind:<14}{r.L:>5}{r.var_mean:>12.4f}{r.var_max:>12.4f}")
    for kind in VARIANCE_KINDS:
        vs = [r.var_mean for r in reports if r.kind == kind]
        print(f"{kind}: max/min ratio {max(vs) / min(vs):.3f}")
    if args.out:
        print(f"wrote {write_csv(reports, Path(args.out) / 'variance.csv')}")
    return 0


def _cmd_cost(args) -> int:
    from .lab import cost_report, write_csv

    r = cost_report(args.G, args.K, args.ca, args.cm)
    K = f"{r.K:g}"
    print(f"G={r.G} K={K} c_a={r.c_a:g} c_m={r.c_m:g}")
    print(f"cost_full={r.cost_full:g} cost_dlr={r.cost_dlr:g}")
    print(f"main_forward_ratio={r.main_forward_ratio:.4f}")
    print(f"reduction={r.reduction_factor:.2f}x")
    if args.out:
        print(f"wrote {write_csv([r], Path(args.out) / 'cost.csv')}")
    return 0


def _cmd_ablate(args) -> int:
    from .lab import run_ablation, write_csv

    cfg = load_config(args.config, _overrides(args))
    table = run_ablation(cfg, args.kind, args.seeds, workers=args.workers)
    print(f"{'arm':<9}{'seed':>6}{'pass@1':>9}{'cosine':>9}  checksum")
    for r in table.rows:
        if r.error:
            print(f"{r.arm:<9}{r.seed:>6}  error: {r.error}")
            continue
        print(f"{r.arm:<9}{r.seed:>6}{r.pass_at_1:>9.3f}{r.mean_cosine:>9.3f}  "
              f"{'constant' if r.checksum_constant else 'changed'}")
    summary = table.summary()
    if summary:
        for arm, vals in summary.items():
            print(f"median {arm}: pass@1 {vals['pass_at_1']}  cosine {vals['mean_cosine']}")
    out = Path(args.out) if args.out else default_out_dir("ablate")
    print(f"wrote {write_csv(table.rows, out / 'ablation.csv')}")
    return 0


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "variance-lab": _cmd_variance,
            "cost-report": _cmd_cost, "ablate": _cmd_ablate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except argparse.ArgumentTypeError as exc:
        print(f"latentrl: error: {exc}", file=sys.stderr)
        return 2
    except LatentRLError as exc:
        print(f"latentrl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"latentrl: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
