"""Command line entry point: ``causalhist run|sweep|validate``.

Exit codes: 0 ok, 2 config invalid, 3 resource cap, 4 numerical check failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys

from causalhist import config as cfgmod
from causalhist.errors import NumericalCheckError, ResourceLimitError, ValidationError
from causalhist.runner import build_space, run, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("causalhist")


def parse_values(text: str) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(int(item))
            continue
        except ValueError:
            pass
        try:
            out.append(float(item))
        except ValueError:
            out.append({"true": True, "false": False}.get(item.lower(), item))
    if not out:
        raise argparse.ArgumentTypeError("no values given")
    return out


def _load(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_value("seed", args.seed)
    if getattr(args, "max_records", None) is not None:
        cfg = cfg.with_value("caps.max_records", args.max_records)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalhist", description="Decoherent-histories experiment runner")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--out-dir", default=None, help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--max-records", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)

    common(sub.add_parser("run", help="run one experiment"))
    p_sweep = sub.add_parser("sweep", help="run one experiment per parameter value")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="dotted config path, e.g. model.n_env")
    p_sweep.add_argument("--values", required=True, type=parse_values, help="comma separated, e.g. 2,4,8")
    p_sweep.add_argument("--repeats", type=int, default=1, help="seeds per value (seed, seed+1, ...)")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    return parser


def _summarize(report) -> str:
    c = report.checks
    if "probe" in c:
        p = c["probe"]
        return f"probe: feasible={p['feasible']} required |<a~|b~>|={p['required_overlap']:.6g}"
    lines = [f"{c['records']} histories (complete={c['complete']})"]
    if c.get("consistency"):
        lines.append(
            f"consistent={c['consistency']['consistent']} max|D_ab|={c['consistency']['max_offdiag']:.3e}"
        )
    lines.append(f"branching={c['branching']['branching']}")
    cl = c["classification"]
    lines.append(
        f"{cl['measure']} <= {cl['threshold']:g}: causal={cl['causal']} noncausal={cl['noncausal']} undefined={cl['undefined']}"
    )
    pr = c["pruning"]
    if pr["prune_below"] > 0:
        lines.append(f"pruned {pr['pruned_count']} subtrees, weight {pr['pruned_weight']:.3e} <= bound {pr['pruned_bound']:.3e}")
    if report.failures:
        lines.append(f"FAILED checks: {', '.join(report.failures)}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _load(args)
        if args.command == "validate":
            if cfg.model_type != "probe":
                build_space(cfg)
            print(f"ok: {args.config} (schema {cfg.data['schema_version']}, hash {cfg.hash()[:12]})")
            return EXIT_OK
        if args.command == "run":
            report = run(cfg, args.out_dir, threads=args.threads)
            print(_summarize(report))
            return EXIT_NUMERICAL if report.failures else EXIT_OK
        reports, aggregate = sweep(
            cfg, args.param, args.values, args.out_dir, threads=args.threads, repeats=args.repeats
        )
        for row in aggregate:
            med = row["median_max_normalized_offdiag"]
            print(f"{args.param}={row['value']}: runs={row['runs']} median normalized offdiag="
                  f"{med:.6g}" if not math.isnan(med) else f"{args.param}={row['value']}: runs={row['runs']}")
        return EXIT_NUMERICAL if any(r.failures for r in reports) else EXIT_OK
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as exc:
        print(f"resource cap '{exc.cap}' exceeded: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalCheckError as exc:
        print(f"numerical check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
