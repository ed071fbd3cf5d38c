"""Command-line interface.

Subcommands: ``fit``, ``gof``, ``power``, ``dfree``, ``ingest-check``.
Exit status 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..estimation import RankError
from ..measure import NumericError
from ..models import ModelError
from ..statistics import KernelError
from .analysis import analyze_spectrum, fit_model
from .config import ConfigError, RunConfig
from .power import EXAMPLES, example_config, power_study
from .report import format_table, write_csv
from .spectrum import IngestError, ingest_spectrum

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--reps", type=int, help="Monte Carlo or bootstrap replicates")
    p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
    p.add_argument("--out", help="directory for the CSV report")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sparsegof", description="Goodness-of-fit for sparse binned Poisson data")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a mean model to a spectrum")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--estimator", default="mle", help="mle | ls | gamma:<kernel>")
    p.add_argument("--data", required=True)

    p = sub.add_parser("gof", help="goodness-of-fit test on a spectrum")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--kernel", default="pearson")
    p.add_argument("--stat", default="ks", choices=["ks", "single", "gaussian"])
    p.add_argument("--bootstrap", default="classical", choices=["classical", "projected"])
    p.add_argument("--estimator", default="mle")
    p.add_argument("--data", required=True)

    p = sub.add_parser("power", help="Monte Carlo power study")
    _common(p)
    p.add_argument("--example", choices=sorted(EXAMPLES), help="preset model and direction")
    p.add_argument("--model")
    p.add_argument("--kernel")
    p.add_argument("--estimator", help="known | mle | ls | gamma:<kernel>")
    p.add_argument("--test", choices=["single", "ks", "ks_star"])
    p.add_argument("--direction")
    p.add_argument("--K", type=int)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("dfree", help="distribution-free KS* test on a spectrum")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--p", default="auto", help="number of blocks: auto (= parameters) or an integer")
    p.add_argument("--ks-star", action="store_true", default=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("ingest-check", help="validate a spectrum file")
    _common(p)
    p.add_argument("--data", required=True)
    return ap


def _emit(rows: list[dict], name: str, out: str | None) -> None:
    print(format_table(rows))
    if out:
        path = write_csv(rows, Path(out) / f"{name}.csv")
        print(f"\nwrote {path}")


def _cfg_value(args, cfg_dict, key, default):
    val = getattr(args, key, None)
    if val is not None:
        return val
    return cfg_dict.get(key, default)


def _load_cfg(args) -> dict:
    if not args.config:
        return {}
    import json

    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    flat = {}
    for k, v in data.items():
        if isinstance(v, dict) and k in ("models", "statistics", "estimation", "harness", "alternative", "run"):
            flat.update(v)
        else:
            flat[k] = v
    return flat


def cmd_fit(args) -> int:
    grid, counts = ingest_spectrum(args.data)
    model_hat, fit = fit_model(args.model, grid, counts, args.estimator)
    row = {"model": args.model, "estimator": args.estimator, "K": grid.K}
    row.update({f"theta{i}": float(v) for i, v in enumerate(fit.theta_hat)})
    row.update(iterations=fit.iterations, converged=fit.converged, residual=fit.residual)
    _emit([row], "fit", args.out)
    return EXIT_OK


def cmd_gof(args) -> int:
    cfg = _load_cfg(args)
    grid, counts = ingest_spectrum(args.data)
    rep = analyze_spectrum(
        grid, counts, args.model, args.kernel, args.stat, args.estimator, args.bootstrap,
        int(_cfg_value(args, cfg, "reps", cfg.get("replicates", 10_000))),
        int(_cfg_value(args, cfg, "seed", 0)), int(_cfg_value(args, cfg, "workers", 1)),
    )
    _emit([rep.row()], "gof", args.out)
    return EXIT_OK


def cmd_power(args) -> int:
    overrides = dict(model=args.model, kernel=args.kernel, estimator=args.estimator, test=args.test,
                     direction=args.direction, K=args.K, alpha=args.alpha, replicates=args.reps,
                     seed=args.seed, workers=args.workers)
    if args.example:
        base = {}
        if args.config:
            base = RunConfig.from_file(args.config).to_dict()
            for k in ("model", "domain", "theta", "direction", "direction_params"):
                base.pop(k, None)
        base.update({k: v for k, v in overrides.items() if v is not None})
        cfg = example_config(args.example, **base)
    elif args.config:
        cfg = RunConfig.from_file(args.config).override(**overrides)
    else:
        cfg = RunConfig(**{k: v for k, v in overrides.items() if v is not None})
    rep = power_study(cfg)
    _emit([rep.row()], "power", args.out)
    return EXIT_OK


def cmd_dfree(args) -> int:
    grid, counts = ingest_spectrum(args.data)
    from ..dfree import dfree_test, limit_pvalue
    from ..models import parse_model

    model = parse_model(args.model, grid.low, grid.high)
    res = dfree_test(counts.counts, model, grid)
    p_blocks = res.p
    if args.p != "auto":
        try:
            p_blocks = int(args.p)
        except ValueError:
            raise ConfigError("--p must be 'auto' or an integer") from None
        if p_blocks != model.p:
            raise ConfigError(f"--p must equal the number of fitted parameters ({model.p})")
    row = {"model": args.model, "K": grid.K, "p": p_blocks}
    row.update({f"theta{i}": float(v) for i, v in enumerate(res.theta_hat)})
    row.update(ks_star=res.statistic, pvalue=limit_pvalue(res.statistic, p_blocks, grid.K))
    _emit([row], "dfree", args.out)
    return EXIT_OK


def cmd_ingest(args) -> int:
    grid, counts = ingest_spectrum(args.data)
    row = {"file": str(args.data), "K": grid.K, "low": grid.low, "high": grid.high, "width": grid.delta,
           "total": counts.total, "mean_count": float(np.mean(counts.counts)),
           "empty_bins": int(np.sum(counts.counts == 0))}
    _emit([row], "ingest", args.out)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "gof": cmd_gof, "power": cmd_power, "dfree": cmd_dfree, "ingest-check": cmd_ingest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, IngestError, ModelError, KernelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, RankError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
