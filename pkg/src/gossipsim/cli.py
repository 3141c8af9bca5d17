"""Command-line front end.

Subcommands:
  select-params  grid search for the sampling pair (s, b_hat)
  frac-sim       effective-fraction simulation sweep, CSV output
  run            full simulation runs driven by a JSON config
  agg-bench      robustness-coefficient harness over JSON instances

CSV files carry one leading '#' metadata line (tool version, resolved
config hash, seed), then a header row; comma separated, LF endings.
Writes are atomic (temp file + rename). The GOSSIPSIM_OUT environment
variable sets the default output directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .aggregation import ENUMERATION_CAP, AggregationInput, empirical_kappa, RULES
from .config import ConfigError, build_simulation, config_hash, resolve_config
from .numerics import RngStream
from .protocol import NumericalBlowupError, run_fixed_graph, run_rpel, RoundTrace
from .sampling import (
    HypergeometricParams,
    InfeasibleGridError,
    hypergeom_sample_array,
    select_hyperparameters,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_BLOWUP = 3


def _default_outdir() -> str:
    return os.environ.get("GOSSIPSIM_OUT", "gossipsim-out")


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _metadata_line(cfg_hash: str, seed) -> str:
    meta = {"tool": "gossipsim", "version": __version__, "config": cfg_hash, "seed": seed}
    return "# " + json.dumps(meta, sort_keys=True) + "\n"


def _format_float(x: float) -> str:
    return repr(float(x))


def _csv(meta: str, header, rows) -> str:
    lines = [meta, ",".join(header) + "\n"]
    for row in rows:
        lines.append(
            ",".join(
                _format_float(v) if isinstance(v, float) else str(v) for v in row
            )
            + "\n"
        )
    return "".join(lines)


def cmd_select_params(args) -> int:
    grid = [int(v) for v in args.grid.split(",") if v.strip()]
    rng = RngStream(args.seed)
    try:
        result = select_hyperparameters(
            args.n, args.b, args.T, grid, args.m, args.q, rng, method=args.method
        )
    except InfeasibleGridError as exc:
        print("infeasible grid:", file=sys.stderr)
        print("s,b_hat,kappa", file=sys.stderr)
        for s, bh, k in exc.table:
            print(f"{s},{bh},{_format_float(k)}", file=sys.stderr)
        return EXIT_INVALID
    print("s,b_hat,kappa")
    for s, bh, k in result.table:
        print(f"{s},{bh},{_format_float(k)}")
    print(f"selected: s={result.s} b_hat={result.b_hat} "
          f"fraction={_format_float(result.effective_fraction)}")
    return EXIT_OK


def cmd_frac_sim(args) -> int:
    n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
    s_list = [int(v) for v in args.s_list.split(",") if v.strip()]
    rng = RngStream(args.seed)
    rows = []
    for n in n_list:
        b = int(round(args.byz_frac * n))
        h = n - b
        for s in s_list:
            params = HypergeometricParams(n - 1, b, s)
            for sim in range(args.sims):
                gen = rng.substream("frac-sim", n, s, sim).generator()
                if b == 0:
                    b_hat = 0
                else:
                    b_hat = int(hypergeom_sample_array(params, h * args.T, gen).max())
                rows.append((n, b, s, sim, b_hat, b_hat / (s + 1)))
    meta_hash = config_hash(
        {
            "cmd": "frac-sim",
            "n_list": n_list,
            "byz_frac": args.byz_frac,
            "s_list": s_list,
            "T": args.T,
            "sims": args.sims,
        }
    )
    text = _csv(
        _metadata_line(meta_hash, args.seed),
        ("n", "b", "s", "sim", "b_hat", "fraction"),
        rows,
    )
    try:
        _atomic_write(args.out, text)
    except OSError as exc:
        print(f"cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _trace_csv(trace: RoundTrace, cfg_hash: str, seed: int) -> str:
    return _csv(_metadata_line(cfg_hash, seed), RoundTrace.COLUMNS, trace.rows())


def cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
        resolved = resolve_config(doc)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    seeds = [args.seed_override] if args.seed_override is not None else resolved["seeds"]
    outdir = args.out_dir or resolved["output"]["directory"] or _default_outdir()
    # hash identifies the experiment, not where its files land
    cfg_hash = config_hash({k: v for k, v in resolved.items() if k != "output"})
    os.makedirs(outdir, exist_ok=True)
    _atomic_write(
        os.path.join(outdir, "config.resolved.json"),
        json.dumps(resolved, indent=2, sort_keys=True) + "\n",
    )
    status = EXIT_OK
    for seed in seeds:
        try:
            sim = build_simulation(resolved, seed)
        except ValueError as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return EXIT_INVALID
        try:
            engine = run_rpel if sim.mode == "rpel" else run_fixed_graph
            trace, outputs = engine(sim)
        except NumericalBlowupError as exc:
            print(f"seed {seed}: {exc}", file=sys.stderr)
            status = EXIT_BLOWUP
            continue
        _atomic_write(
            os.path.join(outdir, f"trace_seed{seed}.csv"),
            _trace_csv(trace, cfg_hash, seed),
        )
        summary = trace.summary()
        summary["tool"] = "gossipsim"
        summary["version"] = __version__
        summary["config"] = cfg_hash
        summary["seed"] = seed
        init = summary["initial_grad_norm_sq"]
        summary["converged_10x"] = bool(
            init > 0 and summary["final_grad_norm_sq"] <= 0.1 * init
        )
        summary["output_iterates_grad_norm_sq"] = {
            str(i): float(np.dot(g, g))
            for i, g in (
                (i, sim.objective.global_gradient(v)) for i, v in sorted(outputs.items())
            )
        }
        _atomic_write(
            os.path.join(outdir, f"summary_seed{seed}.json"),
            json.dumps(summary, indent=2, sort_keys=True) + "\n",
        )
    return status


def cmd_agg_bench(args) -> int:
    rules = [r.strip() for r in args.rules.split(",") if r.strip()]
    for r in rules:
        if r not in RULES:
            print(f"unknown rule {r!r}", file=sys.stderr)
            return EXIT_INVALID
    try:
        with open(args.instances) as fh:
            instances = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read instances: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rows = []
    for inst in instances:
        try:
            inp = AggregationInput(
                own=inst["own"],
                received=tuple(inst["received"]),
                b_hat=inst["b_hat"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            print(f"bad instance: {exc}", file=sys.stderr)
            return EXIT_INVALID
        if inp.s + 1 > ENUMERATION_CAP:
            print(
                f"instance with {inp.s + 1} inputs exceeds the enumeration cap "
                f"of {ENUMERATION_CAP}",
                file=sys.stderr,
            )
            return EXIT_INVALID
        for r in rules:
            cert = empirical_kappa(r, inp)
            rows.append((r, inp.s, inp.b_hat, cert.kappa_hat))
    meta_hash = config_hash({"cmd": "agg-bench", "instances": instances, "rules": rules})
    text = _csv(_metadata_line(meta_hash, None), ("rule", "s", "b_hat", "kappa_hat"), rows)
    if args.out:
        try:
            _atomic_write(args.out, text)
        except OSError as exc:
            print(f"cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_IO
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gossipsim",
        description="Byzantine-robust decentralized learning simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("select-params", help="grid search for (s, b_hat)")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--b", type=int, required=True)
    sp.add_argument("--T", type=int, required=True)
    sp.add_argument("--grid", type=str, required=True, help="comma-separated s values")
    sp.add_argument("--m", type=int, default=5, help="simulations per grid value")
    sp.add_argument("--q", type=float, default=0.45, help="target effective fraction")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--method", choices=("simulation", "quantile"), default="simulation")
    sp.set_defaults(func=cmd_select_params)

    fs = sub.add_parser("frac-sim", help="effective-fraction simulation sweep")
    fs.add_argument("--n-list", type=str, required=True)
    fs.add_argument("--byz-frac", type=float, required=True)
    fs.add_argument("--s-list", type=str, required=True)
    fs.add_argument("--T", type=int, required=True)
    fs.add_argument("--sims", type=int, default=5)
    fs.add_argument("--seed", type=int, default=0)
    fs.add_argument("--out", type=str, required=True)
    fs.set_defaults(func=cmd_frac_sim)

    rn = sub.add_parser("run", help="run simulations from a JSON config")
    rn.add_argument("--config", type=str, required=True)
    rn.add_argument("--seed-override", type=int, default=None)
    rn.add_argument("--out-dir", type=str, default=None)
    rn.set_defaults(func=cmd_run)

    ab = sub.add_parser("agg-bench", help="robustness-coefficient harness")
    ab.add_argument("--instances", type=str, required=True)
    ab.add_argument("--rules", type=str, required=True, help="comma-separated rule names")
    ab.add_argument("--out", type=str, default=None)
    ab.set_defaults(func=cmd_agg_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
