"""Command line entry point: ``gffcoupling <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import warnings
from collections import defaultdict
from pathlib import Path

import numpy as np

from .. import analysis, verify
from ..errors import ConfigError, GffCouplingError, InfeasibleError
from ..flow import flow_ensemble, load_flow_bundle, minimiser_drift, save_flow_bundle
from ..lattice import field_from_bytes, field_to_bytes, read_field_csv
from ..potential import L2PhaseWarning
from ..scales import c_hat, sample_gaussian
from .config import RunConfig, config_assignments, read_config_text
from .experiments import REGISTRY, Context, estimate_seconds, flow_config, run_experiment
from .records import FIELD_ORDER, RecordWriter, read_records

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common(parser):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", help="output directory (overrides OUTPUT_DIR and the config)")
    parser.add_argument("--name", help="experiment name")
    parser.add_argument("--grid", type=int, help="lattice side n = 1/eps")
    parser.add_argument("--model", help="gff, liouville or sinh-gordon")
    parser.add_argument("--beta", type=float)
    parser.add_argument("--lambda", dest="lam", type=float)
    parser.add_argument("--mass", type=float)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--dry-run", action="store_true", help="estimate wall time and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gffcoupling", description="Coupled GFF / Polchinski flow experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _common(common)

    p = sub.add_parser("sample", parents=[common], help="draw GFF or interacting-measure fields")
    p.add_argument("--format", choices=("bin", "csv"), default="bin")
    sub.add_parser("flow", parents=[common], help="run a coupled flow ensemble and store the bundle")
    p = sub.add_parser("norms", parents=[common], help="norms of stored fields or flow bundles")
    p.add_argument("--in", dest="inp", required=True, help="flow bundle, field file (.bin) or CSV field")
    p.add_argument("--alpha", default="1,1.3", help="comma separated Sobolev exponents")
    p.add_argument("--holder", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.5)
    sub.add_parser("verify", parents=[common], help="small-lattice oracle suite")
    p = sub.add_parser("experiment", parents=[common], help="run a registered acceptance experiment")
    p.add_argument("--list", action="store_true", help="list registered experiments")
    p = sub.add_parser("report", parents=[common], help="aggregate records into tables")
    p.add_argument("--in", dest="inp", required=True, help="directory of .jsonl record files")
    return parser


def _config(args, base: RunConfig) -> RunConfig:
    cfg = base
    if args.config:
        cfg = cfg.updated(**config_assignments(read_config_text(args.config)))
    flags = {"seed": args.seed, "n": args.grid, "model": args.model, "beta": args.beta, "lam": args.lam, "m": args.mass, "replicas": args.replicas}
    cfg = cfg.updated(**{k: v for k, v in flags.items() if v is not None})
    try:
        cfg.model_params(model="liouville" if cfg.model == "gff" else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _output_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("OUTPUT_DIR") or cfg.output_dir)


def _writer(out: Path, stem: str) -> RecordWriter:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.jsonl"
    if path.exists():
        path.unlink()
    return RecordWriter(path)


# subcommands


def cmd_sample(args) -> int:
    cfg = _config(args, RunConfig(name="sample", model="gff", replicas=10))
    out = _output_dir(args, cfg)
    rng = np.random.default_rng(cfg.seed)
    if cfg.model == "gff":
        p = cfg.model_params(model="liouville").scale
        fields = sample_gaussian(p, c_hat(p, math.inf), rng, size=cfg.replicas)
    else:
        fields = verify.rejection_sample_nu(cfg.model_params(), rng, cfg.replicas)
    if args.dry_run:
        print(f"would write {cfg.replicas} fields of size {cfg.n}x{cfg.n}")
        return EXIT_OK
    ctx = Context(cfg, _writer(out, "sample"))
    if args.format == "bin":
        with (out / "samples.bin").open("wb") as fh:
            for f in fields:
                fh.write(field_to_bytes(f))
    else:
        for i, f in enumerate(fields):
            np.savetxt(out / f"sample_{i:04d}.csv", f, delimiter=",", fmt="%.17g")
    m, se = verify.mean_se(fields.mean(axis=(-2, -1)))
    v, vse = verify.mean_se((fields**2).mean(axis=(-2, -1)))
    ctx.emit("site-mean", m, se, cfg.replicas, model=cfg.model, n=cfg.n)
    ctx.emit("site-second-moment", v, vse, cfg.replicas, model=cfg.model, n=cfg.n)
    print(f"wrote {cfg.replicas} {cfg.model} fields to {out}")
    return EXIT_OK


def _interacting(cfg):
    if cfg.model == "gff":
        raise UsageError("this subcommand needs --model liouville or sinh-gordon")
    return cfg


def cmd_flow(args) -> int:
    cfg = _interacting(_config(args, RunConfig(name="flow", replicas=10)))
    exp_like = REGISTRY["liouville-sign"]
    if args.dry_run:
        print(f"estimated wall time {estimate_seconds(exp_like, cfg):.1f} s")
        return EXIT_OK
    out = _output_dir(args, cfg)
    ctx = Context(cfg, _writer(out, "flow"))
    mp = cfg.model_params()
    fc = flow_config(cfg)
    path = flow_ensemble(mp, fc, np.random.SeedSequence(cfg.seed), cfg.replicas)
    save_flow_bundle(out / "flow.bundle", path)
    budget = minimiser_drift(path).l2_budget(0.0, fc.scale_grid.t_max)
    m, se = verify.mean_se(budget)
    ctx.emit("drift-budget", m, se, path.replicas, model=cfg.model, n=cfg.n)
    ctx.emit("terminal-trace", path.terminal_trace(), model=cfg.model, n=cfg.n)
    ctx.emit("min-ess", float(path.ess.min()), model=cfg.model, n=cfg.n, mc_samples=path.mc_samples)
    ctx.emit("max-difference-field", float(path.phi_delta.max()), model=cfg.model, n=cfg.n)
    print(f"stored {path.replicas} paths in {out / 'flow.bundle'}; drift budget {m:.4g} +- {se:.2g}")
    return EXIT_OK


def _load_fields(path: Path):
    data = path.read_bytes()
    if data.startswith(b"GFFFLOW1"):
        bundle = load_flow_bundle(path)
        return bundle.phi_delta[:, 0], "difference-field"
    if path.suffix == ".csv":
        return read_field_csv(path).values[None], "field"
    fields, offset = [], 0
    while offset < len(data):
        f, offset = field_from_bytes(data, offset)
        fields.append(f.values)
    return np.stack(fields), "field"


def cmd_norms(args) -> int:
    cfg = _config(args, RunConfig(name="norms"))
    target = Path(args.inp)
    if not target.exists():
        raise UsageError(f"no such file {target}")
    try:
        alphas = [float(a) for a in args.alpha.split(",") if a.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --alpha {args.alpha!r}") from exc
    fields, kind = _load_fields(target)
    if args.dry_run:
        print(f"would compute norms of {len(fields)} fields")
        return EXIT_OK
    ctx = Context(cfg, _writer(_output_dir(args, cfg), "norms"))
    reports = [analysis.ensemble_report(f"H^{a:g}", a, analysis.sobolev_norm(fields, a)) for a in alphas]
    reports.append(analysis.ensemble_report(f"C^{args.holder:g}", args.holder, [analysis.holder_norm(f, args.holder, rng=cfg.seed) for f in fields]))
    lp = analysis.lp_block_norms(fields, args.delta)
    reports.append(analysis.ensemble_report(f"LP H^{-1 + args.delta:g}", -1 + args.delta, np.sqrt(lp.assembled)))
    for rep in reports:
        ctx.emit(f"norm {rep.kind}", rep.mean, rep.se, rep.replicas, source=kind, parameter=rep.parameter)
        print(f"{rep.kind:>12}  {rep.mean:.6g} +- {rep.se:.2g}  ({rep.replicas} fields)")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = _interacting(_config(args, RunConfig(name="verify", n=4, per_octave=4, mc_flow=128, replicas=1000, seed=7)))
    mp = cfg.model_params()
    fc = flow_config(cfg)
    if args.dry_run:
        print(f"estimated wall time {estimate_seconds(REGISTRY['liouville-sign'], cfg) * 2:.1f} s")
        return EXIT_OK
    ctx = Context(cfg, _writer(_output_dir(args, cfg), "verify"))
    ss = np.random.SeedSequence(cfg.seed)
    flow_seed, oracle_seed, part_seed, inner_seed = ss.spawn(4)
    path = flow_ensemble(mp, fc, flow_seed, cfg.replicas)
    reports = []
    try:
        oracle = verify.rejection_sample_nu(mp, np.random.default_rng(oracle_seed), 4 * cfg.replicas)
        reports += verify.marginal_law_check(mp, path.phi_e[:, 0], oracle)
    except InfeasibleError as exc:
        print(f"marginal law: skipped ({exc})")
    partition = verify.direct_log_partition(mp, "mc", 1_000_000, np.random.default_rng(part_seed))
    reports.append(verify.bd_optimality_gap(mp, fc.scale_grid.t_max, path, partition))
    reports.append(verify.energy_identity_residual(mp, path, 1.0, cfg.mc_diag, np.random.default_rng(inner_seed)))
    for rep in reports:
        ctx.emit(f"oracle {rep.name}", rep.z, replicas=path.replicas, **rep.as_dict())
        print(f"{'PASS' if rep.passed else 'FAIL'}  {rep.name:<22} z = {rep.z:+.2f}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_experiment(args) -> int:
    if getattr(args, "list", False):
        for exp in sorted(REGISTRY.values(), key=lambda e: e.criterion):
            print(f"{exp.criterion:>2}  {exp.name:<26} {exp.title}")
        return EXIT_OK
    if not args.name:
        raise UsageError("experiment needs --name (see --list)")
    if args.name not in REGISTRY:
        raise UsageError(f"unknown experiment {args.name!r}; known: {', '.join(sorted(REGISTRY))}")
    exp = REGISTRY[args.name]
    cfg = _config(args, exp.config())
    if args.dry_run:
        print(f"{exp.name}: estimated wall time {estimate_seconds(exp, cfg):.1f} s (limit {exp.time_limit:.0f} s)")
        return EXIT_OK
    out = _output_dir(args, cfg)
    writer = _writer(out, exp.name)
    start = time.perf_counter()
    outcome = run_experiment(exp.name, cfg, writer)
    (out / f"{exp.name}.cfg").write_text(cfg.to_text())
    print(f"{'PASS' if outcome.passed else 'FAIL'}  [{exp.criterion}] {exp.name}: {outcome.summary} ({time.perf_counter() - start:.1f} s)")
    return EXIT_OK if outcome.passed else EXIT_FAIL


# report


def _params_key(params: dict) -> str:
    return json.dumps(params, sort_keys=True)


def aggregate(records: list[dict]) -> dict[str, str]:
    """Tables as ``{relative path: text}``; the result depends only on the records."""
    files = {}
    by_exp = defaultdict(list)
    for r in records:
        by_exp[r["experiment"]].append(r)
    summary = ["| experiment | passed | summary |", "|---|---|---|"]
    for exp in sorted(by_exp):
        rows = sorted(by_exp[exp], key=lambda r: (r["statistic"], _params_key(r["params"])))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([k for k in FIELD_ORDER if k != "wall_time"])
        for r in rows:
            w.writerow([_params_key(r[k]) if k == "params" else r[k] for k in FIELD_ORDER if k != "wall_time"])
        files[f"{exp}.csv"] = buf.getvalue()
        verdict = [r for r in rows if r["statistic"] == "passed"]
        if verdict:
            v = verdict[-1]
            summary.append(f"| {exp} | {'yes' if v['value'] else 'no'} | {v['params'].get('summary', '')} |")
        series = defaultdict(list)
        for r in rows:
            numeric = {k: v for k, v in r["params"].items() if isinstance(v, (int, float)) and not isinstance(v, bool)}
            if numeric and isinstance(r["value"], (int, float)) and not isinstance(r["value"], bool):
                series[r["statistic"]].append((numeric, r["value"], r["se"]))
        for stat, pts in sorted(series.items()):
            cols = sorted({k for p, _, _ in pts for k in p})
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(cols + ["value", "se"])
            for p, v, se in pts:
                w.writerow([p.get(c, "") for c in cols] + [v, "" if se is None else se])
            files[f"series/{exp}__{stat.replace(' ', '_').replace('/', '_')}.csv"] = buf.getvalue()
    files["summary.md"] = "\n".join(summary) + "\n"
    return files


def cmd_report(args) -> int:
    src = Path(args.inp)
    if not src.is_dir():
        raise UsageError(f"--in must be a directory of record files, got {src}")
    records = []
    for path in sorted(src.glob("*.jsonl")):
        records.extend(read_records(path))
    if not records:
        raise UsageError(f"no records found in {src}")
    files = aggregate(records)
    if args.dry_run:
        print(f"would write {len(files)} tables")
        return EXIT_OK
    out = Path(args.out) if args.out else Path(os.environ.get("OUTPUT_DIR") or "tables")
    for rel, text in files.items():
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    print(f"wrote {len(files)} tables to {out}")
    return EXIT_OK


COMMANDS = {
    "sample": cmd_sample,
    "flow": cmd_flow,
    "norms": cmd_norms,
    "verify": cmd_verify,
    "experiment": cmd_experiment,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", L2PhaseWarning)
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"gffcoupling: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GffCouplingError as exc:
        print(f"gffcoupling: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
