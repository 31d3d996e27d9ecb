"""Command-line interface.

Subcommands: synth, map, sample, diagnose, analyze, pipeline. Every
config key is mirrored by a flag (dots become dashes, e.g. --prior-a);
flags override values from --config. Exit codes: 0 success, 2 for
configuration problems, 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import SCHEMA, RunConfig
from .errors import ConfigError, NumericalError
from . import pipeline as pl


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="YAML config file")
    for key, (typ, default, help_text) in SCHEMA.items():
        flag = "--" + key.replace(".", "-").replace("_", "-")
        parser.add_argument(flag, dest=f"cfg::{key}", type=typ, default=None,
                            metavar=typ.__name__.upper(),
                            help=f"{help_text} (default {default})")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    for name, value in vars(args).items():
        if name.startswith("cfg::") and value is not None:
            cfg.set(name[5:], value)
    cfg.validate()
    return cfg


def _out_dir(args: argparse.Namespace, cfg: RunConfig) -> str:
    out = args.out_dir or cfg["run.out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _setup_for(problem, method: str, need_lowrank: bool):
    map_result, map_info = pl.stage_map(problem)
    lrh, lr_info = (None, {"solves": 0})
    if need_lowrank:
        lrh, lr_info = pl.stage_lowrank(problem, map_result.m_map)
    return map_result, map_info, lrh, lr_info


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    problem = pl.build_problem(cfg)
    out = _out_dir(args, cfg)
    pl.stage_synth(problem, out)
    print(f"wrote truth.csv, observations.csv, signal.csv to {out}")
    return 0


def cmd_map(args) -> int:
    cfg = _load_config(args)
    problem = pl.build_problem(cfg)
    out = _out_dir(args, cfg)
    result, info = pl.stage_map(problem, out)
    print(f"MAP: converged={info['converged']} newton_iters={info['newton_iters']} "
          f"cg_iters={info['cg_iters']} solves={info['solves']} -> {out}/map.csv")
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    if args.method:
        cfg.set("run.methods", args.method)
    if args.chains is not None:
        cfg.set("run.chains", args.chains)
    if args.samples is not None:
        cfg.set("run.samples", args.samples)
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    cfg.validate()
    methods = cfg.methods()
    if len(methods) != 1:
        raise ConfigError("sample runs one method; pass --method")
    method = methods[0]
    out = _out_dir(args, cfg)

    problem = pl.build_problem(cfg)
    map_result, map_info, lrh, lr_info = _setup_for(problem, method, need_lowrank=True)
    _, starts, pilot_info = pl.stage_pilot(problem, map_result.m_map, lrh)
    chains = pl.run_campaign(problem, method, starts, map_result.m_map, lrh, out)
    ar = sum(ch.acceptance_rate for ch in chains) / len(chains)
    _merge_manifest(out, cfg, map_info, lr_info, pilot_info, method, chains)
    print(f"{method}: {len(chains)} chains x {chains[0].n_samples} samples, "
          f"mean acceptance {ar:.3f} -> {out}/chains/{method}/")
    return 0


def _merge_manifest(out: str, cfg: RunConfig, map_info, lr_info, pilot_info,
                    method: str, chains) -> None:
    path = os.path.join(out, "manifest.json")
    manifest = {"config": dict(sorted(cfg.items())), "config_hash": cfg.digest(),
                "stages": {}}
    if os.path.exists(path):
        with open(path) as fh:
            existing = json.load(fh)
        if existing.get("config_hash") == manifest["config_hash"]:
            manifest = existing
        else:
            raise ConfigError(f"{path} was produced with a different config; "
                              "use a fresh output directory")
    manifest["stages"]["map"] = map_info
    manifest["stages"]["lowrank"] = lr_info
    manifest["stages"]["pilot"] = pilot_info
    campaigns = manifest["stages"].setdefault("campaigns", {})
    campaigns[method] = {
        "chains": len(chains), "samples": int(chains[0].n_samples),
        "solves": int(sum(ch.cum_solves[-1] for ch in chains)),
        "acceptance_rate": float(sum(ch.acceptance_rate for ch in chains) / len(chains)),
        "wall_time_volatile": float(sum(ch.meta.get("wall_time", 0.0) for ch in chains)),
    }
    manifest["manifest_hash"] = pl.manifest_hash(manifest)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=pl._json_default)
        fh.write("\n")


def _read_setup_solves(chains_dir: str) -> dict:
    manifest_path = os.path.join(os.path.dirname(os.path.abspath(chains_dir)),
                                 "manifest.json")
    if not os.path.exists(manifest_path):
        return {}
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    stages = manifest.get("stages", {})
    setup = stages.get("map", {}).get("solves", 0) + \
        stages.get("lowrank", {}).get("solves", 0)
    return {method: setup for method in stages.get("campaigns", {})} or \
        {"_default": setup}


def cmd_diagnose(args) -> int:
    cfg = _load_config(args)
    problem = pl.build_problem(cfg)
    chains_dir = args.chains_dir or os.path.join(cfg["run.out_dir"], "chains")
    groups = pl.load_method_chains(chains_dir)
    setup = _read_setup_solves(chains_dir)
    default_setup = setup.get("_default", 0)
    setup_by_method = {m: setup.get(m, default_setup) for m in groups}
    out = args.out_dir or os.path.dirname(os.path.abspath(chains_dir))
    reports = pl.stage_diagnose(problem, groups, probe_x=args.probe_x,
                                setup_solves=setup_by_method, out_dir=out)
    for method in sorted(reports):
        rep = reports[method]
        print(f"{method}: AR={rep.acceptance_rate:.3f} MPSRF={rep.mpsrf:.4f} "
              f"IAT={rep.iat:.2f} ESS={rep.ess:.1f} MSJ={rep.msj:.4g} "
              f"SPIS={rep.spis:.2f}")
    print(f"wrote {out}/report.csv")
    return 0


def _parse_pairs(text: str) -> list[tuple[int, int]]:
    pairs = []
    for item in text.split(";"):
        item = item.strip()
        if not item:
            continue
        try:
            i, j = (int(v) for v in item.split(","))
        except ValueError:
            raise ConfigError(f"--pairs expects 'i,j[;k,l...]', got {text!r}")
        pairs.append((i, j))
    return pairs


def cmd_analyze(args) -> int:
    cfg = _load_config(args)
    problem = pl.build_problem(cfg)
    chains_dir = args.chains_dir or os.path.join(cfg["run.out_dir"], "chains")
    groups = pl.load_method_chains(chains_dir)
    map_result, _ = pl.stage_map(problem)
    out = args.out_dir or os.path.dirname(os.path.abspath(chains_dir))
    result = pl.stage_analyze(problem, groups, map_result.m_map,
                              n_eigs=args.eigs, pairs=_parse_pairs(args.pairs),
                              out_dir=out, method=args.method)
    groups_count = {}
    for rec in result["records"]:
        groups_count[rec.group] = groups_count.get(rec.group, 0) + 1
    print(f"eigen groups: {groups_count} -> {out}/analysis/")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    result = pl.run_pipeline(cfg, out_dir=out, n_eigs=args.eigs,
                             pairs=_parse_pairs(args.pairs))
    for method in sorted(result["reports"]):
        rep = result["reports"][method]
        print(f"{method}: AR={rep.acceptance_rate:.3f} MPSRF={rep.mpsrf:.4f} "
              f"IAT={rep.iat:.2f} ESS={rep.ess:.1f} SPIS={rep.spis:.2f}")
    print(f"pipeline complete -> {out} (manifest {result['manifest']['manifest_hash'][:12]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hessmc",
        description="Hessian-preconditioned MCMC for a 1D Bayesian inverse problem")
    sub = parser.add_subparsers(dest="command", required=True)

    specs = [
        ("synth", cmd_synth, "generate synthetic truth and observations"),
        ("map", cmd_map, "solve for the MAP point"),
        ("sample", cmd_sample, "run MCMC chains for one method"),
        ("diagnose", cmd_diagnose, "compute convergence diagnostics from chain files"),
        ("analyze", cmd_analyze, "posterior eigen-analysis and marginals"),
        ("pipeline", cmd_pipeline, "run the full campaign end to end"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        _add_config_flags(p)
        p.add_argument("--out-dir", default=None, help="output directory")
        p.set_defaults(func=func)
        if name == "sample":
            p.add_argument("--method", choices=("rwmh", "sn", "snmap", "ismap"))
            p.add_argument("--chains", type=int, default=None)
            p.add_argument("--samples", type=int, default=None)
            p.add_argument("--seed", type=int, default=None)
        if name in ("diagnose", "analyze"):
            p.add_argument("--chains-dir", default=None,
                           help="directory holding <method>/chain_*.csv")
        if name == "diagnose":
            p.add_argument("--probe-x", type=float, default=None,
                           help="probe coordinate (default 0.69 of the domain)")
        if name == "analyze":
            p.add_argument("--eigs", type=int, default=8,
                           help="number of leading eigen-marginals to export")
            p.add_argument("--pairs", default="0,1",
                           help="eigen pairs for 2D densities, e.g. '0,1;0,2'")
            p.add_argument("--method", default=None,
                           help="which method's chains to pool (default snmap)")
        if name == "pipeline":
            p.add_argument("--eigs", type=int, default=8)
            p.add_argument("--pairs", default="0,1")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
