"""End-to-end campaign orchestration and the problem builders.

Every stage is a pure function of the configuration: data synthesis, the
MAP solve, the low-rank Hessian at the MAP point, a pilot chain for
start-point selection, the per-method sampling campaigns, diagnostics,
and eigen-analysis. Randomness comes from streams keyed on
(run.seed, purpose): purpose 101 is data noise, 202 the Lanczos start
vectors at the MAP point, and chains use (seed, chain_id) with campaign
chain ids 0..chains-1 and the reserved id 10_000 for the pilot. Rerunning
with the same config reproduces every output byte except recorded wall
times, which stay out of the manifest hash.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import (classify_eigenvectors, eigen_marginal, pair_density,
                       point_marginal, posterior_eigensystem)
from .chain_io import read_chain, write_chain, write_table
from .config import RunConfig
from .diagnostics import diagnostics_report
from .errors import ConfigError
from .fem import Mesh1D, assemble_mass, interpolation_matrix
from .lowrank import build_lowrank
from .map_point import solve_map
from .models import (ExpReaction1D, LinearGaussianModel, observation_points,
                     synthesize_data)
from .prior import build_prior
from .samplers import SamplerSettings, run_chain, select_start_points

logger = logging.getLogger(__name__)

PILOT_CHAIN_ID = 10_000
DATA_NOISE_KEY = 101
LANCZOS_KEY = 202


@dataclass
class Problem:
    cfg: RunConfig
    mesh: Mesh1D
    space: object
    prior: object
    model: object
    m_true: np.ndarray
    obs: object


def make_truth(cfg: RunConfig, mesh: Mesh1D) -> np.ndarray:
    kind = cfg["truth.kind"]
    if kind == "sine_plus_one":
        x = mesh.node_coords
        return np.sin(2.0 * np.pi * x / mesh.length) + 1.0
    if kind == "prior_mean":
        return np.full(mesh.n_nodes, cfg["prior.mean_constant"])
    raise ConfigError(f"unknown truth.kind {kind!r}")


def build_problem(cfg: RunConfig) -> Problem:
    """Assemble mesh, prior, model and synthetic data from the config."""
    mesh = Mesh1D.uniform(cfg["mesh.n_nodes"], cfg["mesh.length"])
    space = assemble_mass(mesh)
    prior = build_prior(mesh, cfg["prior.a"], cfg["prior.b"],
                        mean=cfg["prior.mean_constant"], space=space)
    points = observation_points(mesh, cfg["obs.count"], cfg["obs.region"])
    if cfg["model.kind"] == "linear":
        model = LinearGaussianModel(mesh, space, interpolation_matrix(mesh, points))
    else:
        model = ExpReaction1D(mesh, space, source_constant=cfg["model.source_constant"])
    m_true = make_truth(cfg, mesh)
    rng = np.random.default_rng([cfg["run.seed"], DATA_NOISE_KEY])
    obs = synthesize_data(model, m_true, cfg["obs.noise_rel"], rng, points=points)
    return Problem(cfg=cfg, mesh=mesh, space=space, prior=prior, model=model,
                   m_true=m_true, obs=obs)


def probe_node(mesh: Mesh1D, probe_x: float | None) -> int:
    """Mesh node nearest to the probe coordinate (default 0.69 of the length)."""
    x = 0.69 * mesh.length if probe_x is None else float(probe_x)
    return mesh.nearest_node(x)


def observed_mask(mesh: Mesh1D, region: str) -> np.ndarray:
    if region == "full":
        return np.ones(mesh.n_nodes, dtype=bool)
    return mesh.node_coords >= mesh.node_coords[0] + 0.5 * mesh.length


# -- stages ---------------------------------------------------------------

def stage_synth(problem: Problem, out_dir: str) -> None:
    mesh, obs = problem.mesh, problem.obs
    write_table(os.path.join(out_dir, "truth.csv"), ["node_coord", "value"],
                zip(mesh.node_coords.tolist(), problem.m_true.tolist()))
    write_table(os.path.join(out_dir, "observations.csv"), ["point", "value", "sigma"],
                zip(obs.points.tolist(), obs.y_obs.tolist(), obs.sigma.tolist()))
    write_table(os.path.join(out_dir, "signal.csv"), ["point", "value_clean"],
                zip(obs.points.tolist(), obs.y_clean.tolist()))


def stage_map(problem: Problem, out_dir: str | None = None):
    cfg = problem.cfg
    before = problem.model.counter.total
    result = solve_map(problem.model, problem.prior,
                       grad_tol_rel=cfg["map.grad_tol_rel"],
                       max_newton=cfg["map.max_newton"])
    info = {"newton_iters": result.newton_iters,
            "cg_iters": result.cg_iters_total,
            "converged": bool(result.converged),
            "solves": problem.model.counter.total - before}
    if not result.converged:
        logger.warning("MAP solve did not reach tolerance in %d iterations",
                       result.newton_iters)
    if out_dir is not None:
        write_table(os.path.join(out_dir, "map.csv"), ["node_coord", "value"],
                    zip(problem.mesh.node_coords.tolist(), result.m_map.tolist()))
    return result, info


def stage_lowrank(problem: Problem, m_map: np.ndarray):
    cfg = problem.cfg
    before = problem.model.counter.total
    rng = np.random.default_rng([cfg["run.seed"], LANCZOS_KEY])
    lrh = build_lowrank(problem.model, problem.prior, m_map,
                        cfg["lowrank.r"], cfg["lowrank.l"], rng)
    info = {"rank": lrh.rank, "iterations": lrh.lanczos_iters,
            "solves": problem.model.counter.total - before}
    return lrh, info


def stage_pilot(problem: Problem, m_map: np.ndarray, lrh_map):
    """Pilot chain from the MAP point; returns over-dispersed starts."""
    cfg = problem.cfg
    settings = SamplerSettings(method=cfg["pilot.method"], r=cfg["lowrank.r"],
                               l=cfg["lowrank.l"], rwmh_sigma=cfg["rwmh.sigma"],
                               lrh_map=lrh_map, m_map=m_map)
    worker = problem.model.clone()
    pilot = run_chain(settings, worker, problem.prior, m_map,
                      cfg["pilot.samples"], cfg["run.seed"], PILOT_CHAIN_ID)
    starts, idx = select_start_points(pilot.samples, cfg["run.chains"], problem.space)
    info = {"samples": pilot.n_samples, "solves": int(pilot.cum_solves[-1]),
            "acceptance_rate": pilot.acceptance_rate,
            "start_indices": idx.tolist()}
    return pilot, starts, info


def run_campaign(problem: Problem, method: str, starts: np.ndarray,
                 m_map: np.ndarray, lrh_map, out_dir: str | None,
                 n_samples: int | None = None) -> list:
    """All chains for one method; one cloned model (fresh counter) each."""
    cfg = problem.cfg
    settings = SamplerSettings(method=method, r=cfg["lowrank.r"], l=cfg["lowrank.l"],
                               rwmh_sigma=cfg["rwmh.sigma"],
                               lrh_map=lrh_map, m_map=m_map)
    n_samples = cfg["run.samples"] if n_samples is None else n_samples
    chains = []
    for cid in range(starts.shape[0]):
        worker = problem.model.clone()
        path = None
        if out_dir is not None:
            path = os.path.join(out_dir, "chains", method, f"chain_{cid:03d}.csv")
        chain = run_chain(settings, worker, problem.prior, starts[cid],
                          n_samples, cfg["run.seed"], cid, flush_path=path)
        chain.meta["start_index"] = cid
        if path is not None:
            write_chain(chain, path)
        chains.append(chain)
    return chains


def load_method_chains(chains_dir: str) -> dict[str, list]:
    """Read chains grouped by method from <chains_dir>/<method>/chain_*.csv."""
    groups: dict[str, list] = {}
    if not os.path.isdir(chains_dir):
        raise ConfigError(f"chains directory not found: {chains_dir}")
    for method in sorted(os.listdir(chains_dir)):
        mdir = os.path.join(chains_dir, method)
        if not os.path.isdir(mdir):
            continue
        files = sorted(f for f in os.listdir(mdir) if f.endswith(".csv"))
        if files:
            groups[method] = [read_chain(os.path.join(mdir, f)) for f in files]
    if not groups:
        raise ConfigError(f"no chain files under {chains_dir}")
    return groups


def stage_diagnose(problem: Problem, groups: dict[str, list], probe_x: float | None,
                   setup_solves: dict[str, int] | None = None,
                   wall_times: dict[str, float] | None = None,
                   out_dir: str | None = None):
    cfg = problem.cfg
    node = probe_node(problem.mesh, probe_x)
    reports = {}
    for method, chains in groups.items():
        reports[method] = diagnostics_report(
            method, chains, problem.space, node,
            setup_solves=(setup_solves or {}).get(method, 0),
            burn_frac=cfg["run.burn_frac"],
            wall_time=(wall_times or {}).get(method))
    if out_dir is not None:
        header = ["method", "chains", "samples_total", "probe_node", "acceptance_rate",
                  "mpsrf", "iat", "ess", "msj", "solves_total", "spis", "tpis"]
        rows = []
        for method in sorted(reports):
            rep = reports[method]
            rows.append([rep.method, rep.n_chains, rep.n_samples_total, rep.probe_index,
                         float(rep.acceptance_rate), float(rep.mpsrf), float(rep.iat),
                         float(rep.ess), float(rep.msj), rep.solves_total,
                         float(rep.spis),
                         float(rep.tpis) if rep.tpis is not None else ""])
        write_table(os.path.join(out_dir, "report.csv"), header, rows,
                    comments=[f"probe_x={problem.mesh.node_coords[node]:.6g}"])
    return reports


def stage_analyze(problem: Problem, groups: dict[str, list], m_map: np.ndarray,
                  n_eigs: int, pairs: list[tuple[int, int]],
                  out_dir: str | None = None, method: str | None = None):
    """Eigen-classification plus marginal/contour tables from pooled samples."""
    cfg = problem.cfg
    if method is None:
        method = "snmap" if "snmap" in groups else sorted(groups)[0]
    chains = groups[method]
    burn = cfg["run.burn_frac"]
    pooled = np.vstack([ch.samples[int(burn * ch.n_samples):] for ch in chains])
    lam, V = posterior_eigensystem(problem.model, problem.prior, m_map)
    mask = observed_mask(problem.mesh, cfg["obs.region"])
    records = classify_eigenvectors(problem.model, problem.prior, m_map,
                                    lam, V, mask)
    out = {"eigenvalues": lam, "eigenvectors": V, "records": records,
           "method": method, "marginals": {}, "pairs": {}}

    n_eigs = min(n_eigs, len(records))
    if out_dir is not None:
        rows = [[rec.index, float(rec.eigenvalue), float(rec.r_misfit),
                 float(rec.r_prior), float(rec.discriminant),
                 float(rec.norm_observed), float(rec.norm_unobserved), rec.group]
                for rec in records]
        write_table(os.path.join(out_dir, "analysis", "eigen_classification.csv"),
                    ["eigen_index", "eigenvalue", "rayleigh_misfit", "rayleigh_prior",
                     "discriminant", "norm_observed", "norm_unobserved", "group"],
                    rows, comments=[f"method={method}", f"pooled_samples={len(pooled)}"])

    for rec in records[:n_eigs]:
        i = rec.index
        kde, gauss = eigen_marginal(pooled, V[:, i], lam[i], m_map, problem.prior)
        out["marginals"][i] = (kde, gauss)
        if out_dir is not None:
            write_table(os.path.join(out_dir, "analysis", f"marginal_{i:03d}.csv"),
                        ["coord", "density", "gaussian_at_map"],
                        zip(kde.grid.tolist(), kde.density.tolist(),
                            gauss.density.tolist()),
                        comments=[f"eigen_index={i}", f"bandwidth={kde.bandwidth:.9g}",
                                  f"group={rec.group}"])

    for (i, j) in pairs:
        if not (0 <= i < V.shape[1] and 0 <= j < V.shape[1]) or i == j:
            raise ConfigError(f"invalid eigen pair ({i}, {j})")
        pd = pair_density(pooled, V[:, i], V[:, j], lam[i], lam[j],
                          m_map, problem.prior)
        out["pairs"][(i, j)] = pd
        if out_dir is not None:
            rows = []
            for a, xa in enumerate(pd.x_grid):
                for b, yb in enumerate(pd.y_grid):
                    rows.append([float(xa), float(yb), float(pd.density[a, b]),
                                 float(pd.gauss_density[a, b])])
            comments = [f"eigen_pair={i},{j}"]
            comments += [f"level_{int(100 * frac)}={lvl:.9g}"
                         for frac, lvl in pd.levels.items()]
            comments += [f"gauss_level_{int(100 * frac)}={lvl:.9g}"
                         for frac, lvl in pd.gauss_levels.items()]
            write_table(os.path.join(out_dir, "analysis", f"contour_{i:03d}_{j:03d}.csv"),
                        ["coord_i", "coord_j", "density", "gaussian_at_map"],
                        rows, comments=comments)
    return out


def run_pipeline(cfg: RunConfig, out_dir: str | None = None,
                 n_eigs: int = 8, pairs: list[tuple[int, int]] | None = None) -> dict:
    """synth -> map -> lowrank -> pilot -> campaigns -> diagnose -> analyze."""
    out_dir = cfg["run.out_dir"] if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    pairs = [(0, 1)] if pairs is None else pairs
    manifest: dict = {"config": dict(sorted(cfg.items())),
                      "config_hash": cfg.digest(), "stages": {}}

    problem = build_problem(cfg)
    stage_synth(problem, out_dir)

    map_result, map_info = stage_map(problem, out_dir)
    manifest["stages"]["map"] = map_info
    lrh, lr_info = stage_lowrank(problem, map_result.m_map)
    manifest["stages"]["lowrank"] = lr_info
    _, starts, pilot_info = stage_pilot(problem, map_result.m_map, lrh)
    manifest["stages"]["pilot"] = pilot_info

    # MAP + low-rank setup cost is attributed to every method that uses it
    setup = map_info["solves"] + lr_info["solves"]
    setup_by_method = {"sn": setup, "snmap": setup, "ismap": setup,
                       "rwmh": map_info["solves"]}

    groups: dict[str, list] = {}
    wall_times: dict[str, float] = {}
    campaigns: dict[str, dict] = {}
    for method in cfg.methods():
        t0 = time.perf_counter()
        chains = run_campaign(problem, method, starts, map_result.m_map, lrh, out_dir)
        wall = time.perf_counter() - t0
        groups[method] = chains
        wall_times[method] = wall
        campaigns[method] = {
            "chains": len(chains),
            "samples": int(chains[0].n_samples),
            "solves": int(sum(ch.cum_solves[-1] for ch in chains)),
            "acceptance_rate": float(np.mean([ch.acceptance_rate for ch in chains])),
            "wall_time_volatile": wall,
        }
    manifest["stages"]["campaigns"] = campaigns

    reports = stage_diagnose(problem, groups, probe_x=None,
                             setup_solves=setup_by_method,
                             wall_times=wall_times, out_dir=out_dir)
    analysis = stage_analyze(problem, groups, map_result.m_map,
                             n_eigs=n_eigs, pairs=pairs, out_dir=out_dir)

    manifest["manifest_hash"] = manifest_hash(manifest)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
        fh.write("\n")
    return {"problem": problem, "map": map_result, "lowrank": lrh,
            "reports": reports, "analysis": analysis, "manifest": manifest,
            "out_dir": out_dir}


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _strip_volatile(node):
    if isinstance(node, dict):
        return {k: _strip_volatile(v) for k, v in sorted(node.items())
                if not k.endswith("_volatile") and k != "manifest_hash"}
    if isinstance(node, list):
        return [_strip_volatile(v) for v in node]
    return node


def manifest_hash(manifest: dict) -> str:
    import hashlib
    canon = json.dumps(_strip_volatile(manifest), sort_keys=True, default=_json_default)
    return hashlib.sha256(canon.encode()).hexdigest()
