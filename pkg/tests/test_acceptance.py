"""Acceptance suite: one test per shipped guarantee.

Run with ``pytest -v tests/test_acceptance.py`` to get a single pass/fail
line per criterion. Criteria 1-7 are exact property suites on the
collapsed Gaussian case, the derivative stack, the low-rank algebra, the
cost ledger, the diagnostics oracles, and the MAP solver. Criteria 8 and 9
are ordering/structure checks on the nonlinear campaign at its pinned
defaults; they are asserted as stated, and their failure messages carry
the full measured tables.
"""

import time

import numpy as np
import pytest
import scipy.linalg
import scipy.signal

from hessmc.analysis import classify_eigenvectors, posterior_eigensystem
from hessmc.config import RunConfig
from hessmc.diagnostics import autocorrelation, ess, iat, mpsrf
from hessmc.lowrank import build_lowrank
from hessmc.map_point import solve_map
from hessmc.models import gradient, hvp, misfit_hvp
from hessmc.pipeline import (LANCZOS_KEY, build_problem, observed_mask,
                             probe_node, run_campaign, stage_diagnose,
                             stage_lowrank, stage_map, stage_pilot)
from hessmc.samplers import SamplerSettings, run_chain


@pytest.fixture(scope="session")
def linear_posterior():
    """Full-size Gaussian-collapse setting with its analytic posterior."""
    cfg = RunConfig({"model.kind": "linear"})
    problem = build_problem(cfg)
    res = solve_map(problem.model.clone(), problem.prior,
                    grad_tol_rel=1e-10, cg_rtol=1e-12)
    lrh = build_lowrank(problem.model.clone(), problem.prior, res.m_map,
                        cfg["lowrank.r"], cfg["lowrank.l"],
                        np.random.default_rng([cfg["run.seed"], LANCZOS_KEY]))
    model = problem.model
    F, sigma = model.F, model.obs.sigma[0]
    P = problem.prior.K + F.T @ F / sigma**2
    C = np.linalg.inv(P)
    mu = C @ (problem.prior.K @ problem.prior.mean
              + F.T @ model.obs.y_obs / sigma**2)
    return problem, res.m_map, lrh, mu, C


@pytest.fixture(scope="session")
def exp_campaign():
    """Nonlinear campaign at pinned defaults: 5 chains x 5000 per method."""
    cfg = RunConfig({"run.chains": 5, "run.samples": 5000})
    problem = build_problem(cfg)
    map_result, map_info = stage_map(problem)
    lrh, lr_info = stage_lowrank(problem, map_result.m_map)
    _, starts, _ = stage_pilot(problem, map_result.m_map, lrh)
    setup = map_info["solves"] + lr_info["solves"]
    groups = {method: run_campaign(problem, method, starts, map_result.m_map,
                                   lrh, out_dir=None)
              for method in ("ismap", "snmap", "sn")}
    reports = stage_diagnose(problem, groups, probe_x=None,
                             setup_solves={m: setup for m in groups})
    return {"problem": problem, "m_map": map_result.m_map, "groups": groups,
            "reports": reports}


def test_criterion_1_gaussian_collapse_exactness(linear_posterior):
    # on the linear model the Newton proposals coincide with the target:
    # every step accepted, consecutive samples uncorrelated, all < 1 min
    problem, m_map, lrh, mu, C = linear_posterior
    N = 10_000
    node = probe_node(problem.mesh, None)
    se3, se45 = 3.0 / np.sqrt(N), 4.5 / np.sqrt(N)
    failures = []
    t0 = time.perf_counter()
    for method in ("sn", "snmap", "ismap"):
        settings = SamplerSettings(method=method, r=20, l=5,
                                   lrh_map=lrh, m_map=m_map)
        chain = run_chain(settings, problem.model.clone(), problem.prior,
                          m_map, N, seed=0, chain_id=0)
        ar = chain.acceptance_rate
        rho_probe = abs(autocorrelation(chain.samples[:, node], 1)[0])
        rho_max = max(abs(autocorrelation(chain.samples[:, j], 1)[0])
                      for j in range(problem.prior.n))
        if ar < 0.999:
            failures.append(f"{method}: acceptance {ar:.4f} < 0.999")
        if rho_probe > se3:
            failures.append(f"{method}: probe lag-1 rho {rho_probe:.4f} > {se3:.4f}")
        # simultaneous bound over all 139 coordinates, widened for the
        # multiple comparisons
        if rho_max > se45:
            failures.append(f"{method}: max lag-1 rho {rho_max:.4f} > {se45:.4f}")
    wall = time.perf_counter() - t0
    if wall >= 60.0:
        failures.append(f"runtime {wall:.1f}s >= 60s")
    assert not failures, "; ".join(failures)


def test_criterion_2_posterior_moment_recovery(linear_posterior):
    problem, m_map, lrh, mu, C = linear_posterior
    settings = SamplerSettings(method="snmap", r=20, l=5,
                               lrh_map=lrh, m_map=m_map)
    pooled = np.vstack([
        run_chain(settings, problem.model.clone(), problem.prior, m_map,
                  10_000, seed=0, chain_id=c).samples
        for c in range(10)
    ])
    assert pooled.shape == (100_000, problem.prior.n)
    mean_err = np.max(np.abs(pooled.mean(axis=0) - mu)
                      / problem.prior.pointwise_std())
    cov_err = np.linalg.norm(np.cov(pooled.T) - C, 2) / np.linalg.norm(C, 2)
    assert mean_err < 0.01, f"worst per-coordinate mean error {mean_err:.4f}"
    assert cov_err < 0.05, f"covariance spectral error {cov_err:.4f}"


def test_criterion_3_derivative_exactness():
    cfg = RunConfig()
    problem = build_problem(cfg)
    model, prior, space = problem.model.clone(), problem.prior, problem.space
    rng = np.random.default_rng(1234)
    worst_g = worst_h = worst_sym = 0.0

    def phi(point):
        return model.obs.misfit(model.predict(point))

    for _ in range(5):
        m = prior.mean + 0.5 * prior.apply_L(space.white_noise(rng))
        h = 1e-5 * max(1.0, space.norm(m))
        g = model.misfit_gradient(m)
        for _ in range(10):
            d = space.white_noise(rng)
            d /= space.norm(d)
            fd = (phi(m + h * d) - phi(m - h * d)) / (2.0 * h)
            worst_g = max(worst_g, abs(space.inner(g, d) - fd) / abs(fd))
            fdg = (gradient(model, prior, m + h * d)
                   - gradient(model, prior, m - h * d)) / (2.0 * h)
            Hd = hvp(model, prior, m, d)
            worst_h = max(worst_h, space.norm(Hd - fdg) / space.norm(fdg))
        for _ in range(5):
            u = space.white_noise(rng)
            v = space.white_noise(rng)
            u /= space.norm(u)
            v /= space.norm(v)
            sym = abs(space.inner(u, hvp(model, prior, m, v))
                      - space.inner(hvp(model, prior, m, u), v))
            worst_sym = max(worst_sym, sym)

    assert worst_g <= 1e-5, f"gradient vs central differences: {worst_g:.3e}"
    assert worst_h <= 1e-4, f"Hessian action vs differenced gradients: {worst_h:.3e}"
    assert worst_sym <= 1e-10, f"M-symmetry defect: {worst_sym:.3e}"


def test_criterion_4_lowrank_algebra_exactness(linear_posterior):
    # r + l = n = 139: the Lanczos pass spans the whole space, so every
    # identity must hold to solver precision against a dense reference
    problem, m_map, _, mu, C = linear_posterior
    prior, space = problem.prior, problem.space
    n = prior.n
    t0 = time.perf_counter()
    lrh = build_lowrank(problem.model.clone(), prior, m_map, n - 5, 5,
                        np.random.default_rng([0, LANCZOS_KEY]))

    worker = problem.model.clone()
    T = np.empty((n, n))
    eye = np.eye(n)
    for j in range(n):
        T[:, j] = prior.apply_L_adj(misfit_hvp(worker, m_map, prior.apply_L(eye[:, j])))
    MT = space.M @ T
    theta = scipy.linalg.eigh(0.5 * (MT + MT.T), space.M, eigvals_only=True)[::-1]
    kept = theta[theta > 1e-10 * max(1.0, theta[0])][:n - 5]

    assert lrh.rank == kept.size == problem.model.obs.q
    np.testing.assert_allclose(lrh.lam, kept, rtol=1e-8)

    rng = np.random.default_rng(1)
    for _ in range(5):
        d = space.white_noise(rng)
        back = lrh.apply_H(lrh.apply_inv(d))
        assert space.norm(back - d) <= 1e-8 * space.norm(d)
        ref = lrh.apply_inv(d)
        comp = lrh.apply_inv_sqrt(lrh.apply_inv_sqrt_adj(d))
        assert space.norm(comp - ref) <= 1e-10 * space.norm(ref)

    half_logdet_dense = 0.5 * np.log1p(kept).sum()
    assert abs(lrh.half_logdet_rel() - half_logdet_dense) <= 1e-8
    assert time.perf_counter() - t0 < 60.0


def test_criterion_5_solve_count_ledger():
    cfg = RunConfig()
    problem = build_problem(cfg)
    res = solve_map(problem.model.clone(), problem.prior)
    r, l = cfg["lowrank.r"], cfg["lowrank.l"]

    # the build's own cost, measured with the linearization point already
    # warm (as in the pipeline, where the MAP solve ends at m_map)
    worker = problem.model.clone()
    gradient(worker, problem.prior, res.m_map)
    before = worker.counter.total
    lrh = build_lowrank(worker, problem.prior, res.m_map, r, l,
                        np.random.default_rng([0, LANCZOS_KEY]))
    assert worker.counter.total - before == 2 * (r + l)

    per_step = {"ismap": 1, "snmap": 2, "sn": 2 + 2 * (r + l)}
    for method, cost in per_step.items():
        settings = SamplerSettings(method=method, r=r, l=l,
                                   lrh_map=lrh, m_map=res.m_map)
        chain = run_chain(settings, problem.model.clone(), problem.prior,
                          res.m_map, 40, seed=0, chain_id=0)
        diffs = np.diff(chain.cum_solves)
        assert np.all(diffs == cost), \
            f"{method}: per-step solves {sorted(set(diffs.tolist()))} != {cost}"


def test_criterion_6_diagnostics_oracles():
    rng = np.random.default_rng(42)
    phi = 0.5
    eps = rng.standard_normal(1_000_000)
    x = scipy.signal.lfilter([np.sqrt(1.0 - phi**2)], [1.0, -phi], eps)
    tau = iat(x)
    assert tau == pytest.approx((1 + phi) / (1 - phi), rel=0.10), f"AR(1) IAT {tau:.3f}"

    iid = np.random.default_rng(43).standard_normal(1_000_000)
    assert ess(iid) == pytest.approx(iid.size, rel=0.10)

    chains = [np.random.default_rng([44, c]).standard_normal((2000, 5))
              for c in range(4)]
    r_same = mpsrf(chains)
    assert r_same <= 1.02, f"same-target MPSRF {r_same:.4f}"
    offset = [chains[0] - 5.0, chains[1] + 5.0, chains[2]]
    r_off = mpsrf(offset)
    assert r_off >= 1.5, f"offset-chain MPSRF {r_off:.3f}"


def test_criterion_7_map_solver(linear_posterior):
    problem, m_map, lrh, mu, C = linear_posterior
    res_lin = solve_map(problem.model.clone(), problem.prior, cg_rtol=1e-12)
    assert res_lin.converged and res_lin.newton_iters == 1

    exp_problem = build_problem(RunConfig())
    res = solve_map(exp_problem.model.clone(), exp_problem.prior)
    assert res.converged
    assert res.newton_iters <= 50
    reduction = res.grad_norms[-1] / res.grad_norms[0]
    assert reduction <= 1e-5, f"gradient reduction {reduction:.3e}"
    assert np.all(np.diff(res.objective) < 0.0)


def test_criterion_8_method_ordering_on_nonlinear_campaign(exp_campaign):
    reports = exp_campaign["reports"]
    table = "\n".join(
        f"  {m}: mpsrf={rep.mpsrf:.6f} spis={rep.spis:.1f} "
        f"ess={rep.ess:.2f} acceptance={rep.acceptance_rate:.4f}"
        for m, rep in sorted(reports.items()))
    dev = {m: abs(rep.mpsrf - 1.0) for m, rep in reports.items()}
    spis = {m: rep.spis for m, rep in reports.items()}
    mpsrf_leads = dev["snmap"] < dev["sn"] and dev["snmap"] < dev["ismap"]
    spis_leads = spis["snmap"] < spis["sn"] and spis["snmap"] < spis["ismap"]
    assert mpsrf_leads and spis_leads, (
        "expected the frozen-Hessian Newton sampler to have the MPSRF "
        "closest to 1 and the smallest solves-per-independent-sample of "
        f"the three methods; measured:\n{table}")


def test_criterion_9_posterior_structure(exp_campaign):
    problem = exp_campaign["problem"]
    m_map = exp_campaign["m_map"]
    prior, mesh = problem.prior, problem.mesh

    lam, V = posterior_eigensystem(problem.model.clone(), prior, m_map)
    mask = observed_mask(mesh, "right_half")
    records = classify_eigenvectors(problem.model.clone(), prior, m_map,
                                    lam, V, mask)
    failures = []

    sum_defect = max(abs(rec.r_misfit + rec.r_prior - rec.eigenvalue)
                     / max(1.0, abs(rec.eigenvalue)) for rec in records)
    if sum_defect > 1e-8:
        failures.append(f"Rayleigh sum rule defect {sum_defect:.3e} > 1e-8")

    informed = [rec for rec in records if rec.group == "data_informed"]
    if not informed:
        failures.append("data_informed group is empty")
    else:
        conc = np.mean([rec.norm_observed
                        / np.hypot(rec.norm_observed, rec.norm_unobserved)
                        for rec in informed])
        if conc < 0.70:
            failures.append(
                f"data_informed directions carry {conc:.3f} of their norm in "
                f"the observed half (< 0.70) over {len(informed)} vectors")

    node = mesh.nearest_node(0.25 * mesh.length)
    pooled = np.vstack([ch.samples for ch in exp_campaign["groups"]["snmap"]])
    var_samples = float(np.var(pooled[:, node], ddof=1))
    var_prior = float(prior.pointwise_variance()[node])
    if abs(var_samples - var_prior) > 0.15 * var_prior:
        failures.append(
            f"unobserved-node variance {var_samples:.4f} deviates from the "
            f"prior value {var_prior:.4f} by more than 15%")

    assert not failures, "; ".join(failures)
