"""Posterior eigenstructure and sample-based marginal analysis.

The dense posterior Hessian at the MAP point is diagonalized in the M
inner product (M H is symmetric, so the generalized symmetric problem
(MH) v = lam M v yields M-orthonormal eigenvectors). Each eigenvalue
splits exactly into Rayleigh quotients of its eigenvector under the two
Hessian parts,

    lam_i = r_m(v_i) + r_p(v_i),
    r_m = <v, H_misfit v>_M / <v, v>_M,   r_p = <v, A v>_M / <v, v>_M,

and the discriminant d = r_m^2 - r_p^2 orders directions from
data-dominated to prior-dominated. Eigenvectors are classified into four
groups: ``data_informed`` (d > 0); among the rest, ``prior_tail`` when
r_p exceeds the median prior quotient of the non-data group, ``shadowed``
when the vector's M-norm mass sits mostly outside the observed region,
and ``mixed`` otherwise.

Marginals are Gaussian kernel density estimates (Silverman bandwidth with
a small floor) of pooled chain samples: nodal values for point marginals,
M-weighted eigencoordinates <v_i, m - m0>_M for eigen-marginals, the
latter compared against the Gaussian that a quadratic expansion at the
MAP point would predict (mean <v_i, m_map - m0>_M, variance 1/lam_i).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .models import ForwardModel, hvp, misfit_hvp
from .prior import GaussianPrior


def posterior_eigensystem(model: ForwardModel, prior: GaussianPrior,
                          m_map: np.ndarray, k: int | None = None):
    """Dense M-symmetric eigendecomposition of the Hessian at m_map.

    Returns (lam, V) sorted by descending eigenvalue with V^T M V = I.
    Costs n Hessian actions (2n linearized solves).
    """
    n = prior.n
    H = np.empty((n, n))
    eye = np.eye(n)
    for j in range(n):
        H[:, j] = hvp(model, prior, m_map, eye[:, j])
    MH = prior.space.M @ H
    MH = 0.5 * (MH + MH.T)
    lam, V = scipy.linalg.eigh(MH, prior.space.M)
    lam, V = lam[::-1], V[:, ::-1]
    if k is not None:
        lam, V = lam[:k], V[:, :k]
    return lam, V


@dataclass
class EigenRecord:
    index: int
    eigenvalue: float
    r_misfit: float
    r_prior: float
    discriminant: float
    norm_observed: float
    norm_unobserved: float
    group: str


def classify_eigenvectors(model: ForwardModel, prior: GaussianPrior,
                          m_map: np.ndarray, lam: np.ndarray, V: np.ndarray,
                          observed_mask: np.ndarray) -> list[EigenRecord]:
    """Rayleigh-quotient classification; records sorted by descending d."""
    space = prior.space
    observed_mask = np.asarray(observed_mask, dtype=bool)
    records = []
    for i in range(V.shape[1]):
        v = V[:, i]
        denom = space.inner(v, v)
        r_m = space.inner(v, misfit_hvp(model, m_map, v)) / denom
        r_p = space.inner(v, prior.apply_A(v)) / denom
        v_obs = np.where(observed_mask, v, 0.0)
        v_un = np.where(observed_mask, 0.0, v)
        records.append(EigenRecord(
            index=i, eigenvalue=float(lam[i]), r_misfit=float(r_m),
            r_prior=float(r_p), discriminant=float(r_m**2 - r_p**2),
            norm_observed=space.norm(v_obs), norm_unobserved=space.norm(v_un),
            group=""))
    non_data = [rec for rec in records if rec.discriminant <= 0.0]
    rp_median = float(np.median([rec.r_prior for rec in non_data])) if non_data else 0.0
    for rec in records:
        if rec.discriminant > 0.0:
            rec.group = "data_informed"
        elif rec.r_prior > rp_median:
            rec.group = "prior_tail"
        elif rec.norm_unobserved >= rec.norm_observed:
            rec.group = "shadowed"
        else:
            rec.group = "mixed"
    records.sort(key=lambda rec: rec.discriminant, reverse=True)
    return records


# -- kernel density estimates --------------------------------------------

def silverman_bandwidth(x: np.ndarray, floor: float = 0.0) -> float:
    """0.9 min(std, IQR/1.34) N^{-1/5}, floored."""
    x = np.asarray(x, dtype=float)
    n = max(x.size, 2)
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    scales = [s for s in (std, iqr / 1.34) if s > 0.0]
    h = 0.9 * min(scales) * n ** (-0.2) if scales else 0.0
    return max(h, floor)


@dataclass
class MarginalCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    mean: float
    variance: float
    percentiles: dict = field(default_factory=dict)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


def default_grid(x: np.ndarray, h: float, n_points: int = 401) -> np.ndarray:
    lo = float(np.min(x)) - 5.0 * h
    hi = float(np.max(x)) + 5.0 * h
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_points)


def kde_1d(x: np.ndarray, grid: np.ndarray | None = None,
           bandwidth: float | None = None) -> MarginalCurve:
    x = np.asarray(x, dtype=float)
    if bandwidth is None:
        span_floor = 1e-6 * (float(np.max(x) - np.min(x)) or 1.0)
        bandwidth = silverman_bandwidth(x, floor=max(span_floor, 1e-12))
    if grid is None:
        grid = default_grid(x, bandwidth)
    z = (grid[:, None] - x[None, :]) / bandwidth
    density = np.exp(-0.5 * z**2).sum(axis=1) / (x.size * bandwidth * np.sqrt(2.0 * np.pi))
    return MarginalCurve(grid=grid, density=density, bandwidth=bandwidth,
                         mean=float(np.mean(x)), variance=float(np.var(x, ddof=1)),
                         percentiles={p: float(np.percentile(x, p))
                                      for p in (2.5, 50.0, 97.5)})


def gaussian_curve(mean: float, variance: float, grid: np.ndarray) -> MarginalCurve:
    sd = float(np.sqrt(variance))
    density = np.exp(-0.5 * ((grid - mean) / sd) ** 2) / (sd * np.sqrt(2.0 * np.pi))
    return MarginalCurve(grid=grid, density=density, bandwidth=0.0,
                         mean=mean, variance=variance)


def point_marginal(pooled_samples: np.ndarray, node_index: int,
                   grid: np.ndarray | None = None) -> MarginalCurve:
    """KDE of the pooled chain values at one mesh node."""
    return kde_1d(np.asarray(pooled_samples)[:, node_index], grid=grid)


def eigen_coordinates(samples: np.ndarray, v: np.ndarray, m0: np.ndarray,
                      space) -> np.ndarray:
    """<v, m - m0>_M for each sample row."""
    return (np.asarray(samples) - m0) @ (space.M @ v)


def eigen_marginal(pooled_samples: np.ndarray, v: np.ndarray, lam: float,
                   m_map: np.ndarray, prior: GaussianPrior,
                   grid: np.ndarray | None = None) -> tuple[MarginalCurve, MarginalCurve]:
    """KDE of an eigencoordinate plus its Gaussian-at-MAP reference."""
    space = prior.space
    coords = eigen_coordinates(pooled_samples, v, prior.mean, space)
    g_mean = float(space.inner(v, m_map - prior.mean))
    g_var = 1.0 / float(lam)
    if grid is None:
        h = silverman_bandwidth(coords, floor=1e-12)
        lo = min(coords.min() - 5.0 * h, g_mean - 5.0 * np.sqrt(g_var))
        hi = max(coords.max() + 5.0 * h, g_mean + 5.0 * np.sqrt(g_var))
        grid = np.linspace(lo, hi, 401)
    kde = kde_1d(coords, grid=grid)
    return kde, gaussian_curve(g_mean, g_var, grid)


@dataclass
class PairDensity:
    x_grid: np.ndarray
    y_grid: np.ndarray
    density: np.ndarray           # shape (len(x_grid), len(y_grid))
    levels: dict                  # mass fraction -> density level
    gauss_density: np.ndarray
    gauss_levels: dict
    bandwidths: tuple


def mass_levels(density: np.ndarray, cell_area: float,
                fractions=(0.05, 0.50, 0.95)) -> dict:
    """Density levels whose superlevel sets hold the given mass fractions."""
    flat = np.sort(density.ravel())[::-1]
    cum = np.cumsum(flat) * cell_area
    total = cum[-1]
    out = {}
    for frac in fractions:
        idx = int(np.searchsorted(cum, frac * total))
        out[frac] = float(flat[min(idx, flat.size - 1)])
    return out


def pair_density(pooled_samples: np.ndarray, vi: np.ndarray, vj: np.ndarray,
                 lam_i: float, lam_j: float, m_map: np.ndarray,
                 prior: GaussianPrior, grid_size: int = 96) -> PairDensity:
    """2D product-kernel KDE of two eigencoordinates with mass contours.

    Contour levels enclose 5/50/95% of the estimated mass; the analogous
    Gaussian-at-MAP surface and levels come from the quadratic expansion
    (independent coordinates with variances 1/lam).
    """
    space = prior.space
    ci = eigen_coordinates(pooled_samples, vi, prior.mean, space)
    cj = eigen_coordinates(pooled_samples, vj, prior.mean, space)
    hi = silverman_bandwidth(ci, floor=1e-12)
    hj = silverman_bandwidth(cj, floor=1e-12)
    gi_mean = float(space.inner(vi, m_map - prior.mean))
    gj_mean = float(space.inner(vj, m_map - prior.mean))
    gi_sd, gj_sd = np.sqrt(1.0 / lam_i), np.sqrt(1.0 / lam_j)
    x_grid = np.linspace(min(ci.min() - 4 * hi, gi_mean - 4 * gi_sd),
                         max(ci.max() + 4 * hi, gi_mean + 4 * gi_sd), grid_size)
    y_grid = np.linspace(min(cj.min() - 4 * hj, gj_mean - 4 * gj_sd),
                         max(cj.max() + 4 * hj, gj_mean + 4 * gj_sd), grid_size)
    zx = np.exp(-0.5 * ((x_grid[:, None] - ci[None, :]) / hi) ** 2)
    zy = np.exp(-0.5 * ((y_grid[:, None] - cj[None, :]) / hj) ** 2)
    density = zx @ zy.T / (ci.size * 2.0 * np.pi * hi * hj)
    gx = np.exp(-0.5 * ((x_grid - gi_mean) / gi_sd) ** 2) / (gi_sd * np.sqrt(2 * np.pi))
    gy = np.exp(-0.5 * ((y_grid - gj_mean) / gj_sd) ** 2) / (gj_sd * np.sqrt(2 * np.pi))
    gauss = np.outer(gx, gy)
    area = float((x_grid[1] - x_grid[0]) * (y_grid[1] - y_grid[0]))
    return PairDensity(x_grid=x_grid, y_grid=y_grid, density=density,
                       levels=mass_levels(density, area),
                       gauss_density=gauss, gauss_levels=mass_levels(gauss, area),
                       bandwidths=(hi, hj))
