"""Low-rank posterior Hessian approximation and its fast operators.

With the prior covariance factored as Gamma = L L*, a full Hessian of the
negative log posterior splits as

    H = H_misfit + A = L^{-*} (L* H_misfit L + I) L^{-1}.

The prior-preconditioned misfit Hessian Ht = L* H_misfit L is self-adjoint
in the M inner product and typically has rapidly decaying spectrum, so a
few Lanczos iterations give Ht ≈ V diag(lam) V* with M-orthonormal V.
Writing D = diag(lam_i / (lam_i + 1)), the retained pairs yield matrix-free

    H^{-1}  x = L (I - V D V*) L* x            (+ O(sum_{i>r} lam_i/(lam_i+1)))
    H^{-1/2}x = L (V [(lam+1)^{-1/2} - 1] V* + I) x
    H       x = L^{-*} (V diag(lam) V* + I) L^{-1} x
    log det H^{1/2} = -log det L + 1/2 sum_i log(lam_i + 1)

where only the state-dependent half log-determinant (the sum) is stored;
the det L part is shared by every Hessian built from the same prior and
cancels in acceptance ratios. H^{-1/2} composes exactly:
H^{-1} = H^{-1/2} (H^{-1/2})*.

Negative and numerically tiny Ritz values are discarded. When nothing
survives (rank 0) every operator degenerates to its prior counterpart:
H^{-1} -> Gamma, H^{-1/2} -> L, H -> A, log det term -> 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .models import ForwardModel, misfit_hvp
from .prior import GaussianPrior

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-10


@dataclass
class LowRankHessian:
    """Retained eigenpairs of the preconditioned misfit Hessian at m_ref."""

    prior: GaussianPrior
    m_ref: np.ndarray
    V: np.ndarray          # (n, r), M-orthonormal columns
    lam: np.ndarray        # (r,), positive, descending
    lanczos_iters: int = 0
    deflations: int = 0

    @property
    def rank(self) -> int:
        return self.lam.size

    def _v_coeffs(self, x: np.ndarray) -> np.ndarray:
        """V* x = V^T M x."""
        return self.V.T @ (self.prior.space.M @ x)

    def apply_inv(self, x: np.ndarray) -> np.ndarray:
        """H^{-1} x = L (I - V D V*) L* x."""
        y = self.prior.apply_L_adj(x)
        if self.rank:
            c = self._v_coeffs(y)
            y = y - self.V @ ((self.lam / (self.lam + 1.0)) * c)
        return self.prior.apply_L(y)

    def apply_inv_sqrt(self, x: np.ndarray) -> np.ndarray:
        """H^{-1/2} x = L (V [(lam+1)^{-1/2} - 1] V* + I) x."""
        y = x
        if self.rank:
            c = self._v_coeffs(x)
            y = x + self.V @ (((self.lam + 1.0) ** -0.5 - 1.0) * c)
        return self.prior.apply_L(y)

    def apply_inv_sqrt_adj(self, x: np.ndarray) -> np.ndarray:
        """(H^{-1/2})* x; composition with apply_inv_sqrt gives H^{-1}."""
        y = self.prior.apply_L_adj(x)
        if self.rank:
            c = self._v_coeffs(y)
            y = y + self.V @ (((self.lam + 1.0) ** -0.5 - 1.0) * c)
        return y

    def apply_H(self, x: np.ndarray) -> np.ndarray:
        """H x = L^{-*} (V diag(lam) V* + I) L^{-1} x."""
        y = self.prior.apply_L_inv(x)
        if self.rank:
            c = self._v_coeffs(y)
            y = y + self.V @ (self.lam * c)
        return self.prior.apply_L_inv_adj(y)

    def quad(self, d: np.ndarray) -> float:
        """<d, H d>_M without forming H d explicitly."""
        z = self.prior.apply_L_inv(d)
        out = self.prior.space.inner(z, z)
        if self.rank:
            c = self._v_coeffs(z)
            out += float(c @ (self.lam * c))
        return out

    def half_logdet_rel(self) -> float:
        """State-dependent part of log det H^{1/2}: 1/2 sum log(lam_i + 1)."""
        return 0.5 * float(np.sum(np.log1p(self.lam))) if self.rank else 0.0

    def draw(self, rng: np.random.Generator, mean: np.ndarray) -> np.ndarray:
        """Sample N(mean, H^{-1}): mean + H^{-1/2} (R^{-1} n)."""
        return mean + self.apply_inv_sqrt(self.prior.space.white_noise(rng))

    def residuals(self, model: ForwardModel) -> np.ndarray:
        """Eigen-residuals ||Ht v_i - lam_i v_i||_M for the retained pairs.

        Costs extra Hessian actions; meant for verification, never called
        inside the build (which must stay at exactly 2(r+l) solves).
        """
        res = np.empty(self.rank)
        for i in range(self.rank):
            v = self.V[:, i]
            Pv = self.prior.apply_L_adj(
                misfit_hvp(model, self.m_ref, self.prior.apply_L(v)))
            res[i] = self.prior.space.norm(Pv - self.lam[i] * v)
        return res


def build_lowrank(model: ForwardModel, prior: GaussianPrior, m: np.ndarray,
                  r: int, l: int, rng: np.random.Generator) -> LowRankHessian:
    """Lanczos on the preconditioned misfit Hessian at m.

    Runs exactly r + l iterations (one Hessian action each, i.e. exactly
    2(r+l) linearized solves), with full reorthogonalization in the M
    inner product, then keeps the top r Ritz pairs whose values pass the
    positivity floor. If the Krylov space is exhausted early (the operator
    has numerically low rank), a fresh random direction is injected so the
    iteration count -- and with it the solve count -- never changes.
    """
    n = prior.n
    k = int(r) + int(l)
    if r < 1 or l < 0:
        raise ValueError("need r >= 1 and l >= 0")
    if k > n:
        raise ValueError("r + l must not exceed the parameter dimension")
    space = prior.space
    Q = np.empty((n, k))
    W = np.empty((n, k))

    def orthonormalize(w: np.ndarray, j: int) -> tuple[np.ndarray, float]:
        # two passes of full block Gram-Schmidt in <.,.>_M against Q[:, :j]
        for _ in range(2):
            if j:
                w = w - Q[:, :j] @ (Q[:, :j].T @ (space.M @ w))
        return w, space.norm(w)

    def fresh_direction(j: int) -> np.ndarray:
        for _ in range(3):
            raw = rng.standard_normal(n)
            w, beta = orthonormalize(raw, j)
            if beta > 1e-10 * space.norm(raw):
                return w / beta
        raise NumericalError("Lanczos could not find a new direction after 3 restarts")

    Q[:, 0] = fresh_direction(0)
    op_scale = 0.0
    deflations = 0
    for j in range(k):
        w = prior.apply_L_adj(misfit_hvp(model, m, prior.apply_L(Q[:, j])))
        W[:, j] = w
        op_scale = max(op_scale, space.norm(w))
        if j + 1 == k:
            break
        w_orth, beta = orthonormalize(w, j + 1)
        if beta <= 1e-11 * max(1.0, op_scale):
            # invariant subspace reached; continue in its M-orthogonal complement
            deflations += 1
            Q[:, j + 1] = fresh_direction(j + 1)
        else:
            Q[:, j + 1] = w_orth / beta
    G = Q.T @ (space.M @ W)             # Rayleigh-Ritz projection of Ht
    G = 0.5 * (G + G.T)
    theta, S = scipy.linalg.eigh(G)
    order = np.argsort(theta)[::-1]
    theta, S = theta[order], S[:, order]
    floor = EIG_FLOOR * max(1.0, theta[0] if theta.size else 0.0)
    keep = np.flatnonzero(theta > floor)[:r]
    if keep.size == 0:
        logger.warning("no positive Hessian eigenvalues retained at this point; "
                       "operators fall back to the prior covariance")
        V = np.zeros((n, 0))
        lam = np.zeros(0)
    else:
        lam = theta[keep]
        V = Q @ S[:, keep]
    return LowRankHessian(prior=prior, m_ref=np.asarray(m, dtype=float).copy(),
                          V=V, lam=lam, lanczos_iters=k, deflations=deflations)
