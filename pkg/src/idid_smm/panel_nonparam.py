"""Influence-function estimation of the multiplicative effect with m(X) free.

Works on theta = exp(-beta) - 1. Writing den = theta*a3 + a4,

    A = d(X,Z) - (theta*a1 + a2) / den
    B = (Y1 D1 - Y0 D0) * theta + Y1 - Y0

the estimator solves the sample mean of the influence function for theta,
whose C-free numerator is

    num = [ (theta*Y0*D0*d - a1*theta + Y0*d - a2) / den
            - (theta*a1 + a2)(theta*Y0*D0 - theta*a3 + Y0 - a4) / den^2 ] * E(B|X)
          - A * B

with E(B|X) = theta*(a5 - a3) + a6 - a4 and scaling constant
C = mean{ (a2*a3 - a1*a4) / den^2 * B + A * (Y1 D1 - Y0 D0) }. The root search
runs on the numerator; C enters only the variance. Cross-fitting of the
nuisance fits is on by default.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from .datasets import PanelData
from .exceptions import (
    DegenerateCError,
    DegenerateDenominatorError,
    NonConvergenceError,
    NoRootError,
    RankDeficientJacobianError,
)
from .nuisance import A4_FLOOR, NuisanceValues, default_g, fit_nuisance_values
from .panel_nocov import solve_multiplicative_nocov
from .results import Estimate, VectorEstimate, wald_interval

THETA_LOWER = -1.0 + 1e-9
THETA_UPPER = 1e3
C_TOL = 1e-10


def _denominator(theta, nu: NuisanceValues, clip: bool):
    den = theta * nu.a3 + nu.a4
    if clip:
        return np.maximum(den, A4_FLOOR), int((den < A4_FLOOR).sum())
    if (den < A4_FLOOR).any():
        raise DegenerateDenominatorError("theta*a3 + a4 fell below the floor")
    return den, 0


def compute_ab(panel: PanelData, theta: float, nu: NuisanceValues, d_values: np.ndarray):
    """The two bracketed factors of the moment condition, per observation."""
    if not theta > -1:
        raise ValueError("theta must exceed -1")
    den, _ = _denominator(theta, nu, clip=False)
    A = d_values - (theta * nu.a1 + nu.a2) / den
    B = (panel.y1 * panel.d1 - panel.y0 * panel.d0) * theta + panel.y1 - panel.y0
    return A, B


def _phi_numerator(panel, theta, nu, d_values, clip=True):
    """Per-observation C-free numerator of the influence function."""
    den, n_clip = _denominator(theta, nu, clip=clip)
    A = d_values - (theta * nu.a1 + nu.a2) / den
    B = (panel.y1 * panel.d1 - panel.y0 * panel.d0) * theta + panel.y1 - panel.y0
    eb = theta * (nu.a5 - nu.a3) + nu.a6 - nu.a4
    corr = (
        (theta * panel.y0 * panel.d0 * d_values - nu.a1 * theta + panel.y0 * d_values - nu.a2) / den
        - (theta * nu.a1 + nu.a2) * (theta * panel.y0 * panel.d0 - theta * nu.a3 + panel.y0 - nu.a4) / den**2
    )
    return corr * eb - A * B, A, B, n_clip


def c_hat(panel: PanelData, theta: float, nu: NuisanceValues, d_values: np.ndarray) -> float:
    """Scaling constant of the influence function at a candidate theta."""
    den, _ = _denominator(theta, nu, clip=True)
    A = d_values - (theta * nu.a1 + nu.a2) / den
    ydd = panel.y1 * panel.d1 - panel.y0 * panel.d0
    B = ydd * theta + panel.y1 - panel.y0
    return float(np.mean((nu.a2 * nu.a3 - nu.a1 * nu.a4) / den**2 * B + A * ydd))


def influence_phi(
    panel: PanelData, theta: float, nu: NuisanceValues, d_values: np.ndarray,
    C: float | None = None,
) -> np.ndarray:
    """Per-observation influence-function values phi; mean zero at the truth."""
    C = c_hat(panel, theta, nu, d_values) if C is None else C
    if abs(C) < C_TOL:
        raise DegenerateCError(f"C_hat = {C:g}")
    num, _, _, _ = _phi_numerator(panel, theta, nu, d_values)
    return num / C


def _scan_grid(lo, hi):
    neg = -1.0 + np.geomspace(max(lo + 1.0, 1e-9), 1.0, 80, endpoint=False)
    pos = np.geomspace(1e-4, hi, 80)
    return np.concatenate([neg, [0.0], pos])


def _find_roots(objective, lo=THETA_LOWER, hi=THETA_UPPER, expansions=2):
    """Bracketed sign-change scan plus Brent refinement; lists every root."""
    for attempt in range(expansions + 1):
        grid = _scan_grid(lo, hi * (10.0**attempt))
        vals = np.array([objective(t) for t in grid])
        ok = np.isfinite(vals)
        grid, vals = grid[ok], vals[ok]
        roots = []
        for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if fa == 0.0:
                roots.append(float(a))
            elif fa * fb < 0:
                roots.append(float(brentq(objective, a, b, xtol=1e-12, rtol=1e-12)))
        if vals.size and vals[-1] == 0.0:
            roots.append(float(grid[-1]))
        if roots:
            return roots, {"bracket": [float(grid[0]), float(grid[-1])], "expansions": attempt}
    raise NoRootError("no sign change of the moment equation over the expanded bracket")


def mean_moment_ab(panel: PanelData, theta: float, nu: NuisanceValues, d_values: np.ndarray) -> float:
    """Sample analog of the raw moment condition E(A*B) = 0."""
    den, _ = _denominator(theta, nu, clip=True)
    A = d_values - (theta * nu.a1 + nu.a2) / den
    B = (panel.y1 * panel.d1 - panel.y0 * panel.d0) * theta + panel.y1 - panel.y0
    return float(np.mean(A * B))


def estimate_nonparam(
    panel: PanelData,
    learner=None,
    n_folds: int = 5,
    seed: int = 0,
    level: float = 0.95,
    crossfit: bool = True,
    target: str = "population",
    g=None,
    nuisances: NuisanceValues | None = None,
) -> Estimate:
    """Cross-fitted influence-function estimator of the multiplicative effect.

    Pre-fitted (for instance oracle) ``nuisances`` may be supplied; otherwise
    they are estimated with ``learner``. Turning cross-fitting off is allowed
    but recorded as a warning, since validity then leans on the complexity of
    the nuisance estimators being restricted.
    """
    g = g or default_g
    d_values = np.asarray(g(panel.x, panel.z), dtype=float)

    try:
        pilot = solve_multiplicative_nocov(panel, variance="none")
        theta_pilot = pilot.theta
    except Exception:  # noqa: BLE001 - pilot is best-effort
        theta_pilot = 0.0

    if nuisances is None:
        nuisances = fit_nuisance_values(
            panel, theta_pilot=theta_pilot, g=g, learner=learner,
            crossfit=crossfit, seed=seed, n_folds=n_folds,
        )

    def objective(theta):
        num, _, _, _ = _phi_numerator(panel, theta, nuisances, d_values)
        return float(num.mean())

    roots, scan_diag = _find_roots(objective)
    theta = min(roots, key=lambda r: abs(r - theta_pilot))

    C = c_hat(panel, theta, nuisances, d_values)
    phi = influence_phi(panel, theta, nuisances, d_values, C=C)
    if abs(phi.mean()) > 1e-8 * (1.0 + np.abs(phi).mean()):
        raise NonConvergenceError(f"mean phi {phi.mean():g} not zero at the root")
    se_theta = float(phi.std(ddof=1) / np.sqrt(panel.n))
    beta = float(-np.log1p(theta))
    se_beta = se_theta / (1.0 + theta)

    _, _, _, n_clip = _phi_numerator(panel, theta, nuisances, d_values)
    diagnostics = {
        "roots": roots,
        "mean_phi": float(phi.mean()),
        "theta_pilot": float(theta_pilot),
        "C_hat": C,
        "clipped_denominators": int(n_clip),
        "crossfit": bool(crossfit),
        "variance_method": "influence-function",
        **scan_diag,
        **{f"nuisance_{k}": v for k, v in nuisances.diagnostics.items()},
    }
    if not crossfit:
        diagnostics["warning"] = (
            "cross-fitting disabled; inference relies on restricted nuisance complexity"
        )
    if len(roots) > 1:
        diagnostics["warning_roots"] = "multiple roots found; pilot-nearest selected"

    return Estimate(
        beta=beta, theta=float(theta), se=se_beta,
        ci=wald_interval(beta, se_beta, level), level=level, n=panel.n,
        scale="multiplicative", target=target, diagnostics=diagnostics,
    )


def _modifier_design(panel: PanelData) -> np.ndarray:
    return np.column_stack([np.ones(panel.n), panel.x])


def _modifier_system(panel, beta_vec, nu, xstar):
    """K-dimensional numerator of the vector influence function."""
    bx = xstar @ beta_vec
    theta_x = np.expm1(-bx)
    den = np.maximum(theta_x * nu.a3 + nu.a4, A4_FLOOR)
    d_vec = panel.z[:, None] * xstar
    a1_vec = nu.a1[:, None] * xstar
    a2_vec = nu.a2[:, None] * xstar
    A_vec = d_vec - (theta_x[:, None] * a1_vec + a2_vec) / den[:, None]
    B = (panel.y1 * panel.d1 - panel.y0 * panel.d0) * theta_x + panel.y1 - panel.y0
    eb = theta_x * (nu.a5 - nu.a3) + nu.a6 - nu.a4
    corr = (
        (theta_x[:, None] * (panel.y0 * panel.d0)[:, None] * d_vec
         - a1_vec * theta_x[:, None] + panel.y0[:, None] * d_vec - a2_vec) / den[:, None]
        - (theta_x[:, None] * a1_vec + a2_vec)
        * (theta_x * panel.y0 * panel.d0 - theta_x * nu.a3 + panel.y0 - nu.a4)[:, None]
        / den[:, None]**2
    )
    num = corr * eb[:, None] - A_vec * B[:, None]
    return num, A_vec, B, theta_x, den


def estimate_nonparam_modifiers(
    panel: PanelData,
    learner=None,
    n_folds: int = 5,
    seed: int = 0,
    level: float = 0.95,
    crossfit: bool = True,
    max_iter: int = 100,
    nuisances: NuisanceValues | None = None,
) -> VectorEstimate:
    """Effect-modifier extension: beta(X) = b0 + b1'X, theta(X) = e^{-beta(X)} - 1.

    Solves the K-dimensional sample mean of the vector influence function by
    damped Newton; the covariance is the sample covariance of the vector
    influence function over n.
    """
    # p = 0 is allowed: the design collapses to the intercept column and the
    # system reduces to the scalar estimator
    xstar = _modifier_design(panel)
    K = xstar.shape[1]

    try:
        theta_pilot = solve_multiplicative_nocov(panel, variance="none").theta
    except Exception:  # noqa: BLE001
        theta_pilot = 0.0
    if nuisances is None:
        nuisances = fit_nuisance_values(
            panel, theta_pilot=theta_pilot, crossfit=crossfit,
            learner=learner, seed=seed, n_folds=n_folds,
        )

    def mean_system(beta_vec):
        num, *_ = _modifier_system(panel, beta_vec, nuisances, xstar)
        return num.mean(axis=0)

    beta_vec = np.zeros(K)
    beta_vec[0] = -np.log1p(theta_pilot)
    G = mean_system(beta_vec)
    norm = np.max(np.abs(G))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        J = np.empty((K, K))
        for j in range(K):
            h = 1e-6 * (1.0 + abs(beta_vec[j]))
            bp = beta_vec.copy()
            bp[j] += h
            J[:, j] = (mean_system(bp) - G) / h
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > 1e14:
            raise RankDeficientJacobianError(f"Jacobian condition {cond:g}")
        step = np.linalg.solve(J, -G)
        lam = 1.0
        for _ in range(40):
            cand = beta_vec + lam * step
            G_new = mean_system(cand)
            if np.max(np.abs(G_new)) < norm:
                break
            lam *= 0.5
        else:
            break
        beta_vec, G = cand, G_new
        norm = np.max(np.abs(G))
        if norm < 1e-12:
            break
    scale = 1.0 + float(np.abs(panel.y1 - panel.y0).mean())
    if norm > 1e-8 * scale:
        raise NonConvergenceError(f"vector moment norm {norm:g} after {iterations} iterations")

    num, A_vec, B, theta_x, den = _modifier_system(panel, beta_vec, nuisances, xstar)
    ydd = panel.y1 * panel.d1 - panel.y0 * panel.d0
    # d theta(X) / d beta with theta(X) = exp(-beta(X)) - 1
    tgrad = -np.exp(-(xstar @ beta_vec))[:, None] * xstar
    a1_vec = nuisances.a1[:, None] * xstar
    a2_vec = nuisances.a2[:, None] * xstar
    lead = (a2_vec * nuisances.a3[:, None] - a1_vec * nuisances.a4[:, None]) / den[:, None]**2 \
        * B[:, None] + A_vec * ydd[:, None]
    C = (lead[:, :, None] * tgrad[:, None, :]).mean(axis=0)
    if np.linalg.cond(C) > 1e12:
        raise DegenerateCError("vector scaling matrix is ill-conditioned")
    phi_vec = num @ np.linalg.inv(C).T
    cov = np.cov(phi_vec.T, ddof=1) / panel.n

    return VectorEstimate(
        beta=[float(b) for b in beta_vec],
        covariance=[[float(v) for v in row] for row in np.atleast_2d(cov)],
        level=level, n=panel.n,
        diagnostics={"iterations": iterations, "moment_norm": float(norm),
                     "crossfit": bool(crossfit)},
    )


def remainder_second_order(
    panel_large: PanelData,
    oracle: NuisanceValues,
    delta: NuisanceValues,
    eps_list,
    g=None,
) -> list[tuple[float, float]]:
    """Empirical remainder R(eta, eta + eps*delta) per perturbation size.

    theta(eta) is the plug-in root of the estimator's moment equation under
    nuisance eta; R = theta(eta') - theta(eta) + mean phi(O, theta(eta'),
    eta'). Quadratic decay in eps, up to the sampling-noise floor of the
    orthogonality cancellation, is the second-order property this diagnoses.
    """
    g = g or default_g
    d_values = np.asarray(g(panel_large.x, panel_large.z), dtype=float)

    def solve_theta(nu):
        def objective(t):
            num, _, _, _ = _phi_numerator(panel_large, t, nu, d_values)
            return float(num.mean())

        lo, hi = -0.9, 3.0
        if objective(lo) * objective(hi) < 0:
            return float(brentq(objective, lo, hi, xtol=1e-13))
        roots, _ = _find_roots(objective)
        return min(roots, key=abs)

    theta_base = solve_theta(oracle)
    out = []
    for eps in eps_list:
        nu_eps = oracle.perturbed(delta, eps)
        theta_eps = solve_theta(nu_eps) if eps != 0.0 else theta_base
        phi = influence_phi(panel_large, theta_eps, nu_eps, d_values)
        out.append((float(eps), float(theta_eps - theta_base + phi.mean())))
    return out


class NonparametricEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`estimate_nonparam`."""

    def __init__(self, learner=None, n_folds=5, seed=0, level=0.95, crossfit=True,
                 target="population"):
        self.learner = learner
        self.n_folds = n_folds
        self.seed = seed
        self.level = level
        self.crossfit = crossfit
        self.target = target

    def fit(self, panel: PanelData, y=None):
        self.estimate_ = estimate_nonparam(
            panel, learner=self.learner, n_folds=self.n_folds, seed=self.seed,
            level=self.level, crossfit=self.crossfit, target=self.target,
        )
        self.beta_ = self.estimate_.beta
        self.theta_ = self.estimate_.theta
        self.se_ = self.estimate_.se
        return self


class EffectModifierEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`estimate_nonparam_modifiers`."""

    def __init__(self, learner=None, n_folds=5, seed=0, level=0.95, crossfit=True):
        self.learner = learner
        self.n_folds = n_folds
        self.seed = seed
        self.level = level
        self.crossfit = crossfit

    def fit(self, panel: PanelData, y=None):
        self.estimate_ = estimate_nonparam_modifiers(
            panel, learner=self.learner, n_folds=self.n_folds, seed=self.seed,
            level=self.level, crossfit=self.crossfit,
        )
        self.beta_ = np.asarray(self.estimate_.beta)
        return self
