"""Estimators for the repeated cross-sectional design.

Each subject is observed at a single time point T, so trends are built from
(T, Z) cell means instead of within-subject differences. Two estimators are
provided: a no-covariate root solve of the cell-mean cross-product identity

    E(Y e^{-beta D} | T=1,Z=1) * E(Y e^{-beta D} | T=0,Z=0)
        = E(Y e^{-beta D} | T=0,Z=1) * E(Y e^{-beta D} | T=1,Z=0)

and a parametric-m moment estimator built on the residual

    pi = T*Y*e^{-beta(X) D} / pT(X,Z) - (1-T)*Y*e^{-beta(X) D + m(X)} / (1 - pT(X,Z))

with pT(X,Z) = P(T=1 | Z, X) fitted by a logistic GLM on (1, X, Z) by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .basis import basis_matrix
from .datasets import RcsData
from .exceptions import (
    EmptyCellError,
    ExtremePropensityError,
    NonConvergenceError,
    ResidualOverflowError,
)
from .learners import LogitLinkLearner
from .panel_nocov import (
    QuadraticCoefficients,
    _quadratic_roots,
    bootstrap_ci,
    select_root,
)
from .panel_param import MSpec, MomentSpec, _newton_solve, _numeric_jacobian, _split_theta
from .results import Estimate, wald_interval

PT_FLOOR = 1e-3
MAX_EXTREME_FRACTION = 0.1
PI_MOMENT_TOL = 1e-8
MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class RcsCellMeans:
    """Within-cell sample means indexed by (t, z); M(theta) is linear for binary D."""

    ey: dict
    eyd: dict
    ed: dict
    n: dict

    def m(self, theta: float, t: int, z: int) -> float:
        return self.ey[t, z] + theta * self.eyd[t, z]


def rcs_cell_means(rcs: RcsData) -> RcsCellMeans:
    ey, eyd, ed, n = {}, {}, {}, {}
    for t in (0, 1):
        for z in (0, 1):
            mask = (rcs.t == t) & (rcs.z == z)
            if not mask.any():
                raise EmptyCellError(f"no rows with t={t}, z={z}")
            ey[t, z] = float(rcs.y[mask].mean())
            eyd[t, z] = float((rcs.y[mask] * rcs.d[mask]).mean())
            ed[t, z] = float(rcs.d[mask].mean())
            n[t, z] = int(mask.sum())
    return RcsCellMeans(ey=ey, eyd=eyd, ed=ed, n=n)


def _rcs_coefficients(cells: RcsCellMeans) -> QuadraticCoefficients:
    ey, eyd = cells.ey, cells.eyd
    c2 = eyd[1, 1] * eyd[0, 0] - eyd[0, 1] * eyd[1, 0]
    c1 = (ey[1, 1] * eyd[0, 0] + eyd[1, 1] * ey[0, 0]
          - ey[0, 1] * eyd[1, 0] - eyd[0, 1] * ey[1, 0])
    c0 = ey[1, 1] * ey[0, 0] - ey[0, 1] * ey[1, 0]
    return QuadraticCoefficients(c2=c2, c1=c1, c0=c0, cell_means={})


def _rcs_pilot(rcs: RcsData) -> float:
    """Additive trend-in-trends contrast on log1p(Y), for root discrimination."""
    ly = np.log1p(np.maximum(rcs.y, -0.5)) if (rcs.y < 0).any() else np.log1p(rcs.y)
    num = den = 0.0
    for z, sign in ((1, 1.0), (0, -1.0)):
        for t, tsign in ((1, 1.0), (0, -1.0)):
            mask = (rcs.t == t) & (rcs.z == z)
            if not mask.any():
                return 0.0
            num += sign * tsign * float(ly[mask].mean())
            den += sign * tsign * float(rcs.d[mask].mean())
    return num / den if abs(den) > 1e-12 else 0.0


def _rcs_theta_variance(rcs: RcsData, cells: RcsCellMeans, theta: float) -> float:
    """Delta method over the eight independent cell means of (Y, YD)."""
    M = {(t, z): cells.m(theta, t, z) for t in (0, 1) for z in (0, 1)}
    dF_dtheta = (cells.eyd[1, 1] * M[0, 0] + M[1, 1] * cells.eyd[0, 0]
                 - cells.eyd[0, 1] * M[1, 0] - M[0, 1] * cells.eyd[1, 0])
    if abs(dF_dtheta) < 1e-12:
        return float("nan")
    grads = {
        (1, 1): (M[0, 0], theta * M[0, 0]),
        (0, 0): (M[1, 1], theta * M[1, 1]),
        (0, 1): (-M[1, 0], -theta * M[1, 0]),
        (1, 0): (-M[0, 1], -theta * M[0, 1]),
    }
    var = 0.0
    for (t, z), (ge, gf) in grads.items():
        mask = (rcs.t == t) & (rcs.z == z)
        w = np.column_stack([rcs.y[mask], rcs.y[mask] * rcs.d[mask]])
        if w.shape[0] < 2:
            return float("nan")
        cov = np.cov(w.T, ddof=1) / w.shape[0]
        g = np.array([ge, gf])
        var += float(g @ np.atleast_2d(cov) @ g)
    return var / dF_dtheta**2


def solve_rcs_nocov(
    rcs: RcsData,
    level: float = 0.95,
    target: str = "population",
    variance: str = "delta",
    n_boot: int = 200,
    seed: int = 0,
) -> Estimate:
    """No-covariate multiplicative estimator from (T, Z) cell means.

    Binary exposure reduces the cell-mean cross-product identity to a
    quadratic in theta = exp(-beta) - 1; admissible roots (> -1) are
    discriminated by proximity to an additive pilot on log1p(Y).
    """
    cells = rcs_cell_means(rcs)
    coeffs = _rcs_coefficients(cells)
    diagnostics = {"c2": coeffs.c2, "c1": coeffs.c1, "c0": coeffs.c0,
                   "cells_n": {f"t{t}z{z}": cells.n[t, z] for t in (0, 1) for z in (0, 1)}}

    scale = max(abs(v) for v in cells.ey.values()) ** 2 + 1e-300
    if max(abs(coeffs.c2), abs(coeffs.c1), abs(coeffs.c0)) <= 1e-12 * scale:
        # identity holds for every theta; report the null with no precision claim
        diagnostics["warning"] = "moment identity degenerate; effect unidentified, null reported"
        return Estimate(beta=0.0, theta=0.0, se=float("nan"),
                        ci=(float("nan"), float("nan")), level=level, n=rcs.n,
                        scale="multiplicative", target=target, diagnostics=diagnostics)

    pilot = _rcs_pilot(rcs)
    roots = _quadratic_roots(coeffs)
    theta, rule = select_root(roots, pilot)
    diagnostics.update(roots=roots, root_rule=rule, pilot=pilot)

    lhs = cells.m(theta, 1, 1) * cells.m(theta, 0, 0)
    rhs = cells.m(theta, 0, 1) * cells.m(theta, 1, 0)
    if abs(lhs - rhs) > 1e-10 * (abs(lhs) + abs(rhs) + 1.0):
        raise NonConvergenceError(f"root certificate failed: |{lhs} - {rhs}|")

    beta = float(-np.log1p(theta))
    if variance == "bootstrap":
        se, ci = bootstrap_ci(
            rcs, lambda data: solve_rcs_nocov(data, level=level, variance="none").beta,
            n_boot=n_boot, seed=seed, level=level,
        )
        diagnostics["variance_method"] = "bootstrap"
    elif variance == "none":
        se, ci = float("nan"), (float("nan"), float("nan"))
    else:
        var_theta = _rcs_theta_variance(rcs, cells, theta)
        se = float(np.sqrt(var_theta) / (1.0 + theta))
        ci = wald_interval(beta, se, level)
        diagnostics["variance_method"] = "delta"

    return Estimate(beta=beta, theta=float(theta), se=se, ci=ci, level=level,
                    n=rcs.n, scale="multiplicative", target=target,
                    diagnostics=diagnostics)


def pi_residual(rcs: RcsData, beta: np.ndarray, m_values: np.ndarray, pt: np.ndarray) -> np.ndarray:
    """pi = T*Y*e^{-beta(X)D}/pT - (1-T)*Y*e^{-beta(X)D + m(X)}/(1-pT)."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    bx = np.full(rcs.n, beta[0])
    if beta.size > 1:
        bx = bx + rcs.x @ beta[1:]
    e1 = -bx * rcs.d
    e0 = -bx * rcs.d + m_values
    if np.max(np.abs(e1), initial=0.0) > MAX_EXPONENT or np.max(np.abs(e0), initial=0.0) > MAX_EXPONENT:
        raise ResidualOverflowError("pi residual exponent exceeds 700")
    return rcs.t * rcs.y * np.exp(e1) / pt - (1 - rcs.t) * rcs.y * np.exp(e0) / (1 - pt)


def _check_propensity(pt: np.ndarray, diagnostics: dict) -> np.ndarray:
    extreme = (pt <= PT_FLOOR) | (pt >= 1.0 - PT_FLOOR)
    frac = float(extreme.mean())
    if frac > MAX_EXTREME_FRACTION:
        raise ExtremePropensityError(
            f"{frac:.1%} of fitted P(T=1|Z,X) at or beyond [{PT_FLOOR}, {1 - PT_FLOOR}]"
        )
    if extreme.any():
        diagnostics["warning_propensity"] = (
            f"{int(extreme.sum())} propensity values clipped to [{PT_FLOOR}, {1 - PT_FLOOR}]"
        )
    return np.clip(pt, PT_FLOOR, 1.0 - PT_FLOOR)


def estimate_rcs_param(
    rcs: RcsData,
    m_spec: MSpec,
    d_spec: MomentSpec,
    pt_learner=None,
    level: float = 0.95,
    target: str = "population",
    pt_values: np.ndarray | None = None,
) -> Estimate:
    """Moment estimator for the repeated cross-sectional design.

    Solves mean{d(X,Z) * pi} = 0 for (beta, gamma) with the fitted propensity
    plugged in. When the propensity comes from the default logistic GLM its
    score equations mean{s(X,Z)*(T - pT)} = 0 with s = (1, X, Z) are stacked
    into the sandwich so the variance accounts for estimating pT; a
    user-supplied ``pt_values`` array is treated as known instead.
    """
    diagnostics: dict = {}
    XZ = np.column_stack([rcs.x, rcs.z]) if rcs.p else rcs.z[:, None].astype(float)

    alpha = None
    if pt_values is not None:
        pt_raw = np.asarray(pt_values, dtype=float)
        if pt_raw.shape != (rcs.n,):
            raise ValueError("pt_values must be an (n,) array")
        diagnostics["propensity"] = "supplied"
    else:
        learner = pt_learner if pt_learner is not None else LogitLinkLearner()
        learner.fit(XZ, rcs.t.astype(float))
        pt_raw = np.asarray(learner.predict(XZ), dtype=float)
        alpha = getattr(learner, "coef_", None)
        diagnostics["propensity"] = type(learner).__name__
    pt = _check_propensity(pt_raw, diagnostics)

    m_design = basis_matrix(m_spec.basis, rcs.x, rcs.z) if m_spec.dim else np.empty((rcs.n, 0))
    d_matrix = basis_matrix(d_spec.d_basis, rcs.x, rcs.z)
    dim = 1 + m_spec.dim
    just_identified = d_spec.dim == dim

    def terms(theta):
        beta_vec, gamma = _split_theta(theta, 1)
        m_values = m_design @ gamma if gamma.size else np.zeros(rcs.n)
        return d_matrix * pi_residual(rcs, beta_vec, m_values, pt)[:, None]

    def fun(theta):
        return terms(theta).mean(axis=0)

    starts = [np.zeros(dim)]
    try:
        start2 = np.zeros(dim)
        start2[0] = solve_rcs_nocov(rcs, variance="none").beta
        starts.append(start2)
    except Exception:  # noqa: BLE001 - pilot is best-effort
        pass

    best = None
    for theta0 in starts:
        try:
            theta, G, trace = _newton_solve(fun, theta0, just_identified)
        except Exception:  # noqa: BLE001 - try the next start
            continue
        norm = np.max(np.abs(G))
        if best is None or norm < best[1]:
            best = (theta, norm, trace)
        if norm <= PI_MOMENT_TOL:
            break
    if best is None:
        raise NonConvergenceError("all starts failed for the pi-moment system")
    theta, norm, trace = best
    if norm > PI_MOMENT_TOL:
        raise NonConvergenceError(f"pi moment norm {norm:g} above 1e-8; trace {trace[-5:]}")

    pi_terms = terms(theta)
    if alpha is not None:
        score_basis = np.column_stack([np.ones(rcs.n), XZ])
        n_alpha = score_basis.shape[1]

        def stacked_mean(full):
            th, al = full[:dim], full[dim:]
            lin = np.clip(score_basis @ al, -MAX_EXPONENT, MAX_EXPONENT)
            pt_al = np.clip(1.0 / (1.0 + np.exp(-lin)), PT_FLOOR, 1.0 - PT_FLOOR)
            beta_vec, gamma = _split_theta(th, 1)
            m_values = m_design @ gamma if gamma.size else np.zeros(rcs.n)
            pi = pi_residual(rcs, beta_vec, m_values, pt_al)
            top = (d_matrix * pi[:, None]).mean(axis=0)
            bottom = (score_basis * (rcs.t - pt_al)[:, None]).mean(axis=0)
            return np.concatenate([top, bottom])

        full = np.concatenate([theta, np.asarray(alpha, dtype=float)])
        score_terms = score_basis * (rcs.t - pt)[:, None]
        all_terms = np.column_stack([pi_terms, score_terms])
        bread = _numeric_jacobian(stacked_mean, full)
        meat = np.cov(all_terms.T, ddof=1)
        bread_inv = np.linalg.pinv(bread)
        vcov_full = bread_inv @ np.atleast_2d(meat) @ bread_inv.T / rcs.n
        vcov = vcov_full[:dim, :dim]
        diagnostics["variance_method"] = "sandwich-stacked"
        diagnostics["n_alpha"] = int(n_alpha)
    else:
        bread = _numeric_jacobian(fun, theta)
        meat = np.cov(pi_terms.T, ddof=1) if dim > 1 else np.atleast_2d(np.var(pi_terms, ddof=1))
        bread_inv = np.linalg.pinv(bread)
        vcov = bread_inv @ np.atleast_2d(meat) @ bread_inv.T / rcs.n
        diagnostics["variance_method"] = "sandwich-plugin"
        diagnostics["warning"] = "propensity treated as known; variance may be off"

    beta = float(theta[0])
    se = float(np.sqrt(max(vcov[0, 0], 0.0)))
    diagnostics.update(
        theta=[float(v) for v in theta],
        gamma=[float(v) for v in theta[1:]],
        vcov=[[float(v) for v in row] for row in np.atleast_2d(vcov)],
        moment_norm=float(norm),
        iterations=len(trace) - 1,
        just_identified=just_identified,
    )
    if not just_identified:
        diagnostics["warning_identification"] = "system not just-identified; least-squares moment solve"

    return Estimate(beta=beta, theta=float(np.expm1(-beta)), se=se,
                    ci=wald_interval(beta, se, level), level=level, n=rcs.n,
                    scale="multiplicative", target=target, diagnostics=diagnostics)


class RcsNoCovEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`solve_rcs_nocov`."""

    def __init__(self, level=0.95, target="population", variance="delta",
                 n_boot=200, seed=0):
        self.level = level
        self.target = target
        self.variance = variance
        self.n_boot = n_boot
        self.seed = seed

    def fit(self, rcs: RcsData, y=None):
        self.estimate_ = solve_rcs_nocov(
            rcs, level=self.level, target=self.target, variance=self.variance,
            n_boot=self.n_boot, seed=self.seed,
        )
        self.beta_ = self.estimate_.beta
        self.se_ = self.estimate_.se
        return self


class RcsParametricEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`estimate_rcs_param`."""

    def __init__(self, m_basis=("1",), d_basis=("1", "z"), level=0.95,
                 target="population"):
        self.m_basis = m_basis
        self.d_basis = d_basis
        self.level = level
        self.target = target

    def fit(self, rcs: RcsData, y=None):
        self.estimate_ = estimate_rcs_param(
            rcs,
            m_spec=MSpec(basis=tuple(self.m_basis)),
            d_spec=MomentSpec(d_basis=tuple(self.d_basis)),
            level=self.level,
            target=self.target,
        )
        self.beta_ = self.estimate_.beta
        self.se_ = self.estimate_.se
        return self
