"""No-covariate estimators for the panel design.

Covers the additive Wald-type estimator built from instrument-stratum trend
contrasts and the multiplicative estimator obtained by solving the
cell-mean quadratic in theta = exp(-beta) - 1, with delta-method (M-estimation)
and bootstrap variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .datasets import PanelData
from .exceptions import (
    DegenerateQuadraticError,
    EmptyStratumError,
    NoAdmissibleRootError,
    TooManyFailuresError,
    WeakInstrumentError,
)
from .results import Estimate, wald_interval

WEAK_INSTRUMENT_TOL = 1e-12
NEAR_LINEAR_TOL = 1e-12
ROOT_RESIDUAL_TOL = 1e-10


def _stratum_trends(panel: PanelData, z: int):
    mask = panel.z == z
    if not mask.any():
        raise EmptyStratumError(f"no rows with z={z}")
    dy = panel.y1[mask] - panel.y0[mask]
    dd = panel.d1[mask] - panel.d0[mask]
    return dy, dd


def wald_additive(panel: PanelData, level: float = 0.95, target: str = "population") -> Estimate:
    """Additive-scale trend-ratio estimator; covariates, if any, are ignored.

    beta = [mean(dY|Z=1) - mean(dY|Z=0)] / [mean(dD|Z=1) - mean(dD|Z=0)],
    with a delta-method standard error over the four stratum means. The
    treated-effect target returns the same number, relabelled.
    """
    dy1, dd1 = _stratum_trends(panel, 1)
    dy0, dd0 = _stratum_trends(panel, 0)
    num = dy1.mean() - dy0.mean()
    den = dd1.mean() - dd0.mean()
    if abs(den) < WEAK_INSTRUMENT_TOL:
        raise WeakInstrumentError("exposure trends do not differ across instrument strata")
    beta = num / den

    var = 0.0
    for dy, dd in ((dy1, dd1), (dy0, dd0)):
        grad = np.array([1.0 / den, -beta / den])
        if dy.size > 1:
            cov = np.cov(np.vstack([dy, dd]), ddof=1) / dy.size
        else:
            cov = np.zeros((2, 2))
        var += grad @ cov @ grad
    se = float(np.sqrt(var))

    return Estimate(
        beta=float(beta), se=se, ci=wald_interval(beta, se, level), level=level,
        n=panel.n, scale="additive", target=target,
        diagnostics={"numerator": float(num), "denominator": float(den),
                     "variance_method": "delta"},
    )


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Coefficients of c2*theta^2 + c1*theta + c0 = 0 and the cell means.

    cell_means keys: 'E<t><z>' for E(Y_t|Z=z) and 'E<t><t><z>' for
    E(Y_t D_t|Z=z), t,z in {0,1}.
    """

    c2: float
    c1: float
    c0: float
    cell_means: dict

    @property
    def degenerate(self) -> bool:
        return self.c2 == 0.0 and self.c1 == 0.0 and self.c0 == 0.0


def _cell_means(panel: PanelData) -> dict:
    means = {}
    for z in (0, 1):
        mask = panel.z == z
        if not mask.any():
            raise EmptyStratumError(f"no rows with z={z}")
        means[f"E1{z}"] = float(panel.y1[mask].mean())
        means[f"E0{z}"] = float(panel.y0[mask].mean())
        means[f"E11{z}"] = float((panel.y1[mask] * panel.d1[mask]).mean())
        means[f"E00{z}"] = float((panel.y0[mask] * panel.d0[mask]).mean())
    return means


def quadratic_coefficients(panel: PanelData) -> QuadraticCoefficients:
    """Quadratic form of the no-covariate multiplicative moment equation.

    Derived by expanding exp(-beta*D) = 1 + theta*D (binary D) in the
    cross-product identity of instrument-stratum means.
    """
    m = _cell_means(panel)
    c2 = m["E111"] * m["E000"] - m["E110"] * m["E001"]
    c1 = m["E11"] * m["E000"] + m["E111"] * m["E00"] - m["E10"] * m["E001"] - m["E110"] * m["E01"]
    c0 = m["E11"] * m["E00"] - m["E10"] * m["E01"]
    return QuadraticCoefficients(c2=c2, c1=c1, c0=c0, cell_means=m)


def moment_lhs_rhs(coeffs: QuadraticCoefficients, theta: float) -> tuple[float, float]:
    """Both sides of the sample moment identity at a candidate theta."""
    m = coeffs.cell_means
    lhs = (m["E11"] + theta * m["E111"]) * (m["E00"] + theta * m["E000"])
    rhs = (m["E01"] + theta * m["E001"]) * (m["E10"] + theta * m["E110"])
    return lhs, rhs


def _quadratic_roots(coeffs: QuadraticCoefficients) -> list[float]:
    c2, c1, c0 = coeffs.c2, coeffs.c1, coeffs.c0
    if coeffs.degenerate:
        raise DegenerateQuadraticError("all quadratic coefficients vanish")
    if abs(c2) < NEAR_LINEAR_TOL * (abs(c1) + abs(c0)):
        if c1 == 0.0:
            raise DegenerateQuadraticError("vanishing quadratic and linear coefficients")
        return [-c0 / c1]
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0:
        raise NoAdmissibleRootError("complex roots only")
    sq = np.sqrt(disc)
    if c1 != 0.0:
        # numerically stable pair: avoids cancellation in -c1 +/- sq
        q = -0.5 * (c1 + np.copysign(sq, c1))
        roots = [q / c2, c0 / q] if q != 0.0 else [0.0, -c1 / c2]
    else:
        roots = [sq / (2 * c2), -sq / (2 * c2)]
    return sorted(float(r) for r in roots)


def _log1p_panel(panel: PanelData) -> PanelData:
    return PanelData.from_arrays(
        panel.z, panel.d0, np.log1p(panel.y0), panel.d1, np.log1p(panel.y1), panel.x,
        panel.covariate_names,
    )


def pilot_beta(panel: PanelData) -> float:
    """Consistent pilot for root discrimination: additive Wald on log1p(Y)."""
    try:
        return wald_additive(_log1p_panel(panel)).beta
    except (WeakInstrumentError, EmptyStratumError):
        return 0.0


def select_root(roots: list[float], pilot: float) -> tuple[float, str]:
    admissible = [r for r in roots if r > -1.0]
    if not admissible:
        raise NoAdmissibleRootError(f"no real root > -1 among {roots}")
    if len(admissible) == 1:
        return admissible[0], "single-admissible"
    chosen = min(admissible, key=lambda r: abs(-np.log1p(r) - pilot))
    return chosen, "pilot-nearest"


def _theta_variance(panel: PanelData, coeffs: QuadraticCoefficients, theta: float) -> float:
    """Delta method over the eight cell means (standard M-estimation)."""
    m = coeffs.cell_means
    dF_dtheta = (
        m["E111"] * (m["E00"] + theta * m["E000"])
        + m["E000"] * (m["E11"] + theta * m["E111"])
        - m["E001"] * (m["E10"] + theta * m["E110"])
        - m["E110"] * (m["E01"] + theta * m["E001"])
    )
    if dF_dtheta == 0.0:
        return float("nan")
    # gradient of F wrt the stratum means, ordered (E1z, E11z, E0z, E00z)
    grads = {
        1: np.array([
            m["E00"] + theta * m["E000"],
            theta * (m["E00"] + theta * m["E000"]),
            -(m["E10"] + theta * m["E110"]),
            -theta * (m["E10"] + theta * m["E110"]),
        ]),
        0: np.array([
            -(m["E01"] + theta * m["E001"]),
            -theta * (m["E01"] + theta * m["E001"]),
            m["E11"] + theta * m["E111"],
            theta * (m["E11"] + theta * m["E111"]),
        ]),
    }
    var_F = 0.0
    for z in (0, 1):
        mask = panel.z == z
        W = np.vstack([
            panel.y1[mask],
            panel.y1[mask] * panel.d1[mask],
            panel.y0[mask],
            panel.y0[mask] * panel.d0[mask],
        ])
        if W.shape[1] > 1:
            cov = np.cov(W, ddof=1) / W.shape[1]
        else:
            cov = np.zeros((4, 4))
        var_F += grads[z] @ cov @ grads[z]
    return float(var_F / dF_dtheta**2)


def solve_multiplicative_nocov(
    panel: PanelData,
    level: float = 0.95,
    target: str = "population",
    variance: str = "delta",
    n_boot: int = 500,
    seed: int = 0,
) -> Estimate:
    """Multiplicative-scale estimator from the cell-mean quadratic.

    The selected root must satisfy the sample moment identity to relative
    tolerance 1e-10; with two admissible roots the one nearest a log-scale
    Wald pilot wins (both roots are reported in the diagnostics).
    """
    coeffs = quadratic_coefficients(panel)
    roots = _quadratic_roots(coeffs)
    pilot = pilot_beta(panel)
    theta, rule = select_root(roots, pilot)

    lhs, rhs = moment_lhs_rhs(coeffs, theta)
    residual = abs(lhs - rhs)
    if residual > ROOT_RESIDUAL_TOL * (abs(lhs) + abs(rhs) + 1.0):
        raise NoAdmissibleRootError(
            f"selected root does not satisfy the moment identity (residual {residual:g})"
        )

    beta = float(-np.log1p(theta))
    diagnostics = {
        "roots": [float(r) for r in roots],
        "root_rule": rule,
        "pilot_beta": float(pilot),
        "moment_residual": float(residual),
        "coefficients": [coeffs.c2, coeffs.c1, coeffs.c0],
    }

    if variance == "bootstrap":
        se_beta, ci, boot_diag = bootstrap_ci(
            panel,
            lambda d: solve_multiplicative_nocov(d, level=level, variance="none").beta,
            n_boot=n_boot, seed=seed, level=level,
        )
        diagnostics["variance_method"] = "bootstrap"
        diagnostics.update(boot_diag)
    elif variance == "delta":
        var_theta = _theta_variance(panel, coeffs, theta)
        se_theta = float(np.sqrt(var_theta))
        se_beta = se_theta / (1.0 + theta)
        ci = wald_interval(beta, se_beta, level)
        diagnostics["variance_method"] = "delta"
    else:
        se_beta, ci = float("nan"), (float("nan"), float("nan"))
        diagnostics["variance_method"] = "none"

    return Estimate(
        beta=beta, theta=float(theta), se=se_beta, ci=ci, level=level,
        n=panel.n, scale="multiplicative", target=target, diagnostics=diagnostics,
    )


def bootstrap_ci(dataset, estimator_fn, n_boot: int = 500, seed: int = 0, level: float = 0.95):
    """Nonparametric bootstrap se and percentile interval.

    Replications draw independent RNG substreams from the seed, so results do
    not depend on evaluation order. Replications where the estimator raises
    are dropped and counted; more than 10% failures aborts.
    """
    if n_boot < 50:
        raise ValueError("n_boot must be >= 50")
    n = dataset.n
    children = np.random.SeedSequence(seed).spawn(n_boot)
    estimates = []
    failures = 0
    for child in children:
        rng = np.random.default_rng(child)
        idx = rng.integers(0, n, n)
        try:
            estimates.append(estimator_fn(dataset.subset(idx)))
        except Exception:  # noqa: BLE001 - resample-level isolation
            failures += 1
    if failures > 0.1 * n_boot:
        raise TooManyFailuresError(f"{failures}/{n_boot} bootstrap replications failed")
    estimates = np.asarray(estimates, dtype=float)
    se = float(estimates.std(ddof=1)) if estimates.size > 1 else 0.0
    alpha = (1.0 - level) / 2.0
    ci = (
        float(np.quantile(estimates, alpha)),
        float(np.quantile(estimates, 1.0 - alpha)),
    )
    return se, ci, {"bootstrap_n": n_boot, "bootstrap_failures": failures}


class AdditiveWaldEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`wald_additive`."""

    def __init__(self, level=0.95, target="population"):
        self.level = level
        self.target = target

    def fit(self, panel: PanelData, y=None):
        self.estimate_ = wald_additive(panel, level=self.level, target=self.target)
        self.beta_ = self.estimate_.beta
        self.se_ = self.estimate_.se
        return self


class MultiplicativeNoCovEstimator(BaseEstimator):
    """sklearn-style wrapper around :func:`solve_multiplicative_nocov`."""

    def __init__(self, level=0.95, target="population", variance="delta",
                 n_boot=500, seed=0):
        self.level = level
        self.target = target
        self.variance = variance
        self.n_boot = n_boot
        self.seed = seed

    def fit(self, panel: PanelData, y=None):
        self.estimate_ = solve_multiplicative_nocov(
            panel, level=self.level, target=self.target, variance=self.variance,
            n_boot=self.n_boot, seed=self.seed,
        )
        self.beta_ = self.estimate_.beta
        self.theta_ = self.estimate_.theta
        self.se_ = self.estimate_.se
        return self
