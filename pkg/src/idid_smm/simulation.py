"""Monte Carlo machinery: panel data generators, a planted-truth repeated
cross-sectional generator matched to published marginal frequencies, the study
driver, and the usual calibration metrics (sqrt(n)-bias, variance ratio,
coverage).

All four panel settings share the layout: instrument Z, unmeasured confounder
U_t per period, binary exposure D_t with a logistic model, and an outcome Y_t
that is Poisson (count settings 1, 3) or Bernoulli with a log-link mean (rare
binary settings 2, 4). The average exposure effect is zero by construction in
every setting. Settings 3 and 4 add a capped-Poisson covariate X that drives
both the instrument and the outcome trend.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import brentq, least_squares, minimize
from scipy.special import expit

from .datasets import PanelData, RcsData
from .exceptions import (
    InfeasibleMarginalsError,
    InvalidProbabilityError,
    TooFewRepsError,
    TooManyFailuresError,
)
from .learners import BasisLeastSquares
from .panel_nocov import solve_multiplicative_nocov
from .panel_nonparam import estimate_nonparam
from .panel_param import MSpec, MomentSpec, estimate_param
from .repeated_cs import solve_rcs_nocov

MAX_CLIP_FRACTION = 1e-3


@dataclass(frozen=True)
class SimulationSetting:
    """One of the four panel data-generating mechanisms."""

    id: int
    outcome_kind: str  # "count" or "rare_binary"
    has_covariate: bool


SETTINGS = {
    1: SimulationSetting(1, "count", False),
    2: SimulationSetting(2, "rare_binary", False),
    3: SimulationSetting(3, "count", True),
    4: SimulationSetting(4, "rare_binary", True),
}


def _bernoulli_exp(rng, logmean, clip_counter):
    """Bernoulli draw with mean exp(logmean); means above 1 are clipped."""
    mean = np.exp(logmean)
    over = mean > 1.0
    clip_counter.append(int(over.sum()))
    return rng.binomial(1, np.minimum(mean, 1.0)).astype(float)


def generate(setting, n: int, seed) -> PanelData:
    """Draw a panel dataset of size n from one of the four settings."""
    if isinstance(setting, int):
        setting = SETTINGS[setting]
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    clip = []

    if setting.id == 1:
        z = rng.binomial(1, 0.5, n).astype(float)
        u0 = rng.normal(0.5, 1.0, n)
        d0 = rng.binomial(1, expit(1.0 - z + u0)).astype(float)
        y0 = rng.poisson(np.exp(-1.0 + 0.5 * u0 + 0.5 * z)).astype(float)
        u1 = rng.normal(0.5, 1.0, n)
        d1 = rng.binomial(1, expit(-1.0 + y0 + u1 + z)).astype(float)
        y1 = rng.poisson(np.exp(-1.0 + 0.5 * u1 + 0.5 * z)).astype(float)
        x = np.empty((n, 0))
    elif setting.id == 2:
        z = rng.binomial(1, 0.5, n).astype(float)
        u0 = rng.uniform(0.0, 1.0, n)
        d0 = rng.binomial(1, expit(-0.85 - z + u0)).astype(float)
        y0 = _bernoulli_exp(rng, -3.7 + u0 + z, clip)
        u1 = rng.uniform(0.0, 1.0, n)
        d1 = rng.binomial(1, expit(0.272 + y0 + u1 + z)).astype(float)
        y1 = _bernoulli_exp(rng, -3.9 + u1 + z, clip)
        x = np.empty((n, 0))
    elif setting.id == 3:
        xv = np.minimum(rng.poisson(0.5, n) + 0.5, 2.5)
        z = rng.binomial(1, expit(-0.5 + xv)).astype(float)
        u0 = rng.normal(0.5, 1.0, n)
        d0 = rng.binomial(1, expit(1.0 - z + u0 + xv)).astype(float)
        y0 = rng.poisson(np.exp(-1.0 + 0.5 * u0 + 0.5 * z + 0.25 * xv + 0.15 * np.sin(xv))).astype(float)
        u1 = rng.normal(0.5, 1.0, n)
        d1 = rng.binomial(1, expit(-1.0 + z + u1 + y0 + xv)).astype(float)
        y1 = rng.poisson(np.exp(-1.0 + 0.5 * u1 + 0.5 * z + 0.35 * xv + 1.70 * np.sin(xv))).astype(float)
        x = xv[:, None]
    elif setting.id == 4:
        xv = np.minimum(rng.poisson(0.5, n) + 0.5, 3.5)
        z = rng.binomial(1, expit(-0.8 + xv)).astype(float)
        u0 = rng.uniform(0.0, 1.0, n)
        d0 = rng.binomial(1, expit(-0.85 - z + u0 + xv)).astype(float)
        y0 = _bernoulli_exp(rng, -1.8 - 1.5 * u0 - 0.25 * z + 0.15 * xv + 0.15 * np.sin(xv), clip)
        u1 = rng.uniform(0.0, 1.0, n)
        d1 = rng.binomial(1, expit(0.272 + y0 + 0.5 * u1 + 0.5 * z + 0.5 * xv)).astype(float)
        y1 = _bernoulli_exp(rng, -3.0 - 1.5 * u1 - 0.25 * z + 0.35 * xv + 1.70 * np.sin(xv), clip)
        x = xv[:, None]
    else:
        raise ValueError(f"unknown setting id {setting.id}")

    if clip and sum(clip) > MAX_CLIP_FRACTION * n:
        raise InvalidProbabilityError(
            f"{sum(clip)}/{n} Bernoulli means above 1 were clipped"
        )
    names = ["x1"] if setting.has_covariate else []
    return PanelData.from_arrays(z, d0, y0, d1, y1, x, names)


@dataclass(frozen=True)
class TwoPeriodMarginals:
    """Published two-period marginal frequencies used for planted-truth data.

    Keys are the time period t in {0, 1}.
    """

    p_d: dict = field(default_factory=lambda: {0: 0.46, 1: 0.86})
    p_z_given_t: dict = field(default_factory=lambda: {0: 0.58, 1: 0.53})
    p_y_given_d1: dict = field(default_factory=lambda: {0: 0.03, 1: 0.04})
    p_y_given_d0: dict = field(default_factory=lambda: {0: 0.10, 1: 0.12})


def _solve_planted_cells(
    marg: TwoPeriodMarginals, beta: float, gamma: float = 2.0, theta2: float = -2.0,
    n0: int = 1656, n1: int = 15234,
) -> dict:
    """Solve a cell model that reproduces the marginals with beta planted.

    Exposure: P(D=1|T=t,Z=z) = expit(alpha_t + gamma*z) with alpha_t matching
    P(D_t=1) exactly; gamma controls instrument strength. Outcome
    probabilities mu_d(t,z) = P(Y=1|T=t,Z=z,D=d) are solved free-form under
    six constraints: the four marginal P(Y_t=1|D_t=d) targets, the cell-mean
    cross-product identity at theta* = exp(-beta) - 1, and a second planted
    root of the resulting quadratic at theta2. Placing theta2 below -1 keeps
    the estimable root unique among admissible values and well separated from
    degeneracy; the leftover degrees of freedom minimize the population
    delta-method variance, which is what makes the finite-sample replication
    stable.
    """
    for t in (0, 1):
        for prob in (marg.p_d[t], marg.p_z_given_t[t], marg.p_y_given_d1[t], marg.p_y_given_d0[t]):
            if not 0.0 <= prob <= 1.0:
                raise InfeasibleMarginalsError(f"marginal probability {prob} outside [0, 1]")
    theta_star = float(np.expm1(-beta))
    if abs(theta2 - theta_star) < 1e-9:
        raise InfeasibleMarginalsError("planted spurious root coincides with the truth")

    alpha, pd, w = {}, {}, {}
    for t in (0, 1):
        pz1 = marg.p_z_given_t[t]
        f = lambda a: (1 - pz1) * expit(a) + pz1 * expit(a + gamma) - marg.p_d[t]
        try:
            alpha[t] = brentq(f, -80.0 - abs(gamma), 80.0 + abs(gamma), xtol=1e-14)
        except ValueError as exc:
            raise InfeasibleMarginalsError(f"no exposure intercept matches P(D_{t}=1)") from exc
        for z in (0, 1):
            pd[t, z] = float(expit(alpha[t] + gamma * z))
        for d in (0, 1):
            ww = {z: (pz1 if z else 1 - pz1) * (pd[t, z] if d else 1 - pd[t, z]) for z in (0, 1)}
            tot = ww[0] + ww[1]
            if tot <= 0:
                raise InfeasibleMarginalsError(f"empty exposure group d={d} at t={t}")
            w[t, d] = {z: ww[z] / tot for z in (0, 1)}

    def unpack(x):
        mu, i = {}, 0
        for t in (0, 1):
            for z in (0, 1):
                mu[t, z] = {0: x[i], 1: x[i + 1]}
                i += 2
        return mu

    def equations(x):
        mu = unpack(x)
        out = []
        for t in (0, 1):
            out.append(sum(w[t, 0][z] * mu[t, z][0] for z in (0, 1)) - marg.p_y_given_d0[t])
            out.append(sum(w[t, 1][z] * mu[t, z][1] for z in (0, 1)) - marg.p_y_given_d1[t])
        E, F = {}, {}
        for t in (0, 1):
            for z in (0, 1):
                E[t, z] = (1 - pd[t, z]) * mu[t, z][0] + pd[t, z] * mu[t, z][1]
                F[t, z] = pd[t, z] * mu[t, z][1]
        c2 = F[1, 1] * F[0, 0] - F[0, 1] * F[1, 0]
        c1 = (E[1, 1] * F[0, 0] + F[1, 1] * E[0, 0]
              - E[0, 1] * F[1, 0] - F[0, 1] * E[1, 0])
        c0 = E[1, 1] * E[0, 0] - E[0, 1] * E[1, 0]
        # both planted roots; scaled up since c-coefficients are O(p^2)
        out.append(100.0 * (c2 * theta_star**2 + c1 * theta_star + c0))
        out.append(100.0 * (c2 * theta2**2 + c1 * theta2 + c0))
        return out

    def asymptotic_var(x):
        # population delta-method variance of theta-hat at the planted root,
        # used to spend the leftover design freedom on a stable replication
        mu = unpack(x)
        E, F = {}, {}
        for t in (0, 1):
            for z in (0, 1):
                E[t, z] = (1 - pd[t, z]) * mu[t, z][0] + pd[t, z] * mu[t, z][1]
                F[t, z] = pd[t, z] * mu[t, z][1]
        th = theta_star
        M = {k: E[k] + th * F[k] for k in E}
        dF = (F[1, 1] * M[0, 0] + M[1, 1] * F[0, 0]
              - F[0, 1] * M[1, 0] - M[0, 1] * F[1, 0])
        grads = {(1, 1): (M[0, 0], th * M[0, 0]), (0, 0): (M[1, 1], th * M[1, 1]),
                 (0, 1): (-M[1, 0], -th * M[1, 0]), (1, 0): (-M[0, 1], -th * M[0, 1])}
        var = 0.0
        for (t, z), (ge, gf) in grads.items():
            pz1 = marg.p_z_given_t[t]
            ncell = max((n0 if t == 0 else n1) * (pz1 if z else 1 - pz1), 1e-12)
            vy = E[t, z] * (1 - E[t, z])
            vyd = F[t, z] * (1 - F[t, z])
            cyyd = F[t, z] * (1 - E[t, z])
            var += (ge * ge * vy + 2 * ge * gf * cyyd + gf * gf * vyd) / ncell
        return var / dF**2

    x0 = []
    for t in (0, 1):
        for z in (0, 1):
            x0 += [marg.p_y_given_d0[t], marg.p_y_given_d1[t]]
    x0 = np.clip(x0, 0.02, 0.9)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = minimize(asymptotic_var, x0, method="SLSQP", bounds=[(0.01, 0.99)] * 8,
                       constraints=[{"type": "eq", "fun": equations}],
                       options={"maxiter": 500, "ftol": 1e-14})
    if np.max(np.abs(equations(res.x))) > 1e-8:
        sol = least_squares(equations, x0, bounds=(1e-4, 0.999),
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if np.max(np.abs(sol.fun)) > 1e-8:
            raise InfeasibleMarginalsError("no cell probabilities reproduce the marginals")
        res = sol
    mu = unpack(res.x)

    cells = {}
    for t in (0, 1):
        for z in (0, 1):
            cells[t, z] = {"p_d": pd[t, z],
                           "p_y": {0: float(mu[t, z][0]), 1: float(mu[t, z][1])}}
    cells["params"] = {"alpha": [float(alpha[0]), float(alpha[1])],
                       "gamma": gamma, "theta2": theta2,
                       "theta_star": theta_star}
    return cells


def planted_cell_identity_gap(marg: TwoPeriodMarginals, beta: float) -> float:
    """Exact population gap of the cell-mean identity at the planted beta.

    Uses the solved cell probabilities directly, no sampling; should be ~0.
    """
    cells = _solve_planted_cells(marg, beta)

    def m(t, z):
        cell = cells[t, z]
        out = 0.0
        for d in (0, 1):
            pd = cell["p_d"] if d else 1.0 - cell["p_d"]
            out += pd * cell["p_y"][d] * np.exp(-beta * d)
        return out

    return float(m(1, 1) * m(0, 0) - m(0, 1) * m(1, 0))


def generate_rcs_planted(
    marginals: TwoPeriodMarginals,
    beta_planted: float,
    n0: int,
    n1: int,
    seed,
) -> RcsData:
    """Two independent cross-sections whose cell probabilities match the
    published marginals and embed the planted multiplicative effect."""
    cells = _solve_planted_cells(marginals, beta_planted, n0=n0, n1=n1)
    rng = np.random.default_rng(seed)
    t = np.concatenate([np.zeros(n0), np.ones(n1)])
    z = np.empty(n0 + n1)
    d = np.empty(n0 + n1)
    y = np.empty(n0 + n1)
    for tv, sl in ((0, slice(0, n0)), (1, slice(n0, n0 + n1))):
        m = t[sl].shape[0]
        zv = rng.binomial(1, marginals.p_z_given_t[tv], m).astype(float)
        pd = np.where(zv == 1, cells[tv, 1]["p_d"], cells[tv, 0]["p_d"])
        dv = rng.binomial(1, pd).astype(float)
        py = np.empty(m)
        for zz in (0, 1):
            for dd in (0, 1):
                mask = (zv == zz) & (dv == dd)
                py[mask] = cells[tv, zz]["p_y"][dd]
        z[sl], d[sl] = zv, dv
        y[sl] = rng.binomial(1, py).astype(float)
    data = RcsData.from_arrays(z, t, d, y, np.empty((n0 + n1, 0)), [])
    object.__setattr__(data, "metadata", {"cells": {f"t{k[0]}z{k[1]}": v for k, v in cells.items()
                                                    if k != "params"},
                                          "params": cells["params"],
                                          "beta_planted": float(beta_planted)})
    return data


def metrics(records, beta_true: float, n: int):
    """(sqrt(n)-bias sample, mean variance-estimate / empirical variance, coverage)."""
    ok = [r for r in records if r.get("ok", True) and np.isfinite(r["beta"])]
    if len(ok) < 2:
        raise TooFewRepsError(f"only {len(ok)} usable replications")
    betas = np.array([r["beta"] for r in ok])
    ses = np.array([r["se"] for r in ok])
    covered = np.array([bool(r["covered"]) for r in ok])
    bias = np.sqrt(n) * (betas - beta_true)
    emp_var = float(betas.var(ddof=1))
    ratio = float(np.mean(ses**2) / emp_var) if emp_var > 0 else float("inf")
    return bias, ratio, float(covered.mean())


def _approach_fn(label: str):
    if label == "nocov":
        return lambda panel: solve_multiplicative_nocov(panel)
    if label == "A1":
        return lambda panel: estimate_param(
            panel, MSpec(basis=("1", "x1")), MomentSpec(d_basis=("1", "x1", "z")))
    if label == "A2":
        return lambda panel: estimate_param(
            panel, MSpec(basis=("1", "x1", "sin(x1)")),
            MomentSpec(d_basis=("1", "x1", "z", "sin(x1)")))
    if label == "A3":
        return lambda panel: estimate_nonparam(
            panel, learner=BasisLeastSquares(degree=2, sine=True), crossfit=False)
    raise ValueError(f"unknown approach {label!r}")


_APPROACH_IDS = {"nocov": 0, "A1": 1, "A2": 2, "A3": 3}


def _one_rep(setting_id, n, label, master_seed, rep, beta_true, level):
    seed = np.random.SeedSequence([master_seed, setting_id, n, _APPROACH_IDS[label], rep])
    panel = generate(setting_id, n, seed)
    record = {"rep": rep, "ok": True}
    try:
        est = _approach_fn(label)(panel)
        lo, hi = est.ci
        record.update(beta=float(est.beta), se=float(est.se),
                      covered=bool(lo <= beta_true <= hi))
    except Exception as exc:  # noqa: BLE001 - per-rep failures are recorded
        record.update(ok=False, beta=float("nan"), se=float("nan"),
                      covered=False, error=f"{type(exc).__name__}: {exc}")
    return record


@dataclass
class StudyReport:
    """Per-replication records plus the aggregate calibration metrics."""

    setting: int
    beta_true: float
    reps: int
    master_seed: int
    cells: list

    def as_dict(self) -> dict:
        return {"setting": self.setting, "beta_true": self.beta_true,
                "reps": self.reps, "master_seed": self.master_seed,
                "cells": self.cells}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)

    def to_csv(self, path):
        import pandas as pd

        rows = []
        for cell in self.cells:
            for rec in cell["records"]:
                rows.append({"setting": self.setting, "n": cell["n"],
                             "approach": cell["approach"], **rec})
        pd.DataFrame(rows).to_csv(path, index=False)


def run_study(
    setting: int,
    n_list,
    reps: int,
    approaches,
    master_seed: int = 0,
    parallelism: int = 1,
    beta_true: float = 0.0,
    level: float = 0.95,
) -> StudyReport:
    """Monte Carlo study over sample sizes and estimation approaches.

    Each replication draws its own RNG substream keyed by (master seed,
    setting, n, approach, rep), so reports are identical for any degree of
    parallelism. Failed replications are recorded; a cell with more than 10%
    failures aborts the study.
    """
    setting_obj = SETTINGS[setting]
    for label in approaches:
        if label in ("A1", "A2", "A3") and not setting_obj.has_covariate:
            raise ValueError(f"approach {label} needs a covariate setting")

    cells = []
    for n in n_list:
        for label in approaches:
            jobs = [(setting, int(n), label, master_seed, rep, beta_true, level)
                    for rep in range(reps)]
            if parallelism > 1:
                records = Parallel(n_jobs=parallelism)(
                    delayed(_one_rep)(*job) for job in jobs)
            else:
                records = [_one_rep(*job) for job in jobs]
            n_fail = sum(not r["ok"] for r in records)
            if n_fail > 0.1 * reps:
                raise TooManyFailuresError(
                    f"{n_fail}/{reps} failures for n={n}, approach={label}")
            bias, ratio, coverage = metrics(records, beta_true, int(n))
            cells.append({
                "n": int(n), "approach": label, "records": records,
                "n_failures": n_fail,
                "sqrt_n_bias_mean": float(bias.mean()),
                "sqrt_n_bias_sd": float(bias.std(ddof=1)),
                "variance_ratio": ratio,
                "coverage": coverage,
            })
    return StudyReport(setting=setting, beta_true=beta_true, reps=reps,
                       master_seed=master_seed, cells=cells)
