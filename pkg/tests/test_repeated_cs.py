import numpy as np
import pytest

from idid_smm.datasets import RcsData
from idid_smm.exceptions import EmptyCellError, ExtremePropensityError
from idid_smm.panel_param import MSpec, MomentSpec
from idid_smm.repeated_cs import (
    estimate_rcs_param,
    pi_residual,
    rcs_cell_means,
    solve_rcs_nocov,
)
from idid_smm.simulation import TwoPeriodMarginals, generate_rcs_planted
from tests.conftest import random_rcs


def test_unexposed_balanced_cells_give_zero_effect():
    # Y doubles from t=0 to t=1 in both Z strata and nobody is exposed, so
    # the cross-product identity holds at beta = 0
    rcs = RcsData.from_arrays(
        z=[1, 0, 1, 0], t=[0, 0, 1, 1], d=[0, 0, 0, 0], y=[1.0, 1.0, 2.0, 2.0])
    est = solve_rcs_nocov(rcs)
    assert est.beta == 0.0
    assert "degenerate" in " ".join(est.diagnostics.get("warnings", [])) or \
        est.diagnostics.get("warning", "")


def test_empty_cell_rejected():
    rcs = RcsData.from_arrays(
        z=[1, 1, 1, 0], t=[0, 1, 1, 1], d=[0, 1, 0, 0], y=[1.0, 2.0, 1.0, 1.0])
    with pytest.raises(EmptyCellError):
        solve_rcs_nocov(rcs)


def test_cell_means_match_direct_means():
    rng = np.random.default_rng(0)
    rcs = random_rcs(rng, n=500)
    cm = rcs_cell_means(rcs)
    mask = (rcs.t == 1) & (rcs.z == 0)
    assert cm.ey[1, 0] == pytest.approx(rcs.y[mask].mean(), abs=1e-12)
    assert cm.eyd[1, 0] == pytest.approx((rcs.y * rcs.d)[mask].mean(), abs=1e-12)


def test_planted_truth_single_draw_covered():
    rcs = generate_rcs_planted(TwoPeriodMarginals(), -1.27, 1656, 15234, seed=7)
    est = solve_rcs_nocov(rcs)
    assert abs(est.beta - (-1.27)) < 3 * est.se


def test_outcome_scaling_invariance():
    rng = np.random.default_rng(1)
    rcs = random_rcs(rng, n=3000)
    scaled = RcsData.from_arrays(z=rcs.z, t=rcs.t, d=rcs.d, y=4.0 * rcs.y)
    a = solve_rcs_nocov(rcs, variance="none")
    b = solve_rcs_nocov(scaled, variance="none")
    assert a.beta == pytest.approx(b.beta, abs=1e-10)


def test_pi_residual_formula():
    rcs = RcsData.from_arrays(z=[1, 0], t=[1, 0], d=[1, 0], y=[2.0, 3.0])
    pt = np.array([0.5, 0.25])
    m = np.array([0.1, 0.2])
    pi = pi_residual(rcs, np.array([0.4]), m, pt)
    expected = np.array([
        2.0 * np.exp(-0.4) / 0.5,
        -3.0 * np.exp(0.2) / 0.75,
    ])
    assert np.allclose(pi, expected, atol=1e-12)


class TestEstimateRcsParam:
    def test_empirical_propensity_matches_cell_mean_solver(self):
        rng = np.random.default_rng(2)
        rcs = random_rcs(rng, n=4000)
        nocov = solve_rcs_nocov(rcs, variance="none")
        pt_cells = np.empty(rcs.n)
        for z in (0, 1):
            mask = rcs.z == z
            pt_cells[mask] = rcs.t[mask].mean()
        est = estimate_rcs_param(
            rcs, MSpec(basis=("1",)), MomentSpec(d_basis=("1", "z")),
            pt_values=pt_cells)
        assert est.beta == pytest.approx(nocov.beta, abs=1e-8)

    def test_pi_moment_certificate(self):
        rng = np.random.default_rng(3)
        rcs = random_rcs(rng, n=4000)
        est = estimate_rcs_param(
            rcs, MSpec(basis=("1",)), MomentSpec(d_basis=("1", "z")))
        assert est.diagnostics["moment_norm"] <= 1e-8

    def test_extreme_propensity_rejected(self):
        rng = np.random.default_rng(4)
        rcs = random_rcs(rng, n=500)
        with pytest.raises(ExtremePropensityError):
            estimate_rcs_param(
                rcs, MSpec(basis=("1",)), MomentSpec(d_basis=("1", "z")),
                pt_values=np.full(rcs.n, 0.999))

    def test_sandwich_se_positive(self):
        rng = np.random.default_rng(5)
        rcs = random_rcs(rng, n=4000)
        est = estimate_rcs_param(
            rcs, MSpec(basis=("1",)), MomentSpec(d_basis=("1", "z")))
        assert est.se > 0
        assert np.isfinite(est.ci).all()


def test_rcs_agrees_with_panel_estimate_under_random_periods():
    # one underlying panel; each subject contributes a single period chosen
    # at random, which is the design the pooled estimator assumes
    from idid_smm.panel_nocov import solve_multiplicative_nocov
    from idid_smm.simulation import generate

    panel = generate(1, 40_000, seed=51)
    rng = np.random.default_rng(52)
    t = rng.binomial(1, 0.5, panel.n).astype(float)
    rcs = RcsData.from_arrays(
        z=panel.z, t=t,
        d=np.where(t == 1, panel.d1, panel.d0),
        y=np.where(t == 1, panel.y1, panel.y0))
    pooled = solve_rcs_nocov(rcs)
    paired = solve_multiplicative_nocov(panel)
    combined_se = np.hypot(pooled.se, paired.se)
    assert abs(pooled.beta - paired.beta) < 3 * combined_se
