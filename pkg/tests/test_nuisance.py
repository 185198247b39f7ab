import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from idid_smm.datasets import PanelData
from idid_smm.exceptions import DegenerateDenominatorError
from idid_smm.nuisance import NuisanceValues, OracleNuisance, fit_nuisance_values
from idid_smm.simulation import generate
from tests.conftest import random_panel


def test_empty_covariates_reduce_to_sample_means():
    panel = random_panel(np.random.default_rng(0), n=500)
    nu = fit_nuisance_values(panel, theta_pilot=0.0, crossfit=False)
    assert np.allclose(nu.a4, panel.y0.mean(), atol=1e-10)
    assert np.allclose(nu.a3, (panel.y0 * panel.d0).mean(), atol=1e-10)
    assert np.allclose(nu.a1, (panel.y0 * panel.d0 * panel.z).mean(), atol=1e-10)
    assert np.allclose(nu.a6, panel.y1.mean(), atol=1e-10)


def test_constant_g_collapses_paired_nuisances():
    panel = generate(3, 2000, seed=4)
    nu = fit_nuisance_values(
        panel, theta_pilot=0.0, g=lambda x, z: np.ones(len(z)), crossfit=False)
    assert np.allclose(nu.a1, nu.a3, atol=1e-10)
    assert np.allclose(nu.a2, nu.a4, atol=1e-10)


def test_setting1_a4_matches_integrated_mean():
    # E(Y0) = E exp(-1 + 0.5 U + 0.5 Z), U ~ Normal(0.5, 1), Z ~ Bernoulli(0.5)
    panel = generate(1, 100_000, seed=12)
    target = 0.5 * sum(
        quad(lambda u, zz=z: np.exp(-1 + 0.5 * u + 0.5 * zz) * norm.pdf(u, 0.5, 1),
             -10, 10)[0]
        for z in (0, 1)
    )
    nu = fit_nuisance_values(panel, theta_pilot=0.0, crossfit=False)
    se = panel.y0.std(ddof=1) / np.sqrt(panel.n)
    assert abs(nu.a4[0] - target) < 3 * se


def test_zero_outcome_denominator_is_degenerate():
    n = 200
    panel = PanelData.from_arrays(
        z=np.tile([0, 1], n // 2), d0=np.tile([0, 1], n // 2),
        y0=np.zeros(n), d1=np.tile([1, 0], n // 2), y1=np.ones(n))
    with pytest.raises(DegenerateDenominatorError):
        fit_nuisance_values(panel, theta_pilot=0.0, crossfit=False)


def test_oracle_nuisance_broadcasts_scalars():
    panel = random_panel(np.random.default_rng(1), n=50)
    oracle = OracleNuisance(
        a1=lambda x: 0.1, a2=lambda x: 0.2, a3=lambda x: 0.3,
        a4=lambda x: 0.4, a5=lambda x: 0.5, a6=lambda x: 0.6)
    nu = oracle.values(panel)
    assert nu.n == 50
    assert np.all(nu.a4 == 0.4)


def test_perturbed_is_linear_in_eps():
    rng = np.random.default_rng(2)
    base = NuisanceValues(*[rng.uniform(0.5, 1.5, 30) for _ in range(6)])
    delta = NuisanceValues(*[rng.normal(0, 1, 30) for _ in range(6)])
    same = base.perturbed(delta, 0.0)
    assert np.array_equal(same.a2, base.a2)
    shifted = base.perturbed(delta, 0.25)
    assert np.allclose(shifted.a5, base.a5 + 0.25 * delta.a5)


def test_crossfit_scores_rows_out_of_fold():
    panel = generate(3, 1000, seed=6)
    nu_cf = fit_nuisance_values(panel, theta_pilot=0.0, crossfit=True, seed=3)
    nu_full = fit_nuisance_values(panel, theta_pilot=0.0, crossfit=False)
    # fold-held-out fits must differ from the full-sample fit, but not by much
    assert not np.allclose(nu_cf.a4, nu_full.a4)
    assert np.corrcoef(nu_cf.a4, nu_full.a4)[0, 1] > 0.99
