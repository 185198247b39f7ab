import numpy as np
import pytest

from idid_smm.basis import basis_matrix
from idid_smm.datasets import PanelData
from idid_smm.panel_nocov import solve_multiplicative_nocov
from idid_smm.panel_param import (
    MSpec,
    MomentSpec,
    estimate_param,
    misspecified_fit_a1,
    residual_epsilon,
)
from idid_smm.simulation import generate
from tests.conftest import random_panel


def exact_model_panel(seed=0, n=3000, beta=0.3, g0=0.2, g1=0.1):
    """y1 constructed so the moment residual is identically zero at the
    generating parameters: y1 = y0 * exp(beta*(d1 - d0) + m(x))."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 2, n)[:, None]
    z = rng.binomial(1, 0.5, n).astype(float)
    d0 = rng.binomial(1, 0.3 + 0.2 * z).astype(float)
    d1 = rng.binomial(1, 0.3 + 0.4 * z).astype(float)
    y0 = rng.exponential(1.0, n) + 0.2
    m = g0 + g1 * x[:, 0]
    y1 = y0 * np.exp(beta * (d1 - d0) + m)
    return PanelData.from_arrays(z=z, d0=d0, y0=y0, d1=d1, y1=y1, x=x,
                                 covariate_names=("x1",))


class TestResidualEpsilon:
    def test_zero_beta_equal_outcomes(self):
        panel = random_panel(np.random.default_rng(0), n=20)
        same = PanelData.from_arrays(z=panel.z, d0=panel.d0, y0=panel.y0,
                                     d1=panel.d1, y1=panel.y0)
        eps = residual_epsilon(same, np.array([0.0]), np.zeros(same.n))
        assert np.allclose(eps, 0.0, atol=1e-14)

    def test_unexposed_rows_reduce_to_difference(self):
        panel = PanelData.from_arrays(z=[1, 0], d0=[0, 0], y0=[1.0, 2.0],
                                      d1=[0, 0], y1=[3.0, 5.0])
        eps = residual_epsilon(panel, np.array([0.7]), np.zeros(2))
        assert np.allclose(eps, [2.0, 3.0], atol=1e-14)

    def test_exact_cancellation(self):
        panel = PanelData.from_arrays(z=[1], d0=[0], y0=[1.0], d1=[1], y1=[2.0])
        eps = residual_epsilon(panel, np.array([np.log(2.0)]), np.zeros(1))
        assert eps[0] == pytest.approx(0.0, abs=1e-14)


class TestEstimateParam:
    def test_matches_quadratic_without_covariates(self):
        panel = generate(1, 5000, seed=23)
        quad = solve_multiplicative_nocov(panel, variance="none")
        # free trend constant plus the instrument moment pins the same root
        est = estimate_param(panel, MSpec(basis=("1",)),
                             MomentSpec(d_basis=("1", "z")))
        assert est.beta == pytest.approx(quad.beta, abs=1e-8)

    def test_recovers_exact_model_parameters(self):
        panel = exact_model_panel()
        est = estimate_param(panel, MSpec(basis=("1", "x1")),
                             MomentSpec(d_basis=("1", "x1", "z")))
        assert est.beta == pytest.approx(0.3, abs=1e-8)
        gamma = est.diagnostics["gamma"]
        assert gamma[0] == pytest.approx(0.2, abs=1e-8)
        assert gamma[1] == pytest.approx(0.1, abs=1e-8)

    def test_moment_certificate(self):
        panel = generate(3, 4000, seed=24)
        m_spec = MSpec(basis=("1", "x1", "sin(x1)"))
        d_spec = MomentSpec(d_basis=("1", "x1", "z", "sin(x1)"))
        est = estimate_param(panel, m_spec, d_spec)
        theta_hat = np.concatenate([[est.beta], est.diagnostics["gamma"]])
        m_design = basis_matrix(m_spec.basis, panel.x, panel.z)
        d_matrix = basis_matrix(d_spec.d_basis, panel.x, panel.z)
        eps = residual_epsilon(panel, theta_hat[:1], m_design @ theta_hat[1:])
        moment = (d_matrix * eps[:, None]).mean(axis=0)
        scale = 1.0 + np.abs(d_matrix * eps[:, None]).mean(axis=0).max()
        assert np.max(np.abs(moment)) <= 1e-8 * scale

    def test_d_basis_permutation_invariance(self):
        panel = generate(3, 4000, seed=25)
        m_spec = MSpec(basis=("1", "x1"))
        a = estimate_param(panel, m_spec, MomentSpec(d_basis=("1", "x1", "z")))
        b = estimate_param(panel, m_spec, MomentSpec(d_basis=("z", "1", "x1")))
        assert a.beta == pytest.approx(b.beta, abs=1e-10)

    def test_sandwich_se_positive(self):
        panel = generate(1, 5000, seed=26)
        est = estimate_param(panel, MSpec(basis=("1",)),
                             MomentSpec(d_basis=("1", "z")))
        assert est.se > 0
        assert np.isfinite(est.ci).all()


def test_misspecified_wrapper_coincides_when_trend_linear():
    panel = exact_model_panel(seed=5)
    a = misspecified_fit_a1(panel)
    b = estimate_param(panel, MSpec(basis=("1", "x1")),
                       MomentSpec(d_basis=("1", "x1", "z")))
    assert a.beta == pytest.approx(b.beta, abs=1e-10)
