"""Fitting and bookkeeping of the conditional-mean nuisance functions.

The influence-function estimator needs, per observation, estimates of

    a1(x) = E{Y0 D0 g(X,Z) | X=x}     a2(x) = E{Y0 g(X,Z) | X=x}
    a3(x) = E{Y0 D0 | X=x}            a4(x) = E{Y0 | X=x}
    a5(x) = E{Y1 D1 | X=x}            a6(x) = E{Y1 | X=x}

plus the density-ratio style nuisance
lambda(x,z) = E{Y0 exp(-beta D0) | Z,X} / E{Y0 exp(-beta D0) | X}, evaluated
at a pilot beta. With cross-fitting on, each observation's values come from
models trained on the complement of its fold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import clone

from .datasets import PanelData
from .exceptions import DegenerateDenominatorError
from .learners import BasisLeastSquares, FoldAssignment, make_folds

A4_FLOOR = 1e-6
MAX_CLIP_FRACTION = 0.01


def default_g(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Minimal instrument-bearing choice g(X,Z) = Z."""
    return np.asarray(z, dtype=float)


@dataclass
class NuisanceValues:
    """Per-observation nuisance evaluations aligned with the dataset rows."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: np.ndarray
    a5: np.ndarray
    a6: np.ndarray
    lam: np.ndarray | None = None
    pt: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.a4.shape[0]

    def perturbed(self, delta: "NuisanceValues", eps: float) -> "NuisanceValues":
        """Return eta + eps * delta, component-wise on the a-functions."""
        return replace(
            self,
            a1=self.a1 + eps * delta.a1,
            a2=self.a2 + eps * delta.a2,
            a3=self.a3 + eps * delta.a3,
            a4=self.a4 + eps * delta.a4,
            a5=self.a5 + eps * delta.a5,
            a6=self.a6 + eps * delta.a6,
            diagnostics={},
        )


@dataclass(frozen=True)
class OracleNuisance:
    """Analytically known nuisance functions, for simulation use.

    Each attribute is a callable of the covariate matrix (n, p) returning an
    (n,) array; scalar settings simply broadcast constants.
    """

    a1: callable
    a2: callable
    a3: callable
    a4: callable
    a5: callable
    a6: callable

    def values(self, panel: PanelData) -> NuisanceValues:
        x = panel.x
        return NuisanceValues(
            a1=np.broadcast_to(np.asarray(self.a1(x), dtype=float), (panel.n,)).copy(),
            a2=np.broadcast_to(np.asarray(self.a2(x), dtype=float), (panel.n,)).copy(),
            a3=np.broadcast_to(np.asarray(self.a3(x), dtype=float), (panel.n,)).copy(),
            a4=np.broadcast_to(np.asarray(self.a4(x), dtype=float), (panel.n,)).copy(),
            a5=np.broadcast_to(np.asarray(self.a5(x), dtype=float), (panel.n,)).copy(),
            a6=np.broadcast_to(np.asarray(self.a6(x), dtype=float), (panel.n,)).copy(),
        )


def _fit_predict(learner, X_train, y_train, X_eval):
    model = clone(learner)
    model.fit(X_train, y_train)
    return model.predict(X_eval)


def fit_nuisance_values(
    panel: PanelData,
    theta_pilot: float = 0.0,
    g=None,
    learner=None,
    folds: FoldAssignment | None = None,
    crossfit: bool = True,
    seed: int = 0,
    n_folds: int = 5,
) -> NuisanceValues:
    """Estimate a1..a6 and lambda for every observation of ``panel``.

    With ``crossfit`` on (the default) each observation is scored by models
    trained on the complement of its fold; off, a single full-sample fit is
    used for everyone. The a4 floor guards downstream denominators: fitted
    values below 1e-6 are clipped upward, and clipping more than 1% of the
    rows is treated as a degenerate fit.
    """
    g = g or default_g
    learner = learner if learner is not None else BasisLeastSquares(degree=2)
    gval = np.asarray(g(panel.x, panel.z), dtype=float)
    if gval.shape != (panel.n,):
        raise ValueError("g(X,Z) must evaluate to an (n,) array")

    beta_pilot = -np.log1p(theta_pilot)
    w_lam = panel.y0 * np.exp(-beta_pilot * panel.d0)
    targets = {
        "a1": panel.y0 * panel.d0 * gval,
        "a2": panel.y0 * gval,
        "a3": panel.y0 * panel.d0,
        "a4": panel.y0,
        "a5": panel.y1 * panel.d1,
        "a6": panel.y1,
    }

    X = panel.x
    XZ = np.column_stack([panel.x, panel.z])
    out = {k: np.empty(panel.n) for k in targets}
    lam_num = np.empty(panel.n)
    lam_den = np.empty(panel.n)

    if crossfit:
        if folds is None:
            folds = make_folds(panel.n, n_folds, seed)
        splits = [(folds.train_index(q), folds.test_index(q)) for q in range(folds.n_folds)]
    else:
        everyone = np.arange(panel.n)
        splits = [(everyone, everyone)]

    for tr, te in splits:
        for key, y in targets.items():
            out[key][te] = _fit_predict(learner, X[tr], y[tr], X[te])
        lam_num[te] = _fit_predict(learner, XZ[tr], w_lam[tr], XZ[te])
        lam_den[te] = _fit_predict(learner, X[tr], w_lam[tr], X[te])

    n_clipped = int((out["a4"] < A4_FLOOR).sum())
    if n_clipped > MAX_CLIP_FRACTION * panel.n:
        raise DegenerateDenominatorError(
            f"a4 fell below {A4_FLOOR} on {n_clipped}/{panel.n} rows"
        )
    out["a4"] = np.maximum(out["a4"], A4_FLOOR)
    lam = lam_num / np.maximum(lam_den, A4_FLOOR)

    return NuisanceValues(
        a1=out["a1"], a2=out["a2"], a3=out["a3"], a4=out["a4"],
        a5=out["a5"], a6=out["a6"], lam=lam,
        diagnostics={
            "crossfit": bool(crossfit),
            "n_folds": folds.n_folds if crossfit else 0,
            "a4_clipped": n_clipped,
            "theta_pilot": float(theta_pilot),
            "learner": type(learner).__name__,
        },
    )
