"""Conditional-mean learners and cross-fitting fold management.

All learners follow the fit(X, y) / predict(X) convention with X a 2-D float
array (possibly with zero columns, in which case every learner degenerates to
an intercept-only fit). Link-constrained learners keep their predictions in
range on arbitrary inputs: log-link predictions are strictly positive,
logit-link predictions stay inside (0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.neighbors import KNeighborsRegressor

from .exceptions import (
    AllCandidatesFailedError,
    InvalidTargetError,
    TooFewRowsError,
)

MAX_LINPRED = 30.0


@dataclass(frozen=True)
class FoldAssignment:
    """A balanced random partition of {0..n-1} into n_folds validation sets."""

    n: int
    n_folds: int
    fold_of: np.ndarray
    seed: int

    def train_index(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != q)

    def test_index(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == q)


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Deterministic balanced partition; fold sizes differ by at most one."""
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    if n < n_folds:
        raise TooFewRowsError(f"cannot split n={n} rows into {n_folds} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[rng.permutation(n)] = np.arange(n) % n_folds
    fold_of.setflags(write=False)
    return FoldAssignment(n=n, n_folds=n_folds, fold_of=fold_of, seed=seed)


def _with_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


class LinearMeanLearner(BaseEstimator, RegressorMixin):
    """Identity-link least squares with intercept (kind ``glm_identity``)."""

    def fit(self, X, y):
        F = _with_intercept(np.asarray(X, dtype=float))
        self.coef_, *_ = np.linalg.lstsq(F, np.asarray(y, dtype=float), rcond=None)
        return self

    def predict(self, X):
        return _with_intercept(np.asarray(X, dtype=float)) @ self.coef_


class LogLinkLearner(BaseEstimator, RegressorMixin):
    """Log-link quasi-Poisson GLM via Fisher scoring (kind ``glm_log``)."""

    def __init__(self, max_iter=100, tol=1e-10):
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        y = np.asarray(y, dtype=float)
        if (y < 0).any():
            raise InvalidTargetError("log link requires nonnegative targets")
        F = _with_intercept(np.asarray(X, dtype=float))
        beta = np.zeros(F.shape[1])
        beta[0] = np.log(max(y.mean(), 1e-12))
        for _ in range(self.max_iter):
            mu = np.exp(np.clip(F @ beta, -MAX_LINPRED, MAX_LINPRED))
            grad = F.T @ (y - mu)
            hess = (F * mu[:, None]).T @ F
            try:
                step = np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(hess, grad, rcond=None)[0]
            beta = beta + step
            if np.max(np.abs(step)) < self.tol:
                break
        self.coef_ = beta
        return self

    def predict(self, X):
        F = _with_intercept(np.asarray(X, dtype=float))
        return np.exp(np.clip(F @ self.coef_, -MAX_LINPRED, MAX_LINPRED))


class LogitLinkLearner(BaseEstimator, RegressorMixin):
    """Logit-link GLM via Fisher scoring (kind ``glm_logit``).

    Targets must lie in [0, 1]; predictions stay inside (0, 1).
    """

    def __init__(self, max_iter=100, tol=1e-10, ridge=1e-10):
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge

    def fit(self, X, y):
        y = np.asarray(y, dtype=float)
        if (y < 0).any() or (y > 1).any():
            raise InvalidTargetError("logit link requires targets in [0, 1]")
        F = _with_intercept(np.asarray(X, dtype=float))
        beta = np.zeros(F.shape[1])
        for _ in range(self.max_iter):
            p = _expit_clipped(F @ beta)
            w = p * (1 - p)
            grad = F.T @ (y - p)
            hess = (F * w[:, None]).T @ F + self.ridge * np.eye(F.shape[1])
            step = np.linalg.solve(hess, grad)
            # halve runaway steps; separation can otherwise blow up
            if np.max(np.abs(step)) > 10.0:
                step = step * (10.0 / np.max(np.abs(step)))
            beta = beta + step
            if np.max(np.abs(step)) < self.tol:
                break
        self.coef_ = beta
        return self

    def predict(self, X):
        F = _with_intercept(np.asarray(X, dtype=float))
        return _expit_clipped(F @ self.coef_)


def _expit_clipped(eta):
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -MAX_LINPRED, MAX_LINPRED)))


class BasisLeastSquares(BaseEstimator, RegressorMixin):
    """Least squares on a polynomial + sine basis (kind ``basis_ls``).

    Rank-deficient designs fall back to a small ridge penalty; the fallback is
    recorded on the fitted object rather than raised.
    """

    def __init__(self, degree=2, sine=True, ridge=1e-8):
        self.degree = degree
        self.sine = sine
        self.ridge = ridge

    def _basis(self, X):
        X = np.asarray(X, dtype=float)
        cols = [np.ones(X.shape[0])]
        for j in range(X.shape[1]):
            for k in range(1, self.degree + 1):
                cols.append(X[:, j] ** k)
            if self.sine:
                cols.append(np.sin(X[:, j]))
        return np.column_stack(cols)

    def fit(self, X, y):
        F = self._basis(X)
        y = np.asarray(y, dtype=float)
        coef, _, rank, _ = np.linalg.lstsq(F, y, rcond=None)
        self.ridge_fallback_ = rank < F.shape[1]
        if self.ridge_fallback_:
            gram = F.T @ F + self.ridge * np.eye(F.shape[1])
            coef = np.linalg.solve(gram, F.T @ y)
        self.coef_ = coef
        return self

    def predict(self, X):
        return self._basis(X) @ self.coef_


class KnnLearner(BaseEstimator, RegressorMixin):
    """k-nearest-neighbour conditional mean (kind ``knn``)."""

    def __init__(self, k=50):
        self.k = k

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.shape[1] == 0:
            self.mean_ = y.mean()
            self.inner_ = None
            return self
        self.mean_ = None
        self.inner_ = KNeighborsRegressor(n_neighbors=min(self.k, X.shape[0]))
        self.inner_.fit(X, y)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if self.inner_ is None:
            return np.full(X.shape[0], self.mean_)
        return self.inner_.predict(X)


class StackedLearner(BaseEstimator, RegressorMixin):
    """Convex stack of candidate learners (super-learner analog).

    Weights come from nonnegative least squares on cross-validated
    predictions and are normalised to sum to one. Candidates whose fit fails
    are dropped with a recorded warning; only an empty surviving set raises.
    """

    def __init__(self, candidates=None, n_folds=5, seed=0):
        self.candidates = candidates
        self.n_folds = n_folds
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        candidates = list(self.candidates or [])
        if len(candidates) < 2:
            raise ValueError("stacking needs at least 2 candidates")
        folds = make_folds(X.shape[0], self.n_folds, self.seed)
        self.dropped_ = []
        cv_preds, survivors = [], []
        for cand in candidates:
            pred = np.empty_like(y)
            try:
                for q in range(folds.n_folds):
                    tr, te = folds.train_index(q), folds.test_index(q)
                    model = clone(cand)
                    model.fit(X[tr], y[tr])
                    pred[te] = model.predict(X[te])
                if not np.isfinite(pred).all():
                    raise FloatingPointError("non-finite CV predictions")
            except Exception as exc:  # noqa: BLE001 - candidate isolation
                self.dropped_.append(f"{type(cand).__name__}: {exc}")
                continue
            cv_preds.append(pred)
            survivors.append(cand)
        if not survivors:
            raise AllCandidatesFailedError("; ".join(self.dropped_))
        P = np.column_stack(cv_preds)
        if len(survivors) == 1:
            weights = np.array([1.0])
        else:
            weights, _ = nnls(P, y)
            if weights.sum() <= 0:
                weights = np.ones(len(survivors))
            weights = weights / weights.sum()
            # normalising can cost accuracy; never do worse than the best
            # single candidate
            proposals = [weights] + [
                np.eye(len(survivors))[j] for j in range(len(survivors))
            ]
            losses = [np.mean((P @ w - y) ** 2) for w in proposals]
            weights = proposals[int(np.argmin(losses))]
        self.weights_ = weights
        self.cv_loss_ = float(np.mean((P @ weights - y) ** 2))
        self.models_ = [clone(c).fit(X, y) for c in survivors]
        return self

    def predict(self, X):
        preds = np.column_stack([m.predict(X) for m in self.models_])
        return preds @ self.weights_


_LEARNER_KINDS = {
    "glm_identity": lambda cfg: LinearMeanLearner(),
    "glm_log": lambda cfg: LogLinkLearner(),
    "glm_logit": lambda cfg: LogitLinkLearner(),
    "basis_ls": lambda cfg: BasisLeastSquares(
        degree=cfg.get("degree", 2), sine=cfg.get("sine", True)
    ),
    "knn": lambda cfg: KnnLearner(k=cfg.get("k", 50)),
}


def learner_from_config(config: dict):
    """Build a learner from a JSON-style config: {"kind": ..., ...}."""
    kind = config.get("kind")
    if kind == "stacked":
        candidates = [learner_from_config(c) for c in config.get("candidates", [])]
        return StackedLearner(
            candidates=candidates,
            n_folds=config.get("n_folds", 5),
            seed=config.get("seed", 0),
        )
    if kind not in _LEARNER_KINDS:
        raise ValueError(f"unknown learner kind {kind!r}")
    return _LEARNER_KINDS[kind](config)


def out_of_fold_loss(learner, X, y, folds: FoldAssignment) -> float:
    """Mean squared error of fold-held-out predictions."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    pred = np.empty_like(y)
    for q in range(folds.n_folds):
        tr, te = folds.train_index(q), folds.test_index(q)
        model = clone(learner)
        model.fit(X[tr], y[tr])
        pred[te] = model.predict(X[te])
    return float(np.mean((pred - y) ** 2))
