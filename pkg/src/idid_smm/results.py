"""Result containers shared by all estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.stats import norm


def wald_interval(center: float, se: float, level: float) -> tuple[float, float]:
    zcrit = norm.ppf(0.5 + level / 2.0)
    return (center - zcrit * se, center + zcrit * se)


@dataclass
class Estimate:
    """Point estimate on the beta scale with Wald inference.

    ``beta`` is a log-ratio for multiplicative-scale estimation and a
    difference for additive-scale estimation. ``theta`` carries the
    transformed multiplicative effect exp(-beta) - 1 where applicable.
    """

    beta: float
    se: float
    ci: tuple[float, float]
    level: float
    n: int
    scale: str
    target: str = "population"
    theta: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scale == "multiplicative" and self.theta is not None:
            if not self.theta > -1:
                raise ValueError("theta must exceed -1")
            if not math.isclose(
                self.beta, -math.log1p(self.theta), rel_tol=1e-9, abs_tol=1e-12
            ):
                raise ValueError("beta and theta are inconsistent")

    def as_dict(self) -> dict:
        return {
            "beta": self.beta,
            "theta": self.theta,
            "se": self.se,
            "ci": list(self.ci),
            "level": self.level,
            "n": self.n,
            "scale": self.scale,
            "target": self.target,
            "diagnostics": self.diagnostics,
        }


@dataclass
class VectorEstimate:
    """Estimate of an effect-modifier coefficient vector beta(x) = b0 + b1'x."""

    beta: list
    covariance: list
    level: float
    n: int
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "beta": list(self.beta),
            "covariance": [list(r) for r in self.covariance],
            "level": self.level,
            "n": self.n,
            "diagnostics": self.diagnostics,
        }
