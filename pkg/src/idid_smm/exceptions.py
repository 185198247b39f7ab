"""Exception hierarchy shared across the package."""


class IdidSmmError(Exception):
    """Base class for all package errors."""

    code = "error"


class DataError(IdidSmmError):
    """Problems with input data (schema, coding, strata)."""

    code = "data-error"


class MissingColumnError(DataError):
    code = "missing-column"


class NonBinaryFieldError(DataError):
    code = "non-binary-field"


class EmptyTimeStratumError(DataError):
    code = "empty-time-stratum"


class EmptyStratumError(DataError):
    code = "empty-stratum"


class EmptyCellError(DataError):
    code = "empty-cell"


class EstimationError(IdidSmmError):
    """Estimation failed; the input data may still be valid."""

    code = "estimation-error"


class WeakInstrumentError(EstimationError):
    code = "weak-instrument"


class NoAdmissibleRootError(EstimationError):
    code = "no-admissible-root"


class DegenerateQuadraticError(EstimationError):
    code = "degenerate-quadratic"


class NoRootError(EstimationError):
    code = "no-root"


class NonConvergenceError(EstimationError):
    code = "non-convergence"


class RankDeficientJacobianError(EstimationError):
    code = "rank-deficient-jacobian"


class DegenerateDenominatorError(EstimationError):
    code = "degenerate-denominator"


class DegenerateCError(EstimationError):
    code = "degenerate-c"


class ExtremePropensityError(EstimationError):
    code = "extreme-propensity"


class ResidualOverflowError(EstimationError):
    code = "residual-overflow"


class TooManyFailuresError(EstimationError):
    code = "too-many-failures"


class LearnerError(IdidSmmError):
    code = "learner-error"


class TooFewRowsError(LearnerError):
    code = "too-few-rows"


class InvalidTargetError(LearnerError):
    code = "invalid-target"


class AllCandidatesFailedError(LearnerError):
    code = "all-candidates-failed"


class SimulationError(IdidSmmError):
    code = "simulation-error"


class InvalidProbabilityError(SimulationError):
    code = "invalid-probability"


class InfeasibleMarginalsError(SimulationError):
    code = "infeasible-marginals"


class TooFewRepsError(SimulationError):
    code = "too-few-reps"
