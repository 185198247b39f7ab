"""Dataset containers, CSV ingestion and validation.

Two designs are supported: the longitudinal (panel) design with one row per
subject holding both time points, and the repeated cross-sectional design
where each subject contributes a single (t, d, y) record.

CSV schemas are fixed: panel files carry ``z,d0,y0,d1,y1[,x1..xp]``, repeated
cross-sectional files carry ``z,t,d,y[,x1..xp]``. Headers are required, UTF-8,
'.' decimal separator. Missing values are rejected, never imputed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .exceptions import (
    EmptyTimeStratumError,
    MissingColumnError,
    NonBinaryFieldError,
)

PANEL_COLUMNS = ("z", "d0", "y0", "d1", "y1")
RCS_COLUMNS = ("z", "t", "d", "y")


def _as_float(df: pd.DataFrame, col: str) -> np.ndarray:
    arr = np.asarray(df[col], dtype=float)
    arr.setflags(write=False)
    return arr


def _check_binary(arr: np.ndarray, name: str) -> None:
    finite = arr[np.isfinite(arr)]
    if not np.isin(finite, (0.0, 1.0)).all():
        raise NonBinaryFieldError(f"column {name!r} must be coded 0/1")


def _covariate_matrix(df: pd.DataFrame, names: tuple[str, ...]) -> np.ndarray:
    if names:
        x = np.asarray(df[list(names)], dtype=float)
    else:
        x = np.empty((len(df), 0))
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class PanelData:
    """Per-subject records (z, x, d0, y0, d1, y1) for the longitudinal design."""

    z: np.ndarray
    d0: np.ndarray
    y0: np.ndarray
    d1: np.ndarray
    y1: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_arrays(cls, z, d0, y0, d1, y1, x=None, covariate_names=()):
        z, d0, y0, d1, y1 = (np.asarray(a, dtype=float) for a in (z, d0, y0, d1, y1))
        if x is None:
            x = np.empty((z.shape[0], 0))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] and not covariate_names:
            covariate_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        for arr in (z, d0, y0, d1, y1, x):
            arr.setflags(write=False)
        _check_binary(z, "z")
        _check_binary(d0, "d0")
        _check_binary(d1, "d1")
        return cls(z, d0, y0, d1, y1, x, tuple(covariate_names))

    def to_frame(self) -> pd.DataFrame:
        cols = {"z": self.z, "d0": self.d0, "y0": self.y0, "d1": self.d1, "y1": self.y1}
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.x[:, j]
        return pd.DataFrame(cols)

    def to_csv(self, path) -> None:
        # 17 significant digits so every float round-trips bit-exactly
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def subset(self, idx: np.ndarray) -> "PanelData":
        return PanelData.from_arrays(
            self.z[idx], self.d0[idx], self.y0[idx], self.d1[idx], self.y1[idx],
            self.x[idx], self.covariate_names,
        )


@dataclass(frozen=True)
class RcsData:
    """Per-subject records (z, x, t, d, y) for repeated cross-sections."""

    z: np.ndarray
    t: np.ndarray
    d: np.ndarray
    y: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_arrays(cls, z, t, d, y, x=None, covariate_names=()):
        z, t, d, y = (np.asarray(a, dtype=float) for a in (z, t, d, y))
        if x is None:
            x = np.empty((z.shape[0], 0))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] and not covariate_names:
            covariate_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        for arr in (z, t, d, y, x):
            arr.setflags(write=False)
        _check_binary(z, "z")
        _check_binary(t, "t")
        _check_binary(d, "d")
        if not (t == 0).any() or not (t == 1).any():
            raise EmptyTimeStratumError("both t=0 and t=1 strata must be present")
        return cls(z, t, d, y, x, tuple(covariate_names))

    def to_frame(self) -> pd.DataFrame:
        cols = {"z": self.z, "t": self.t, "d": self.d, "y": self.y}
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.x[:, j]
        return pd.DataFrame(cols)

    def to_csv(self, path) -> None:
        # 17 significant digits so every float round-trips bit-exactly
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    def subset(self, idx: np.ndarray) -> "RcsData":
        return RcsData.from_arrays(
            self.z[idx], self.t[idx], self.d[idx], self.y[idx],
            self.x[idx], self.covariate_names,
        )


@dataclass(frozen=True)
class EffectSpec:
    """What the analysis targets.

    ``target='treated'`` changes only the interpretation attached to results;
    the identified point estimate coincides with the population one.
    """

    scale: str = "multiplicative"
    target: str = "population"
    beta_form: str = "constant"

    def __post_init__(self):
        if self.scale not in ("additive", "multiplicative"):
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.target not in ("population", "treated"):
            raise ValueError(f"unknown target {self.target!r}")
        if self.beta_form not in ("constant", "linear_in_x"):
            raise ValueError(f"unknown beta_form {self.beta_form!r}")


@dataclass
class ValidationReport:
    n: int
    n_by_cell: dict
    warnings: list = field(default_factory=list)
    fatal: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.fatal

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "n_by_cell": dict(self.n_by_cell),
            "warnings": list(self.warnings),
            "fatal": list(self.fatal),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def _read_csv(path, required, covariate_columns):
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in list(required) + list(covariate_columns) if c not in df.columns]
    if missing:
        raise MissingColumnError(f"missing column(s): {', '.join(missing)}")
    return df


def load_panel_csv(path, covariate_columns=()) -> PanelData:
    """Read a panel CSV with columns z,d0,y0,d1,y1 plus requested covariates."""
    covariate_columns = tuple(covariate_columns)
    df = _read_csv(path, PANEL_COLUMNS, covariate_columns)
    for c in ("z", "d0", "d1"):
        _check_binary(np.asarray(df[c], dtype=float), c)
    return PanelData(
        z=_as_float(df, "z"),
        d0=_as_float(df, "d0"),
        y0=_as_float(df, "y0"),
        d1=_as_float(df, "d1"),
        y1=_as_float(df, "y1"),
        x=_covariate_matrix(df, covariate_columns),
        covariate_names=covariate_columns,
    )


def load_rcs_csv(path, covariate_columns=()) -> RcsData:
    """Read a repeated cross-sectional CSV with columns z,t,d,y."""
    covariate_columns = tuple(covariate_columns)
    df = _read_csv(path, RCS_COLUMNS, covariate_columns)
    for c in ("z", "t", "d"):
        _check_binary(np.asarray(df[c], dtype=float), c)
    t = np.asarray(df["t"], dtype=float)
    if not (t == 0).any() or not (t == 1).any():
        raise EmptyTimeStratumError("both t=0 and t=1 strata must be present")
    return RcsData(
        z=_as_float(df, "z"),
        t=_as_float(df, "t"),
        d=_as_float(df, "d"),
        y=_as_float(df, "y"),
        x=_covariate_matrix(df, covariate_columns),
        covariate_names=covariate_columns,
    )


# Binary outcomes with frequency above this bound make the rare-event
# approximation of the multiplicative model doubtful.
RARE_BINARY_THRESHOLD = 0.12


def _is_binary(arr: np.ndarray) -> bool:
    return bool(np.isin(arr[np.isfinite(arr)], (0.0, 1.0)).all())


def validate(dataset, spec: EffectSpec | None = None) -> ValidationReport:
    """Pure, side-effect-free checks; findings are carried in the report."""
    spec = spec or EffectSpec()
    warnings: list[str] = []
    fatal: list[str] = []

    if isinstance(dataset, PanelData):
        arrays = {
            "z": dataset.z, "d0": dataset.d0, "y0": dataset.y0,
            "d1": dataset.d1, "y1": dataset.y1, "x": dataset.x,
        }
        outcomes = {"y0": dataset.y0, "y1": dataset.y1}
        cells = {
            f"Z={z}": int((dataset.z == z).sum()) for z in (0, 1)
        }
    elif isinstance(dataset, RcsData):
        arrays = {
            "z": dataset.z, "t": dataset.t, "d": dataset.d,
            "y": dataset.y, "x": dataset.x,
        }
        outcomes = {
            "y(t=0)": dataset.y[dataset.t == 0],
            "y(t=1)": dataset.y[dataset.t == 1],
        }
        cells = {
            f"T={t}": int((dataset.t == t).sum()) for t in (0, 1)
        }
        cells.update({
            f"T={t},Z={z}": int(((dataset.t == t) & (dataset.z == z)).sum())
            for t in (0, 1) for z in (0, 1)
        })
    else:
        raise TypeError(f"unsupported dataset type {type(dataset).__name__}")

    for name, arr in arrays.items():
        if arr.size and not np.isfinite(arr).all():
            fatal.append(f"missing-values:{name}")

    if np.unique(dataset.z[np.isfinite(dataset.z)]).size < 2:
        fatal.append("degenerate-instrument")

    for name, y in outcomes.items():
        if y.size == 0 or not np.isfinite(y).all():
            continue
        if spec.scale == "multiplicative" and (y < 0).any():
            warnings.append(f"negative-outcome:{name}")
        if (
            spec.scale == "multiplicative"
            and _is_binary(y)
            and y.mean() > RARE_BINARY_THRESHOLD
        ):
            warnings.append(f"rare-binary-approximation:{name}")

    return ValidationReport(n=dataset.n, n_by_cell=cells, warnings=warnings, fatal=fatal)
