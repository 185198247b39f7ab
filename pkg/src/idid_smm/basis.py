"""Named scalar basis functions of (X, Z) used by the moment estimators.

Tokens understood: ``"1"`` (constant), ``"z"``, ``"x<j>"`` (1-based covariate
column), ``"sin(x<j>)"``, ``"x<j>^<k>"`` (integer power). These names are the
CLI-facing configuration format for m- and d-specifications.
"""

from __future__ import annotations

import re

import numpy as np

_TOKEN = re.compile(
    r"^(?:1|z|x(?P<col>\d+)(?:\^(?P<pow>\d+))?|sin\(x(?P<sincol>\d+)\))$"
)


def _column(token: str, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    m = _TOKEN.match(token.strip().lower())
    if m is None:
        raise ValueError(f"unknown basis token {token!r}")
    if token.strip() == "1":
        return np.ones(z.shape[0])
    if token.strip().lower() == "z":
        return np.asarray(z, dtype=float)
    if m.group("sincol") is not None:
        j = int(m.group("sincol")) - 1
        return np.sin(x[:, j])
    j = int(m.group("col")) - 1
    k = int(m.group("pow") or 1)
    return x[:, j] ** k


def basis_matrix(tokens, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Stack the named basis functions into an (n, len(tokens)) design."""
    for token in tokens:
        m = _TOKEN.match(token.strip().lower())
        if m is None:
            raise ValueError(f"unknown basis token {token!r}")
        col = m.group("col") or m.group("sincol")
        if col is not None and int(col) > x.shape[1]:
            raise ValueError(f"basis token {token!r} exceeds covariate dimension {x.shape[1]}")
    return np.column_stack([_column(t, x, z) for t in tokens])
