"""Input checks shared by the estimator API and the command line."""

from __future__ import annotations

import numpy as np

__all__ = ["check_smiles_rows", "check_targets", "check_consistent_length"]


def check_smiles_rows(X) -> list[tuple[str, str, str]]:
    """Normalise monomer-pair input to ``(m1, m2, copolymer)`` string rows.

    Each row holds two or three strings; a missing or empty third column
    means "generate the copolymer".
    """
    if isinstance(X, str):
        raise TypeError("expected a sequence of SMILES rows, got a single string")
    rows = []
    for i, row in enumerate(np.asarray(X, dtype=object).tolist() if not isinstance(X, list) else X):
        if isinstance(row, str) or not hasattr(row, "__len__") or len(row) not in (2, 3):
            raise ValueError(f"row {i}: expected (monomer1, monomer2[, copolymer])")
        cells = [("" if c is None else c) for c in row]
        if not all(isinstance(c, str) for c in cells):
            raise TypeError(f"row {i}: SMILES must be strings")
        m1, m2 = cells[0].strip(), cells[1].strip()
        if not m1 or not m2:
            raise ValueError(f"row {i}: empty monomer SMILES")
        rows.append((m1, m2, cells[2].strip() if len(cells) == 3 else ""))
    if not rows:
        raise ValueError("no input rows")
    return rows


def check_targets(y) -> np.ndarray:
    """Return ``y`` as a finite, non-negative float array of shape (n, 2)."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"targets must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("targets contain non-finite values")
    if np.any(arr < 0):
        raise ValueError("reactivity ratios must be non-negative")
    return arr


def check_consistent_length(*items) -> int:
    lengths = {len(x) for x in items}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of samples: {sorted(lengths)}")
    return lengths.pop() if lengths else 0
