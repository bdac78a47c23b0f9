"""Shared dense linear-algebra helpers (SPD inversion with jitter escalation)."""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger("charme_lab.linalg")

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


def spd_inverse(A: np.ndarray, error_cls, label: str = "matrix") -> np.ndarray:
    """Invert a symmetric positive-definite matrix via Cholesky.

    On factorization failure the diagonal is jittered by escalating
    multiples (1e-12 up to 1e-8) of the mean diagonal; each escalation is
    logged.  Raises ``error_cls`` when even the largest jitter fails.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    scale = float(np.trace(A)) / n if n else 1.0
    if scale <= 0:
        scale = 1.0
    eye = np.eye(n)
    for jitter in JITTER_LADDER:
        try:
            L = np.linalg.cholesky(A + jitter * scale * eye)
        except np.linalg.LinAlgError:
            continue
        if jitter > 0.0:
            logger.warning("%s needed diagonal jitter %.1e to factor", label, jitter)
        Linv = np.linalg.solve(L, eye)
        return Linv.T @ Linv
    raise error_cls(f"{label} is singular (Cholesky failed up to jitter 1e-8)")


def spd_condition_number(A: np.ndarray) -> float:
    """2-norm condition number of a symmetric matrix; inf when not PD."""
    lam = np.linalg.eigvalsh(np.asarray(A, dtype=float))
    lo, hi = float(lam[0]), float(lam[-1])
    if lo <= 0.0:
        return np.inf
    return hi / lo
