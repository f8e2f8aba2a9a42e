"""Small dense linear-algebra helpers and the shared tolerance table."""
from __future__ import annotations

import dataclasses
from contextlib import contextmanager

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, SingularMatrixError


@dataclasses.dataclass(frozen=True)
class Tolerances:
    residual: float = 1e-8
    symmetry: float = 1e-10
    pd_margin: float = 1e-9
    singular_cond: float = 1e12
    rank_rtol: float = 1e-9
    lmi_pd_margin: float = 1e-6
    lmi_nsd_slack: float = 1e-9
    lmi_compare: float = 1e-9
    hosm_defect: float = 1e-6
    hom_norm_residual: float = 1e-12


_active = Tolerances()


def tolerances() -> Tolerances:
    """Currently active tolerance table."""
    return _active


def set_tolerances(tol: Tolerances | None = None, **overrides) -> Tolerances:
    """Replace the active table (or patch fields of it) and return it."""
    global _active
    base = tol if tol is not None else _active
    _active = dataclasses.replace(base, **overrides)
    return _active


@contextmanager
def override_tolerances(**overrides):
    global _active
    saved = _active
    try:
        yield set_tolerances(**overrides)
    finally:
        _active = saved


def _as_square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise DimensionError(f"{name} must be square, got shape {M.shape}")
    return M


def expm(M) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    M = _as_square(M)
    return scipy.linalg.expm(M)


def sym_eigvals(S) -> np.ndarray:
    """Eigenvalues of the symmetric part of ``S`` in nondecreasing order."""
    S = _as_square(S)
    return np.linalg.eigvalsh(0.5 * (S + S.T))


def solve_linear(A, b) -> np.ndarray:
    A = _as_square(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise DimensionError(f"rhs has {b.shape[0]} rows, matrix has {A.shape[0]}")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > tolerances().singular_cond:
        raise SingularMatrixError(f"matrix is numerically singular (cond={cond:.3e})")
    return np.linalg.solve(A, b)


def least_squares(A, b) -> np.ndarray:
    """Minimum-norm least-squares solution of ``A x = b``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return scipy.linalg.lstsq(A, b)[0]


def signed_power(v, a):
    """``|v|**a * sign(v)``; works elementwise on arrays."""
    if a <= 0:
        raise DomainError(f"signed power exponent must be positive, got {a}")
    return np.sign(v) * np.abs(v) ** a


def is_pd(S, margin: float = 0.0) -> bool:
    return bool(sym_eigvals(S)[0] > margin)


def is_anti_hurwitz(M) -> bool:
    return bool(np.all(np.linalg.eigvals(_as_square(M)).real > 0))


def is_hurwitz(M) -> bool:
    return bool(np.all(np.linalg.eigvals(_as_square(M)).real < 0))


def sqrtm_spd(P):
    """Symmetric square root and its inverse for a symmetric PD matrix."""
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    if w[0] <= 0:
        raise DomainError("matrix is not positive definite")
    r = np.sqrt(w)
    return (V * r) @ V.T, (V / r) @ V.T
