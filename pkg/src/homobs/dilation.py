"""Linear dilations, canonical homogeneous norms and homogeneity checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import (ConvergenceError, DefinitenessError, DimensionError,
                     DomainError, MonotonicityError, ParameterError)


@dataclass(frozen=True)
class Dilation:
    """Dilation group ``d(s) = expm(s * generator)`` with the norm ``sqrt(x' P x)``.

    ``alpha`` and ``beta`` are the extreme half-eigenvalues of
    ``P^1/2 G P^-1/2 + P^-1/2 G' P^1/2`` and bound the growth of ``||d(s)x||``.
    """

    generator: np.ndarray
    norm_matrix: np.ndarray
    alpha: float
    beta: float
    _sqrt: tuple = field(repr=False, compare=False, default=None)

    @property
    def dim(self) -> int:
        return self.generator.shape[0]

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.sqrt(max(x @ self.norm_matrix @ x, 0.0)))


def make_dilation(G_d, P) -> Dilation:
    G_d = np.array(G_d, dtype=float)
    P = np.array(P, dtype=float)
    if G_d.ndim != 2 or G_d.shape[0] != G_d.shape[1]:
        raise DimensionError(f"generator must be square, got {G_d.shape}")
    if P.shape != G_d.shape:
        raise DimensionError(f"norm matrix shape {P.shape} != generator shape {G_d.shape}")
    tol = nx.tolerances()
    if np.max(np.abs(P - P.T), initial=0.0) > tol.symmetry * max(1.0, np.abs(P).max()):
        raise DefinitenessError("norm matrix is not symmetric")
    P = 0.5 * (P + P.T)
    if not nx.is_pd(P, tol.pd_margin):
        raise DefinitenessError("norm matrix is not positive definite")
    if not nx.is_pd(P @ G_d + G_d.T @ P, tol.pd_margin):
        raise MonotonicityError("P G_d + G_d' P is not positive definite; dilation is not strictly monotone")
    Ph, Pmh = nx.sqrtm_spd(P)
    S = Ph @ G_d @ Pmh
    eig = nx.sym_eigvals(S + S.T) / 2.0
    G_d.setflags(write=False)
    P.setflags(write=False)
    return Dilation(G_d, P, float(eig[-1]), float(eig[0]), (Ph, Pmh))


def dilate(d: Dilation, s: float) -> np.ndarray:
    return nx.expm(s * d.generator)


def _bracket(d: Dilation, x):
    r = d.norm(x)
    lr = np.log(r)
    lo, hi = sorted((lr / d.alpha, lr / d.beta))
    pad = 1e-6 * (1.0 + abs(hi - lo))
    lo, hi = lo - pad, hi + pad

    def f(s):
        return d.norm(dilate(d, -s) @ x) - 1.0

    # the bounds are exact in theory; widen defensively against round-off
    step = 1.0
    while f(lo) < 0:
        lo -= step
        step *= 2
    step = 1.0
    while f(hi) > 0:
        hi += step
        step *= 2
    return lo, hi, f


def hom_norm(d: Dilation, x, max_iter: int = 200) -> float:
    """Canonical homogeneous norm: ``exp(s)`` with ``||d(-s) x|| = 1``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (d.dim,):
        raise DimensionError(f"vector of length {d.dim} expected, got shape {x.shape}")
    if not np.any(x):
        return 0.0
    return float(np.exp(_solve_level(d, x, max_iter)))


def _solve_level(d: Dilation, x, max_iter=200) -> float:
    lo, hi, f = _bracket(d, x)
    it = 0
    while hi - lo > 1e-3:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    s = 0.5 * (lo + hi)
    target = nx.tolerances().hom_norm_residual
    P, G = d.norm_matrix, d.generator
    for _ in range(max_iter):
        y = dilate(d, -s) @ x
        q = y @ P @ y
        res = np.sqrt(q) - 1.0
        if abs(res) <= target:
            return s
        # d/ds ||d(-s)x|| = -(y' P G y) / ||y||
        deriv = -(y @ P @ G @ y) / np.sqrt(q)
        s_new = s - res / deriv
        if not lo <= s_new <= hi:
            s_new = 0.5 * (lo + hi)
        if res > 0:
            lo = max(lo, s)
        else:
            hi = min(hi, s)
        s = s_new
    raise ConvergenceError(f"homogeneous norm did not converge (residual {res:.3e})")


def hom_norm_residual(d: Dilation, x) -> float:
    """``| ||d(-ln ||x||_d) x|| - 1 |`` for the computed norm."""
    nrm = hom_norm(d, x)
    return abs(d.norm(dilate(d, -np.log(nrm)) @ np.asarray(x, float)) - 1.0)


def hom_norm_gradient(d: Dilation, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.any(x):
        raise DomainError("homogeneous norm is not differentiable at the origin")
    nrm = hom_norm(d, x)
    D = dilate(d, -np.log(nrm))
    y = D @ x
    P, G = d.norm_matrix, d.generator
    return nrm * (y @ P @ D) / (y @ P @ G @ y)


def sigma_bounds(d: Dilation, rho: float) -> tuple[float, float]:
    """Comparison functions with ``sigma1(||x||_d) <= ||x|| <= sigma2(||x||_d)``."""
    if rho <= 0:
        raise ParameterError("rho must be positive")
    if rho <= 1:
        return rho ** d.alpha, rho ** d.beta
    return rho ** d.beta, rho ** d.alpha


@dataclass
class HomogeneityReport:
    max_defect: float
    worst_point: np.ndarray
    worst_s: float
    samples: int


def check_homogeneity(f, d, nu: float, samples: int = 200, seed: int = 0,
                      s_range=(-2.0, 2.0), sampler=None) -> HomogeneityReport:
    """Sample the relative defect of ``f(d(s)x) = e^{nu s} d(s) f(x)``.

    ``d`` is a :class:`Dilation` or a bare generator matrix. ``sampler``
    (rng -> point) overrides the default standard-normal draws.
    """
    if samples <= 0:
        raise ParameterError("samples must be positive")
    G = d.generator if isinstance(d, Dilation) else np.asarray(d, dtype=float)
    n = G.shape[0]
    rng = np.random.default_rng(seed)
    worst, worst_x, worst_s = -1.0, None, 0.0
    for _ in range(samples):
        x = sampler(rng) if sampler is not None else rng.standard_normal(n)
        s = rng.uniform(*s_range)
        D = nx.expm(s * G)
        rhs = np.exp(nu * s) * (D @ np.asarray(f(x), dtype=float))
        lhs = np.asarray(f(D @ x), dtype=float)
        defect = np.linalg.norm(lhs - rhs) / max(1.0, np.linalg.norm(rhs))
        if defect > worst:
            worst, worst_x, worst_s = defect, x, s
    return HomogeneityReport(float(worst), worst_x, float(worst_s), samples)
