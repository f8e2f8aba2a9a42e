"""Feasibility of small affine LMIs with strict-definiteness margins.

Blocks are plain callables ``f(values) -> matrix`` written with ``@``, ``.T``
and ``+`` only, so the same function evaluates on numpy arrays (verification)
and on cvxpy variables (solving).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import LmiInfeasibleError, LmiProblemError

PD = "require_positive_definite"
NSD = "require_negative_semidefinite"

# extra room kept between the solver's constraints and the verification margins
_BUFFER = 1e-6
_SOLVERS = ("CLARABEL", "SCS")


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple
    symmetric: bool = False


@dataclass(frozen=True)
class Block:
    name: str
    fn: object
    sense: str


@dataclass
class LmiProblem:
    variables: list
    blocks: list
    # the sum of traces of these symmetric variables is fixed to their total dimension
    normalize: tuple = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise LmiProblemError("duplicate variable names")
        for v in self.variables:
            if len(v.shape) != 2 or min(v.shape) <= 0:
                raise LmiProblemError(f"variable {v.name} has invalid shape {v.shape}")
            if v.symmetric and v.shape[0] != v.shape[1]:
                raise LmiProblemError(f"symmetric variable {v.name} must be square")
        for b in self.blocks:
            if b.sense not in (PD, NSD):
                raise LmiProblemError(f"block {b.name}: unknown sense {b.sense!r}")
        if not any(b.sense == PD for b in self.blocks):
            raise LmiProblemError("at least one positive-definite block is required")
        for name in self.normalize:
            v = self.variable(name)
            if not v.symmetric:
                raise LmiProblemError(f"normalized variable {name} must be symmetric")
        self._check_block_shapes()

    def variable(self, name) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise LmiProblemError(f"unknown variable {name}")

    def zeros(self) -> dict:
        return {v.name: np.zeros(v.shape) for v in self.variables}

    def evaluate(self, values) -> dict:
        """Numeric block values, symmetrized."""
        out = {}
        for b in self.blocks:
            M = np.asarray(b.fn(values), dtype=float)
            out[b.name] = 0.5 * (M + M.T)
        return out

    def _check_block_shapes(self):
        probe = self.zeros()
        for b in self.blocks:
            try:
                M = np.asarray(b.fn(probe), dtype=float)
            except (ValueError, IndexError) as exc:
                raise LmiProblemError(f"block {b.name}: dimension mismatch ({exc})") from exc
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise LmiProblemError(f"block {b.name} is not square: {M.shape}")


@dataclass
class LmiCertificate:
    values: dict
    margins: dict
    solver: str = ""

    def to_dict(self) -> dict:
        return {"values": {k: np.asarray(v).tolist() for k, v in self.values.items()},
                "margins": dict(self.margins), "solver": self.solver}

    @classmethod
    def from_dict(cls, data) -> "LmiCertificate":
        return cls({k: np.array(v, dtype=float) for k, v in data["values"].items()},
                   {k: float(v) for k, v in data["margins"].items()}, data.get("solver", ""))


@dataclass
class VerificationReport:
    passed: bool
    margins: dict
    failures: list = field(default_factory=list)


def block_margins(problem: LmiProblem, values) -> dict:
    """lambda_min for PD blocks, lambda_max for NSD blocks."""
    margins = {}
    for b in problem.blocks:
        M = np.asarray(b.fn(values), dtype=float)
        eig = nx.sym_eigvals(M)
        margins[b.name] = float(eig[0] if b.sense == PD else eig[-1])
    return margins


def _margins_ok(problem, margins, pd_margin, nsd_slack):
    bad = []
    for b in problem.blocks:
        m = margins[b.name]
        if b.sense == PD and not m >= pd_margin:
            bad.append(f"{b.name}: lambda_min={m:.3e} < {pd_margin:.1e}")
        if b.sense == NSD and not m <= nsd_slack:
            bad.append(f"{b.name}: lambda_max={m:.3e} > {nsd_slack:.1e}")
    return bad


def solve_feasibility(problem: LmiProblem, pd_margin=None, nsd_slack=None,
                      max_iter: int = 10000) -> LmiCertificate:
    """Find a point satisfying every block, or raise :class:`LmiInfeasibleError`.

    Interior-point solve with a zero objective; the returned point is always
    re-checked with dense eigenvalues before being accepted.
    """
    import cvxpy as cp

    tol = nx.tolerances()
    pd_margin = tol.lmi_pd_margin if pd_margin is None else pd_margin
    nsd_slack = tol.lmi_nsd_slack if nsd_slack is None else nsd_slack

    cvars = {v.name: cp.Variable(v.shape, symmetric=v.symmetric, name=v.name)
             for v in problem.variables}
    cons = []
    for b in problem.blocks:
        M = b.fn(cvars)
        M = (M + M.T) / 2
        eye = np.eye(M.shape[0])
        if b.sense == PD:
            cons.append(M >> (pd_margin + _BUFFER) * eye)
        else:
            cons.append(M << (min(nsd_slack, 0.0) - _BUFFER) * eye)
    if problem.normalize:
        dim = sum(problem.variable(n).shape[0] for n in problem.normalize)
        cons.append(sum(cp.trace(cvars[n]) for n in problem.normalize) == dim)

    best = None
    for solver in _SOLVERS:
        if solver not in cp.installed_solvers():
            continue
        prob = cp.Problem(cp.Minimize(0), cons)
        opts = {"max_iter": max_iter} if solver != "SCS" else {"max_iters": max_iter}
        try:
            prob.solve(solver=solver, **opts)
        except cp.error.SolverError:
            continue
        if any(cvars[v.name].value is None for v in problem.variables):
            continue
        values = {}
        for v in problem.variables:
            val = np.array(cvars[v.name].value, dtype=float)
            values[v.name] = 0.5 * (val + val.T) if v.symmetric else val
        margins = block_margins(problem, values)
        if not _margins_ok(problem, margins, pd_margin, nsd_slack):
            return LmiCertificate(values, margins, solver)
        if best is None:
            best = margins
    raise LmiInfeasibleError("no solver produced a point meeting the margins", report=best)


def verify_certificate(problem: LmiProblem, cert: LmiCertificate, pd_margin=None,
                       nsd_slack=None) -> VerificationReport:
    """Recompute every block from the stored values and check margins."""
    tol = nx.tolerances()
    pd_margin = tol.lmi_pd_margin if pd_margin is None else pd_margin
    nsd_slack = tol.lmi_nsd_slack if nsd_slack is None else nsd_slack
    failures = []
    for v in problem.variables:
        if v.name not in cert.values:
            failures.append(f"missing value for {v.name}")
        elif np.shape(cert.values[v.name]) != tuple(v.shape):
            failures.append(f"{v.name}: shape {np.shape(cert.values[v.name])} != {v.shape}")
    if failures:
        return VerificationReport(False, {}, failures)
    margins = block_margins(problem, cert.values)
    failures = _margins_ok(problem, margins, pd_margin, nsd_slack)
    for name, m in margins.items():
        stored = cert.margins.get(name)
        if stored is not None and abs(stored - m) > tol.lmi_compare * max(1.0, abs(m)):
            failures.append(f"{name}: stored margin {stored:.6e} differs from recomputed {m:.6e}")
    return VerificationReport(not failures, margins, failures)


def affine_expansion(problem: LmiProblem) -> dict:
    """Each block as ``F0 + sum_i x_i F_i`` over the scalar entries of the variables."""
    zero = problem.zeros()
    out = {}
    for b in problem.blocks:
        F0 = np.asarray(b.fn(zero), dtype=float)
        coeffs = []
        for v in problem.variables:
            for idx in np.ndindex(*v.shape):
                if v.symmetric and idx[0] > idx[1]:
                    continue
                vals = problem.zeros()
                vals[v.name][idx] = 1.0
                if v.symmetric:
                    vals[v.name][idx[::-1]] = 1.0
                Fi = np.asarray(b.fn(vals), dtype=float) - F0
                coeffs.append({"variable": v.name, "index": list(idx), "matrix": Fi.tolist()})
        out[b.name] = {"sense": b.sense, "constant": F0.tolist(), "coefficients": coeffs}
    return out


def dump_json(problem: LmiProblem, cert: LmiCertificate | None = None) -> str:
    doc = {
        "variables": [{"name": v.name, "shape": list(v.shape), "symmetric": v.symmetric}
                      for v in problem.variables],
        "normalize": list(problem.normalize),
        "blocks": affine_expansion(problem),
    }
    if cert is not None:
        doc["certificate"] = cert.to_dict()
        doc["evaluated"] = {k: v.tolist() for k, v in problem.evaluate(cert.values).items()}
    return json.dumps(doc, indent=2)
