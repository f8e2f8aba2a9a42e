"""Gain synthesis for the prescribed-time and filtering homogeneous observers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import lmi
from . import numerics as nx
from .dilation import Dilation, make_dilation
from .errors import (DegreeRangeError, DimensionError, HomogenizationError,
                     LiftError, LmiInfeasibleError, ParameterError,
                     SynthesisError, UnobservableError)

PRESCRIBED = "prescribed_time"
FILTERING = "filtering"


def _mat(M, name):
    M = np.array(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2 or min(M.shape) == 0:
        raise DimensionError(f"{name} must be a non-empty matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise DimensionError(f"{name} has non-finite entries")
    return M


@dataclass
class Plant:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray | None = None
    q_bound: float = 0.0

    def __post_init__(self):
        self.A = _mat(self.A, "A")
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        self.B = _mat(self.B, "B")
        self.C = _mat(self.C, "C")
        if self.C.ndim == 2 and self.C.shape[0] == n and self.C.shape[1] == 1 and n > 1:
            self.C = self.C.T
        if self.B.shape[0] != n:
            raise DimensionError(f"B must have {n} rows, got {self.B.shape}")
        if self.C.shape[1] != n:
            raise DimensionError(f"C must have {n} columns, got {self.C.shape}")
        self.E = self.B.copy() if self.E is None else _mat(self.E, "E")
        if self.E.shape[0] != n:
            raise DimensionError(f"E must have {n} rows, got {self.E.shape}")
        if self.q_bound < 0:
            raise ParameterError("q_bound must be nonnegative")
        if np.linalg.matrix_rank(self.C) < self.C.shape[0]:
            raise DimensionError("C must have full row rank")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.C.shape[0]

    def to_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist(),
                "E": self.E.tolist(), "q_bound": self.q_bound}

    @classmethod
    def from_dict(cls, d):
        return cls(d["A"], d["B"], d["C"], d.get("E"), float(d.get("q_bound", 0.0)))


@dataclass
class Homogenization:
    G0: np.ndarray
    Y0: np.ndarray
    n_tilde: int
    A0: np.ndarray
    L0: np.ndarray
    residual: float

    def to_dict(self):
        return {"G0": self.G0.tolist(), "Y0": self.Y0.tolist(), "n_tilde": self.n_tilde,
                "A0": self.A0.tolist(), "L0": self.L0.tolist(), "residual": self.residual}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["G0"], float), np.array(d["Y0"], float), int(d["n_tilde"]),
                   np.array(d["A0"], float), np.array(d["L0"], float), float(d["residual"]))


@dataclass
class ObserverDesign:
    kind: str
    homogenization: Homogenization
    nu: float
    rho: float
    gamma: float
    G_d: np.ndarray
    dilation: Dilation
    P_bar: np.ndarray
    Y_bar: np.ndarray
    L_tilde: np.ndarray
    L: np.ndarray
    certificate: lmi.LmiCertificate
    plant: Plant | None = None
    info: dict = field(default_factory=dict)

    @property
    def L0(self):
        return self.homogenization.L0

    @property
    def A0(self):
        return self.homogenization.A0

    def lmi_problem(self) -> lmi.LmiProblem:
        if self.plant is None:
            raise ParameterError("design carries no plant; output matrix unknown")
        C = self.plant.C
        if self.kind == FILTERING:
            Gb, Ab, Cb = build_extended(self.A0, C, self.G_d)
            return lmi_problem(Ab, Cb, Gb, self.rho)
        return lmi_problem(self.A0, C, self.G_d, self.rho)

    def to_dict(self):
        return {
            "kind": self.kind, "nu": self.nu, "rho": self.rho, "gamma": self.gamma,
            "n_tilde": self.homogenization.n_tilde,
            "homogenization": self.homogenization.to_dict(),
            "G_d": self.G_d.tolist(), "norm_matrix": self.dilation.norm_matrix.tolist(),
            "P_bar": self.P_bar.tolist(), "Y_bar": self.Y_bar.tolist(),
            "L_tilde": self.L_tilde.tolist(), "L": self.L.tolist(),
            "certificate": self.certificate.to_dict(),
            "plant": self.plant.to_dict() if self.plant is not None else None,
            "info": self.info,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d):
        if d.get("kind") not in (PRESCRIBED, FILTERING):
            raise ParameterError(f"unknown design kind {d.get('kind')!r}")
        G_d = np.array(d["G_d"], float)
        return cls(
            kind=d["kind"], homogenization=Homogenization.from_dict(d["homogenization"]),
            nu=float(d["nu"]), rho=float(d["rho"]), gamma=float(d["gamma"]), G_d=G_d,
            dilation=make_dilation(G_d, d["norm_matrix"]),
            P_bar=np.array(d["P_bar"], float), Y_bar=np.array(d["Y_bar"], float),
            L_tilde=np.array(d["L_tilde"], float),
            L=np.array(d["L"], float),
            certificate=lmi.LmiCertificate.from_dict(d["certificate"]),
            plant=Plant.from_dict(d["plant"]) if d.get("plant") else None,
            info=d.get("info", {}),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def observability_index(A, C) -> int:
    A = _mat(A, "A")
    C = _mat(C, "C")
    n = A.shape[0]
    if A.shape != (n, n) or C.shape[1] != n:
        raise DimensionError("inconsistent A, C dimensions")
    blocks = []
    row = C
    for depth in range(1, n + 1):
        blocks.append(row)
        sv = np.linalg.svd(np.vstack(blocks), compute_uv=False)
        rank = int(np.sum(sv > 1e-9 * sv[0])) if sv[0] > 0 else 0
        if rank == n:
            return depth
        row = row @ A
    raise UnobservableError("observability matrix never reaches full rank; pair (A, C) is unobservable")


def solve_homogenization(A, C) -> Homogenization:
    """Solve ``A G0 - G0 A + Y0 C = A``, ``C G0 = 0`` and form ``L0``, ``A0``.

    The unknowns are stacked column-major and the linear system is solved in
    the minimum-norm least-squares sense.
    """
    A = _mat(A, "A")
    C = _mat(C, "C")
    n, k = A.shape[0], C.shape[0]
    n_tilde = observability_index(A, C)
    I = np.eye(n)
    top = np.hstack([np.kron(I, A) - np.kron(A.T, I), np.kron(C.T, I)])
    bottom = np.hstack([np.kron(I, C), np.zeros((k * n, n * k))])
    M = np.vstack([top, bottom])
    rhs = np.concatenate([A.flatten(order="F"), np.zeros(k * n)])
    sol = nx.least_squares(M, rhs)
    G0 = sol[: n * n].reshape((n, n), order="F")
    Y0 = sol[n * n:].reshape((n, k), order="F")
    residual = homogenization_residual(A, C, G0, Y0)
    if residual > nx.tolerances().residual * (1.0 + np.linalg.norm(A)):
        raise HomogenizationError(f"homogenization residual {residual:.3e} above tolerance")
    L0 = -nx.solve_linear(I + G0, Y0)
    A0 = A + L0 @ C
    return Homogenization(G0, Y0, n_tilde, A0, L0, residual)


def homogenization_residual(A, C, G0, Y0) -> float:
    r1 = np.linalg.norm(A @ G0 - G0 @ A + Y0 @ C - A)
    r2 = np.linalg.norm(C @ G0)
    return float(np.hypot(r1, r2))


def homogeneity_residual(A0, C, G_d, nu, c_scale=None) -> float:
    """``||A0 G_d - (G_d + nu I) A0|| + ||C G_d - c C||`` with ``c`` the output scale."""
    n = A0.shape[0]
    if c_scale is None:
        c_scale = 1.0
    r1 = np.linalg.norm(A0 @ G_d - (G_d + nu * np.eye(n)) @ A0)
    r2 = np.linalg.norm(C @ G_d - c_scale * C)
    return float(r1 + r2)


def _anti_hurwitz_or_raise(G_d, nu):
    if not nx.is_anti_hurwitz(G_d):
        raise DegreeRangeError(f"generator is not anti-Hurwitz for nu={nu}")
    return G_d


def generator_prescribed(G0, nu, n_tilde=None) -> np.ndarray:
    G0 = _mat(G0, "G0")
    if n_tilde is not None and nu < -1.0 / n_tilde:
        raise DegreeRangeError(f"nu={nu} below -1/n_tilde={-1.0 / n_tilde:.6g}")
    return _anti_hurwitz_or_raise(np.eye(G0.shape[0]) + nu * G0, nu)


def generator_filtering(G0, nu, n_tilde) -> np.ndarray:
    G0 = _mat(G0, "G0")
    lo = -1.0 / (n_tilde + 1)
    if not (lo - 1e-15 <= nu < 0):
        raise DegreeRangeError(f"nu={nu} outside [{lo:.6g}, 0)")
    I = np.eye(G0.shape[0])
    return _anti_hurwitz_or_raise(I + nu * (G0 + I), nu)


def build_extended(A0, C, G_d):
    """Block matrices of the observer error extended by the output filter."""
    A0 = _mat(A0, "A0")
    C = _mat(C, "C")
    G_d = _mat(G_d, "G_d")
    n, k = A0.shape[0], C.shape[0]
    if C.shape[1] != n or G_d.shape != (n, n):
        raise DimensionError("inconsistent dimensions in build_extended")
    Gb = np.block([[np.eye(k), np.zeros((k, n))], [np.zeros((n, k)), G_d]])
    Ab = np.block([[np.zeros((k, k)), C], [np.zeros((n, k)), A0]])
    Cb = np.hstack([np.eye(k), np.zeros((k, n))])
    return Gb, Ab, Cb


def lmi_problem(A0, C, G, rho) -> lmi.LmiProblem:
    """``P A0 + A0'P + Y C + C'Y' + rho (P G + G'P) <= 0``, ``P G + G'P > 0``, ``P > 0``."""
    N, k = A0.shape[0], C.shape[0]

    def main(v):
        P, Y = v["P"], v["Y"]
        return P @ A0 + A0.T @ P + Y @ C + C.T @ Y.T + rho * (P @ G + G.T @ P)

    def mono(v):
        return v["P"] @ G + G.T @ v["P"]

    def pos(v):
        return v["P"]

    return lmi.LmiProblem(
        variables=[lmi.Variable("P", (N, N), True), lmi.Variable("Y", (N, k))],
        blocks=[lmi.Block("lyapunov", main, lmi.NSD),
                lmi.Block("monotonicity", mono, lmi.PD),
                lmi.Block("P", pos, lmi.PD)],
        normalize=("P",),
    )


def _solve(problem):
    try:
        cert = lmi.solve_feasibility(problem)
    except LmiInfeasibleError as exc:
        raise SynthesisError(f"LMI solver failed: {exc} (best margins {exc.report})") from exc
    report = lmi.verify_certificate(problem, cert)
    if not report.passed:
        raise SynthesisError("certificate failed re-verification: " + "; ".join(report.failures))
    return cert


def solve_lyapunov_lmi(A0, C, G_d, rho):
    """Solve the n-dimensional LMI; returns ``(P, Y, certificate)``."""
    if not rho > 0:
        raise ParameterError("rho must be positive")
    cert = _solve(lmi_problem(A0, C, G_d, rho))
    return cert.values["P"], cert.values["Y"], cert


def synthesize_gains_prescribed(h: Homogenization, C, nu, rho, plant: Plant | None = None,
                                gamma: float = 0.0) -> ObserverDesign:
    if not rho > 0:
        raise ParameterError("rho must be positive")
    C = _mat(C, "C")
    G_d = generator_prescribed(h.G0, nu, h.n_tilde)
    P, Y, cert = solve_lyapunov_lmi(h.A0, C, G_d, rho)
    L = nx.solve_linear(P, Y)
    k = C.shape[0]
    return ObserverDesign(PRESCRIBED, h, float(nu), float(rho), float(gamma), G_d,
                          make_dilation(G_d, P), P, Y, np.zeros((k, k)), L, cert, plant)


def synthesize_gains_filtering(h: Homogenization, C, nu, rho, gamma,
                               plant: Plant | None = None) -> ObserverDesign:
    if not rho > 0 or not gamma > 0:
        raise ParameterError("rho and gamma must be positive")
    if not rho > gamma / 2:
        raise ParameterError(f"rho={rho} must exceed gamma/2={gamma / 2}")
    C = _mat(C, "C")
    k = C.shape[0]
    G_d = generator_filtering(h.G0, nu, h.n_tilde)
    Gb, Ab, Cb = build_extended(h.A0, C, G_d)
    cert = _solve(lmi_problem(Ab, Cb, Gb, rho))
    Pb, Yb = cert.values["P"], cert.values["Y"]
    Lb = nx.solve_linear(Pb, Yb)
    dil = make_dilation(G_d, Pb[k:, k:])
    return ObserverDesign(FILTERING, h, float(nu), float(rho), float(gamma), G_d, dil,
                          Pb, Yb, Lb[:k], Lb[k:], cert, plant)


def design_observer(plant: Plant, kind: str, nu: float, rho: float, gamma: float = 0.0):
    h = solve_homogenization(plant.A, plant.C)
    if kind == FILTERING:
        return synthesize_gains_filtering(h, plant.C, nu, rho, gamma, plant)
    if kind == PRESCRIBED:
        return synthesize_gains_prescribed(h, plant.C, nu, rho, plant, gamma)
    raise ParameterError(f"unknown observer kind {kind!r}")


def lift_feasible_point(P, Y, rho, C, A0, G_d, form="singular_perturbation",
                        p_max=1e12, eps_min=1e-12):
    """Extend an n-dimensional certificate (valid for ``2 rho``) to the filtered LMI.

    With ``L = P^-1 Y`` the default form uses the high-gain filter
    ``L_bar = (-p I; p L)`` and ``P_bar = [[p I, -C], [-C', eps P + C'C / p]]``,
    which is a quadratic form in the fast variable ``psi - C e / p`` and the
    error ``e``. ``form="as_printed"`` uses ``P_bar = [[p I, eps L'P], [eps P L, eps P]]``
    and ``L_bar = (-p I; L)`` instead; that variant generally has no certifying
    pair because ``L`` loses its influence as ``p`` grows.

    ``p`` doubles from ``rho + 1`` and, for each ``p``, ``eps`` halves from 1.
    Returns ``(P_bar, Y_bar, certificate)``.
    """
    if form not in ("singular_perturbation", "as_printed"):
        raise ParameterError(f"unknown lift form {form!r}")
    P = np.asarray(P, float)
    Y = np.asarray(Y, float)
    C = _mat(C, "C")
    k = C.shape[0]
    L = nx.solve_linear(P, Y)
    Gb, Ab, Cb = build_extended(A0, C, G_d)
    problem = lmi_problem(Ab, Cb, Gb, rho)
    tol = nx.tolerances()
    p = rho + 1.0
    while p <= p_max:
        eps = 1.0
        while eps >= eps_min:
            if form == "as_printed":
                Pb = np.block([[p * np.eye(k), eps * L.T @ P], [eps * P @ L, eps * P]])
                Lb = np.vstack([-p * np.eye(k), L])
            else:
                Pb = np.block([[p * np.eye(k), -C], [-C.T, eps * P + C.T @ C / p]])
                Lb = np.vstack([-p * np.eye(k), p * L])
            Pb = 0.5 * (Pb + Pb.T)
            Yb = Pb @ Lb
            m = lmi.block_margins(problem, {"P": Pb, "Y": Yb})
            pd_min = min(m["P"], m["monotonicity"])
            if m["lyapunov"] < 0 and pd_min > 0:
                # cone-homogeneous: rescale so the PD margins clear the threshold
                c = max(1.0, 2.0 * tol.lmi_pd_margin / pd_min)
                values = {"P": c * Pb, "Y": c * Yb}
                cert = lmi.LmiCertificate(values, lmi.block_margins(problem, values),
                                          f"lift p={p:g} eps={eps:g} scale={c:g}")
                if lmi.verify_certificate(problem, cert).passed:
                    return values["P"], values["Y"], cert
            eps /= 2
        p *= 2
    raise LiftError("no (p_tilde, eps) pair in the search range certifies the extended LMI")


def check_hosm_condition(G_d, E, n_tilde) -> tuple[bool, float]:
    G_d = _mat(G_d, "G_d")
    E = _mat(E, "E")
    if E.shape[0] != G_d.shape[0]:
        raise DimensionError("E must have as many rows as G_d")
    defect = np.linalg.norm((n_tilde + 1) * G_d @ E - E) / max(1.0, np.linalg.norm(E))
    return bool(defect <= nx.tolerances().hosm_defect), float(defect)


def design_checks(design: ObserverDesign) -> list:
    """Re-run every stored invariant; returns ``(name, passed, detail)`` rows.

    ``passed`` is ``None`` for informational rows.
    """
    rows = []
    h = design.homogenization
    plant = design.plant
    if plant is not None:
        res = homogenization_residual(plant.A, plant.C, h.G0, h.Y0)
        ok = res <= nx.tolerances().residual * (1 + np.linalg.norm(plant.A))
        rows.append(("homogenization residual", ok, f"{res:.3e}"))
        n = plant.n
        L0 = -nx.solve_linear(np.eye(n) + h.G0, h.Y0)
        ok = np.allclose(L0, h.L0, atol=1e-9) and np.allclose(plant.A + L0 @ plant.C, h.A0, atol=1e-9)
        rows.append(("L0 / A0 consistency", bool(ok), ""))
        scale = 1.0 + design.nu if design.kind == FILTERING else 1.0
        res = homogeneity_residual(h.A0, plant.C, design.G_d, design.nu, scale)
        rows.append(("homogeneity identities", res <= 1e-8 * (1 + np.linalg.norm(h.A0)), f"{res:.3e}"))
        holds, defect = check_hosm_condition(design.G_d, plant.E, h.n_tilde)
        # binding only for the discontinuous filtering case with a declared perturbation
        binding = (design.kind == FILTERING and plant.q_bound > 0
                   and abs(design.nu + 1.0 / (h.n_tilde + 1)) <= 1e-12)
        detail = "holds" if holds else f"does not hold (defect {defect:.3e})"
        rows.append(("HOSM condition for E", holds if binding else None, detail))
        report = lmi.verify_certificate(design.lmi_problem(), design.certificate)
        rows.append(("LMI certificate", report.passed, "; ".join(report.failures) or
                     ", ".join(f"{k}={v:.3e}" for k, v in report.margins.items())))
    k = design.Y_bar.shape[1]
    Lb = nx.solve_linear(design.P_bar, design.Y_bar)
    if design.kind == FILTERING:
        ok = np.allclose(Lb, np.vstack([design.L_tilde, design.L]), rtol=1e-8, atol=1e-8)
        rows.append(("(L_tilde; L) = P_bar^-1 Y_bar", bool(ok), ""))
        ok = -1.0 / (h.n_tilde + 1) - 1e-15 <= design.nu < 0 and design.rho > design.gamma / 2
        rows.append(("parameter window", bool(ok), f"nu={design.nu:.6g} rho={design.rho} gamma={design.gamma}"))
    else:
        ok = np.allclose(Lb, design.L, rtol=1e-8, atol=1e-8)
        rows.append(("L = P^-1 Y", bool(ok), ""))
    return rows
