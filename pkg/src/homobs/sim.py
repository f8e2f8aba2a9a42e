"""Fixed-step simulation of the plant with homogeneous and linear observers."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .design import FILTERING, PRESCRIBED, ObserverDesign, Plant
from .errors import DimensionError, DomainError, NumericalBlowupError, ParameterError

_SIGMA_FLOOR = 1e-300
_BLOWUP = 1e12


@dataclass
class Sinusoid:
    amplitude: float
    angular_frequency: float
    through: str = "E"

    def __post_init__(self):
        if self.through not in ("E", "B"):
            raise ParameterError(f"perturbation must act through 'E' or 'B', not {self.through!r}")


@dataclass
class CustomPerturbation:
    """Additive state perturbation sampled on the simulation grid, shape (steps, n)."""
    samples: np.ndarray


@dataclass
class SimConfig:
    dt: float
    t_end: float
    x0: np.ndarray
    z0: np.ndarray | None = None
    psi0: np.ndarray | None = None
    xi0: float = 0.0
    feedback_gain: np.ndarray | None = None
    perturbation: Sinusoid | CustomPerturbation | None = None
    noise: float = 0.0
    seed: int = 0
    method: str = "euler"
    luenberger_gain: np.ndarray | None = None

    def __post_init__(self):
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ParameterError("dt must be positive")
        if not self.t_end >= self.dt:
            raise ParameterError("t_end must be at least dt")
        if self.method not in ("euler", "rk4"):
            raise ParameterError(f"unknown integration method {self.method!r}")
        if self.noise < 0:
            raise ParameterError("noise magnitude must be nonnegative")
        self.x0 = np.asarray(self.x0, dtype=float).ravel()

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def echo(self) -> dict:
        d = {}
        for k, v in asdict(self).items():
            d[k] = v.tolist() if isinstance(v, np.ndarray) else v
        if isinstance(self.perturbation, CustomPerturbation):
            d["perturbation"] = "custom"
        return d


@dataclass
class ObserverState:
    z: np.ndarray
    psi: np.ndarray
    xi: float


@dataclass
class ObserverTrace:
    kind: str
    z: np.ndarray
    err: np.ndarray
    psi: np.ndarray | None = None
    xi: np.ndarray | None = None
    sigma: np.ndarray | None = None


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    observers: dict
    metadata: dict = field(default_factory=dict)

    @property
    def primary(self) -> str:
        return next(iter(self.observers))

    def error(self, name=None) -> np.ndarray:
        return self.observers[name or self.primary].err


@dataclass
class Metrics:
    terminal_error: float
    rms_error: float
    peak_error: float
    settling_time: float | None


def sigma_of(xi: float, psi) -> float:
    psi = np.asarray(psi, dtype=float)
    return float(np.sqrt(max(xi, 0.5 * float(psi @ psi), 0.0)))


class _DilationPower:
    """``expm(s H)`` via a cached eigendecomposition when it is well conditioned."""

    def __init__(self, H):
        self.H = np.asarray(H, dtype=float)
        w, V = np.linalg.eig(self.H)
        self.eig = None
        if np.linalg.cond(V) < 1e6:
            self.eig = (w, V, np.linalg.inv(V))

    def __call__(self, s: float) -> np.ndarray:
        if self.eig is None:
            return nx.expm(s * self.H)
        w, V, Vi = self.eig
        return ((V * np.exp(s * w)) @ Vi).real


_POWER_CACHE: dict = {}


def _powers(design: ObserverDesign):
    key = (design.G_d.tobytes(), design.G_d.shape, design.nu)
    cache = _POWER_CACHE.get(key)
    if cache is None:
        n = design.G_d.shape[0]
        cache = {"filter": _DilationPower(design.G_d + design.nu * np.eye(n)),
                 "scale": _DilationPower(design.G_d)}
        if len(_POWER_CACHE) > 64:
            _POWER_CACHE.clear()
        _POWER_CACHE[key] = cache
    return cache


def filtering_rhs(state: ObserverState, design: ObserverDesign, y, u, plant_B, plant_A=None):
    """Time derivative ``(z', psi', xi')`` of the filtering observer."""
    if design.kind != FILTERING:
        raise ParameterError("filtering_rhs needs a filtering design")
    A = design.plant.A if plant_A is None else plant_A
    nu, gam = design.nu, design.gamma
    z, psi, xi = state.z, state.psi, state.xi
    e = design.plant.C @ z - y
    pp = float(psi @ psi)
    sigma = np.sqrt(max(xi, 0.5 * pp, 0.0))
    if pp > 0.0:
        sig = max(sigma, _SIGMA_FLOOR)
        gain = _powers(design)["filter"](np.log(sig)) @ design.L @ (psi / sig)
        filt = sig ** nu * (design.L_tilde @ psi)
    else:
        gain = np.zeros_like(z)
        filt = np.zeros_like(psi)
    dz = A @ z + plant_B @ u + design.L0 @ e + gain
    dpsi = e + filt
    dxi = abs(float(psi @ dpsi)) - gam * float(nx.signed_power(xi - 0.5 * pp, nu / 2 + 1))
    return dz, dpsi, dxi


def prescribed_gain(design: ObserverDesign, xi: float) -> np.ndarray:
    """``L0 + |xi|^(nu-1) d(ln|xi|) L``."""
    a = abs(xi)
    if a == 0:
        raise DomainError("prescribed-time gain is undefined at xi = 0")
    return design.L0 + a ** (design.nu - 1) * (_powers(design)["scale"](np.log(a)) @ design.L)


def prescribed_rhs(z, xi, design: ObserverDesign, y, u, plant_B, plant_A=None):
    if design.kind != PRESCRIBED:
        raise ParameterError("prescribed_rhs needs a prescribed-time design")
    if xi == 0:
        raise ParameterError("xi = 0 is the terminal state of the prescribed-time observer")
    A = design.plant.A if plant_A is None else plant_A
    e = design.plant.C @ z - y
    dz = A @ z + plant_B @ u + prescribed_gain(design, xi) @ e
    dxi = -design.rho * abs(xi) ** (1 + design.nu) * np.sign(xi)
    return dz, dxi


def luenberger_rhs(z, L_lin, A, B, C, y, u):
    return A @ z + B @ u + L_lin @ (C @ z - y)


def xi_closed_form(xi0: float, rho: float, nu: float, t: float) -> float:
    if xi0 == 0:
        raise DomainError("xi0 must be nonzero")
    if nu == 0:
        return float(xi0 * np.exp(-rho * t))
    base = abs(xi0) ** (-nu) + nu * rho * t
    if nu < 0:
        T0 = abs(xi0) ** (-nu) / (-nu * rho)
        if t > T0 * (1 + 1e-12):
            raise DomainError(f"t={t} beyond the terminal time {T0}")
        if base <= 0:
            return 0.0
    return float(base ** (1.0 / (-nu)) * np.sign(xi0))


def terminal_time(xi0: float, rho: float, nu: float) -> float:
    """Zero-crossing time of ``xi`` for ``nu < 0``."""
    if not nu < 0:
        raise DomainError("xi reaches zero in finite time only for nu < 0")
    return abs(xi0) ** (-nu) / (-nu * rho)


def error_field(design: ObserverDesign):
    """Right-hand side of the noise-free error system in ``(psi, eps, xi)``."""
    if design.kind != FILTERING:
        raise ParameterError("error_field is defined for filtering designs")
    C = design.plant.C
    k, n = C.shape

    def f(v):
        v = np.asarray(v, dtype=float)
        psi, eps, xi = v[:k], v[k:k + n], float(v[k + n])
        # observer with z = eps and y = 0 produces exactly the error dynamics
        state = ObserverState(eps, psi, xi)
        dz, dpsi, dxi = filtering_rhs(state, design, np.zeros(k), np.zeros(0),
                                      np.zeros((n, 0)), plant_A=design.A0 - design.L0 @ C)
        return np.concatenate([dpsi, dz, [dxi]])

    return f


def error_dilation_generator(design: ObserverDesign) -> np.ndarray:
    k = design.plant.k
    n = design.plant.n
    G = np.zeros((k + n + 1, k + n + 1))
    G[:k, :k] = np.eye(k)
    G[k:k + n, k:k + n] = design.G_d
    G[-1, -1] = 2.0
    return G


def error_norm_dilation(design: ObserverDesign):
    """Dilation of the error state ``(psi, eps, xi)`` with norm ``diag(P_bar, 1)``."""
    from .dilation import make_dilation
    N = design.P_bar.shape[0]
    P = np.zeros((N + 1, N + 1))
    P[:N, :N] = design.P_bar
    P[-1, -1] = 1.0
    return make_dilation(error_dilation_generator(design), P)


def simulate_error(design: ObserverDesign, v0, dt: float, t_end: float, method="euler"):
    """Integrate the noise-free error system; returns ``(times, states)``."""
    f = error_field(design)
    steps = int(round(t_end / dt))
    v = np.asarray(v0, dtype=float).copy()
    out = np.empty((steps + 1, v.size))
    out[0] = v
    for i in range(steps):
        if method == "euler":
            v = v + dt * f(v)
        else:
            k1 = f(v)
            k2 = f(v + dt / 2 * k1)
            k3 = f(v + dt / 2 * k2)
            k4 = f(v + dt * k3)
            v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(v)):
            raise NumericalBlowupError(f"error system blew up at t={(i + 1) * dt:.6g}",
                                       time=(i + 1) * dt, observer="error")
        out[i + 1] = v
    return np.arange(steps + 1) * dt, out


def _as_list(designs):
    if designs is None:
        return []
    if isinstance(designs, ObserverDesign):
        return [designs]
    return list(designs)


def simulate(plant: Plant, designs, config: SimConfig) -> Trajectory:
    """Advance the plant and every observer on a shared grid.

    All observers see the same noisy measurement. The control input is
    ``feedback_gain @ z`` of the first homogeneous observer (of the
    Luenberger observer if there is none).
    """
    designs = _as_list(designs)
    n, k, m = plant.n, plant.k, plant.B.shape[1]
    A, B, C, E = plant.A, plant.B, plant.C, plant.E
    if config.x0.shape != (n,):
        raise DimensionError(f"x0 must have length {n}")
    K = np.zeros((m, n)) if config.feedback_gain is None else np.atleast_2d(
        np.asarray(config.feedback_gain, dtype=float))
    if K.shape != (m, n):
        raise DimensionError(f"feedback gain must be {m}x{n}, got {K.shape}")
    z0 = np.zeros(n) if config.z0 is None else np.asarray(config.z0, float).ravel()
    psi0 = np.zeros(k) if config.psi0 is None else np.asarray(config.psi0, float).ravel()
    if z0.shape != (n,) or psi0.shape != (k,):
        raise DimensionError("initial observer state has wrong dimension")
    for d in designs:
        if d.plant is None:
            d.plant = plant
        if d.L0.shape != (n, k):
            raise DimensionError("design does not match plant dimensions")
        if d.kind == PRESCRIBED and config.xi0 == 0:
            raise ParameterError("prescribed-time observer needs xi0 != 0")
    L_lin = None
    if config.luenberger_gain is not None:
        L_lin = np.asarray(config.luenberger_gain, dtype=float)
        if L_lin.shape != (n, k):
            raise DimensionError(f"Luenberger gain must be {n}x{k}")
    if not designs and L_lin is None:
        raise ParameterError("nothing to simulate: no observer configured")

    names = [("hom" if i == 0 else f"hom{i + 1}") for i in range(len(designs))]
    # flat state layout: x | per design (z, psi, xi) | z_lin
    slices = []
    off = n
    for _ in designs:
        slices.append((slice(off, off + n), slice(off + n, off + n + k), off + n + k))
        off += n + k + 1
    lin_sl = slice(off, off + n) if L_lin is not None else None
    size = off + (n if L_lin is not None else 0)
    state = np.zeros(size)
    state[:n] = config.x0
    for d, (zs, ps, xs) in zip(designs, slices):
        state[zs] = z0
        state[ps] = psi0 if d.kind == FILTERING else 0.0
        state[xs] = config.xi0
    if lin_sl is not None:
        state[lin_sl] = z0

    steps = config.steps
    dt = config.dt
    pert = config.perturbation
    if isinstance(pert, CustomPerturbation):
        samples = np.asarray(pert.samples, dtype=float)
        if samples.shape != (steps, n):
            raise DimensionError(f"custom perturbation must have shape ({steps}, {n})")
    rng = np.random.default_rng(config.seed)
    ctrl_z = slices[0][0] if designs else lin_sl

    def q_state(t, i):
        if pert is None:
            return 0.0
        if isinstance(pert, CustomPerturbation):
            return samples[i]
        M = E if pert.through == "E" else B
        return M @ np.full(M.shape[1], pert.amplitude * np.sin(pert.angular_frequency * t))

    def deriv(t, s, i, noise):
        x = s[:n]
        y = C @ x + noise
        u = K @ s[ctrl_z]
        out = np.empty_like(s)
        out[:n] = A @ x + B @ u + q_state(t, i)
        for j, (d, (zs, ps, xs)) in enumerate(zip(designs, slices)):
            if d.kind == FILTERING:
                dz, dpsi, dxi = filtering_rhs(ObserverState(s[zs], s[ps], s[xs]), d, y, u, B, A)
                out[zs], out[ps], out[xs] = dz, dpsi, dxi
            else:
                dz, dxi = prescribed_rhs(s[zs], s[xs], d, y, u, B, A)
                out[zs], out[ps], out[xs] = dz, 0.0, dxi
        if lin_sl is not None:
            out[lin_sl] = luenberger_rhs(s[lin_sl], L_lin, A, B, C, y, u)
        return out

    hist = np.empty((steps + 1, size))
    hist[0] = state
    halt = None
    last = steps
    for i in range(steps):
        t = i * dt
        noise = rng.uniform(-config.noise, config.noise, k) if config.noise > 0 else np.zeros(k)
        with np.errstate(all="ignore"):
            if config.method == "euler":
                new = state + dt * deriv(t, state, i, noise)
            else:
                k1 = deriv(t, state, i, noise)
                k2 = deriv(t + dt / 2, state + dt / 2 * k1, i, noise)
                k3 = deriv(t + dt / 2, state + dt / 2 * k2, i, noise)
                k4 = deriv(t + dt, state + dt * k3, i, noise)
                new = state + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(new)) or np.max(np.abs(new)) > _BLOWUP:
            raise NumericalBlowupError(f"numerical blowup at t={t + dt:.6g} in {_culprit(new, n, names, slices, lin_sl)}",
                                       time=t + dt, observer=_culprit(new, n, names, slices, lin_sl))
        crossed = None
        for d, (_, _, xs) in zip(designs, slices):
            if d.kind == PRESCRIBED and (new[xs] == 0 or np.sign(new[xs]) != np.sign(state[xs])):
                crossed = t + dt * state[xs] / (state[xs] - new[xs])
        hist[i + 1] = new
        state = new
        if crossed is not None:
            halt = crossed
            last = i + 1
            break

    hist = hist[:last + 1]
    times = np.arange(last + 1) * dt
    x = hist[:, :n]
    observers = {}
    for name, d, (zs, ps, xs) in zip(names, designs, slices):
        z = hist[:, zs]
        xi = hist[:, xs]
        if d.kind == FILTERING:
            psi = hist[:, ps]
            sigma = np.sqrt(np.maximum(np.maximum(xi, 0.5 * np.sum(psi ** 2, axis=1)), 0.0))
        else:
            psi, sigma = None, None
        observers[name] = ObserverTrace(d.kind, z, np.linalg.norm(z - x, axis=1), psi, xi, sigma)
    if lin_sl is not None:
        z = hist[:, lin_sl]
        observers["lin"] = ObserverTrace("luenberger", z, np.linalg.norm(z - x, axis=1))
    meta = {"config": config.echo(), "designs": [d.digest() for d in designs]}
    if halt is not None:
        meta["halt_time"] = float(halt)
    return Trajectory(times, x, observers, meta)


def _culprit(state, n, names, slices, lin_sl):
    bad = lambda v: not np.all(np.isfinite(v)) or np.max(np.abs(v)) > _BLOWUP
    for name, (zs, ps, xs) in zip(names, slices):
        if bad(state[zs]) or bad(state[ps]) or bad(np.atleast_1d(state[xs])):
            return name
    if lin_sl is not None and bad(state[lin_sl]):
        return "lin"
    return "plant"


def window_mask(traj: Trajectory, window):
    ta, tb = window
    eps = 1e-9 * max(1.0, abs(tb))
    mask = (traj.t >= ta - eps) & (traj.t <= tb + eps)
    if not mask.any():
        raise ParameterError(f"window {window} contains no samples")
    return mask


def metrics(traj: Trajectory, window=None, observer=None, threshold: float = 1e-3) -> Metrics:
    err = traj.error(observer)
    if window is None:
        window = (traj.t[0], traj.t[-1])
    mask = window_mask(traj, window)
    w = err[mask]
    above = np.nonzero(err >= threshold)[0]
    if len(above) == 0:
        settle = float(traj.t[0])
    elif above[-1] == len(err) - 1:
        settle = None
    else:
        settle = float(traj.t[above[-1] + 1])
    return Metrics(float(err[-1]), float(np.sqrt(np.mean(w ** 2))), float(np.max(w)), settle)


@dataclass
class DeltaReport:
    t_delta: float | None
    sigma_is_sqrt_xi: bool
    initial_delta: float
    bound: float
    max_violation: float


def delta_bound(delta0: float, nu: float, gamma: float) -> float:
    """Time by which ``xi - |psi|^2/2`` becomes nonnegative."""
    if delta0 >= 0:
        return 0.0
    return 2.0 * abs(delta0) ** (-nu / 2) / (-nu * gamma)


def delta_monotone_check(traj: Trajectory, design: ObserverDesign, observer=None) -> DeltaReport:
    """Find the first time after which ``delta = xi - |psi|^2/2`` stays nonnegative.

    Each sample may undershoot zero by the one-step Euler defect
    ``|dpsi|^2/2 + dt gamma |delta_prev|^(1+nu/2)``.
    """
    tr = traj.observers[observer or traj.primary]
    if tr.kind != FILTERING:
        raise ParameterError("delta check needs a filtering observer trace")
    dt = traj.t[1] - traj.t[0] if len(traj.t) > 1 else 0.0
    pp = np.sum(tr.psi ** 2, axis=1)
    delta = tr.xi - 0.5 * pp
    slack = np.zeros_like(delta)
    dpsi = np.diff(tr.psi, axis=0)
    a = design.nu / 2 + 1
    slack[1:] = 0.5 * np.sum(dpsi ** 2, axis=1) + dt * design.gamma * np.abs(delta[:-1]) ** a
    ok = delta >= -slack
    bad = np.nonzero(~ok)[0]
    if len(bad) == 0:
        idx = 0
    elif bad[-1] == len(delta) - 1:
        idx = None
    else:
        idx = bad[-1] + 1
    t_delta = None if idx is None else float(traj.t[idx])
    sqrt_ok = False
    if idx is not None:
        s = tr.sigma[idx:]
        ref = np.sqrt(np.maximum(tr.xi[idx:], 0.0))
        sqrt_ok = bool(np.all(np.abs(s - ref) <= np.sqrt(slack[idx:] + 1e-300) + 1e-12))
    viol = float(np.max(np.maximum(-delta - slack, 0.0)))
    return DeltaReport(t_delta, sqrt_ok, float(delta[0]), delta_bound(float(delta[0]), design.nu, design.gamma), viol)


def csv_columns(traj: Trajectory) -> list:
    n = traj.x.shape[1]
    cols = ["t"] + [f"x{i + 1}" for i in range(n)]
    obs = traj.observers
    hom = next((k for k, v in obs.items() if v.kind != "luenberger"), None)
    if hom is not None:
        tr = obs[hom]
        cols += [f"z{i + 1}" for i in range(n)]
        if tr.psi is not None:
            cols += [f"psi{i + 1}" for i in range(tr.psi.shape[1])]
        cols += ["xi"]
        if tr.sigma is not None:
            cols += ["sigma"]
        cols += ["err_hom"]
    if "lin" in obs:
        cols += [f"zlin{i + 1}" for i in range(n)] + ["err_lin"]
    return cols


def _table(traj: Trajectory) -> np.ndarray:
    parts = [traj.t[:, None], traj.x]
    obs = traj.observers
    hom = next((k for k, v in obs.items() if v.kind != "luenberger"), None)
    if hom is not None:
        tr = obs[hom]
        parts.append(tr.z)
        if tr.psi is not None:
            parts.append(tr.psi)
        parts.append(tr.xi[:, None])
        if tr.sigma is not None:
            parts.append(tr.sigma[:, None])
        parts.append(tr.err[:, None])
    if "lin" in obs:
        parts += [obs["lin"].z, obs["lin"].err[:, None]]
    return np.hstack(parts)


def to_csv(traj: Trajectory, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(traj))
    for row in _table(traj):
        w.writerow(["%.17g" % v for v in row])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_csv(path_or_text) -> tuple[list, np.ndarray]:
    """Parse a trajectory CSV into ``(columns, data)``."""
    if "\n" in str(path_or_text):
        text = path_or_text
    else:
        with open(path_or_text) as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def from_columns(columns, data) -> Trajectory:
    """Rebuild a trajectory from its CSV table (inverse of :func:`to_csv`)."""
    idx = {c: i for i, c in enumerate(columns)}
    pick = lambda prefix: [i for c, i in idx.items() if c.startswith(prefix) and c[len(prefix):].isdigit()]
    t = data[:, idx["t"]]
    x = data[:, pick("x")]
    observers = {}
    if "err_hom" in idx:
        psi_cols = pick("psi")
        kind = FILTERING if psi_cols else PRESCRIBED
        observers["hom"] = ObserverTrace(
            kind, data[:, pick("z")], data[:, idx["err_hom"]],
            data[:, psi_cols] if psi_cols else None, data[:, idx["xi"]],
            data[:, idx["sigma"]] if "sigma" in idx else None)
    if "err_lin" in idx:
        observers["lin"] = ObserverTrace("luenberger", data[:, pick("zlin")], data[:, idx["err_lin"]])
    return Trajectory(t, x, observers)


def to_json(traj: Trajectory) -> str:
    cols = csv_columns(traj)
    meta = {k: v for k, v in traj.metadata.items()}
    return json.dumps({"columns": cols, "data": _table(traj).tolist(), "metadata": meta})


def from_json(text) -> Trajectory:
    doc = json.loads(text)
    traj = from_columns(doc["columns"], np.array(doc["data"], dtype=float))
    traj.metadata = doc.get("metadata", {})
    return traj
