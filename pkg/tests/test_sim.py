import numpy as np
import pytest

from homobs import design as ds
from homobs import dilation as dl
from homobs import numerics as nx
from homobs import scenarios as sc
from homobs import sim
from homobs.errors import DomainError, NumericalBlowupError, ParameterError

from conftest import pendulum_config


def test_sigma_of():
    assert sim.sigma_of(2.0, [np.sqrt(2.0)]) == pytest.approx(np.sqrt(2))
    assert sim.sigma_of(0.0, [0.0, 0.0]) == 0.0
    assert sim.sigma_of(-1.0, [1.0]) == pytest.approx(np.sqrt(0.5))


def test_filtering_rhs_equilibrium(pendulum_design, pendulum):
    x = np.array([0.3, -0.2, 1.0, 0.5])
    u = np.array([0.7])
    st = sim.ObserverState(x.copy(), np.zeros(2), 0.0)
    dz, dpsi, dxi = sim.filtering_rhs(st, pendulum_design, pendulum.C @ x, u, pendulum.B)
    assert np.allclose(dz, pendulum.A @ x + pendulum.B @ u)
    assert np.array_equal(dpsi, np.zeros(2)) and dxi == 0.0


def test_filtering_rhs_unit_sigma(pendulum_design, pendulum):
    # with sigma = 1 the gain reduces to L psi since d(0) = I
    d = pendulum_design
    psi = np.array([0.3, -0.4])
    st = sim.ObserverState(np.zeros(4), psi, 1.0)
    dz, dpsi, _ = sim.filtering_rhs(st, d, np.zeros(2), np.zeros(1), pendulum.B)
    assert np.allclose(dz, d.L @ psi)
    assert np.allclose(dpsi, d.L_tilde @ psi)


def test_error_field_homogeneity(pendulum_design):
    f = sim.error_field(pendulum_design)
    G = sim.error_dilation_generator(pendulum_design)
    rep = dl.check_homogeneity(f, G, pendulum_design.nu, samples=200, seed=0)
    assert rep.max_defect <= 1e-8


def test_solution_symmetry(di_design):
    # trajectories from d(s) v0 are dilated, time-rescaled copies of the one from v0
    d = di_design
    G = sim.error_dilation_generator(d)
    v0 = np.array([0.3, 1.0, -0.5, 0.2])
    dt = 1e-4
    ts, V = sim.simulate_error(d, v0, dt, 1.0)
    for s in (-0.5, 0.5):
        D = nx.expm(s * G)
        ts2, V2 = sim.simulate_error(d, D @ v0, dt, np.exp(-d.nu * s) * 0.999)
        idx = np.minimum(np.round(np.exp(d.nu * s) * ts2 / dt).astype(int), len(ts) - 1)
        pred = (D @ V[idx].T).T
        assert np.abs(V2 - pred).max() <= 50 * dt * max(1.0, np.abs(pred).max())


@pytest.mark.slow
def test_finite_time_convergence(pendulum_design):
    D = sim.error_norm_dilation(pendulum_design)
    rng = np.random.default_rng(2024)
    for _ in range(10):
        v = rng.standard_normal(7)
        v = dl.dilate(D, -np.log(dl.hom_norm(D, v))) @ v
        assert dl.hom_norm(D, v) == pytest.approx(1.0)
        _, V = sim.simulate_error(pendulum_design, v, sc.PENDULUM_DT, 3.0)
        assert np.linalg.norm(V, axis=1).min() < 1e-3


def test_xi_closed_form():
    assert sim.xi_closed_form(0.7, 2.0, -0.5, 0.0) == pytest.approx(0.7)
    for t in np.linspace(0, 1, 11):
        assert sim.xi_closed_form(1.0, 1.0, -1.0, t) == pytest.approx(1 - t, abs=1e-15)
        assert sim.xi_closed_form(1.0, 1.0, 1.0, t) == pytest.approx(1 / (1 + t))
    assert sim.xi_closed_form(1.0, 1.0, -1.0, 1.0) == 0.0
    with pytest.raises(DomainError):
        sim.xi_closed_form(1.0, 1.0, -1.0, 1.5)
    with pytest.raises(DomainError):
        sim.xi_closed_form(0.0, 1.0, -1.0, 0.1)


@pytest.fixture(scope="module")
def prescribed_di(di):
    return ds.design_observer(di, ds.PRESCRIBED, -0.5, 1.0)


def test_prescribed_gain_at_unit_xi(prescribed_di):
    d = prescribed_di
    assert np.allclose(sim.prescribed_gain(d, 1.0), d.L0 + d.L)


def test_prescribed_xi_and_crossing(di):
    dt = 1e-3
    for nu in (-1.0, -0.5):
        h = ds.solve_homogenization(di.A, di.C)
        d = ds.synthesize_gains_prescribed(h, di.C, max(nu, -0.5), 1.0, di)
        d.nu = nu
        tr = sim.simulate(di, d, sim.SimConfig(dt=dt, t_end=3.0, x0=[0.5, 0.5], xi0=1.0))
        xi = tr.observers["hom"].xi
        T0 = sim.terminal_time(1.0, 1.0, nu)
        ref = np.array([sim.xi_closed_form(1.0, 1.0, nu, min(t, T0)) for t in tr.t[:-1]])
        assert np.abs(xi[:-1] - ref).max() <= 10 * dt * 1.0
        if nu == -1.0:
            # constant decay rate: Euler is exact and the crossing lands on the grid
            assert abs(tr.metadata["halt_time"] - T0) <= 2 * dt


def test_prescribed_zero_xi_rejected(prescribed_di, di):
    with pytest.raises(ParameterError):
        sim.simulate(di, prescribed_di, sim.SimConfig(dt=1e-3, t_end=1.0, x0=[1.0, 0.0]))


def test_luenberger(pendulum):
    x = np.array([1.0, 2.0, 3.0, 4.0])
    u = np.array([0.5])
    A, B, C = pendulum.A, pendulum.B, pendulum.C
    dz = sim.luenberger_rhs(x, sc.PENDULUM_L_LIN, A, B, C, C @ x, u)
    assert np.allclose(dz, A @ x + B @ u)
    z = np.zeros(4)
    assert np.allclose(sim.luenberger_rhs(z, np.zeros((4, 2)), A, B, C, C @ x, u), B @ u)
    assert nx.is_hurwitz(A + sc.PENDULUM_L_LIN @ C)


def test_zero_dynamics():
    p = ds.Plant(np.zeros((2, 2)), np.zeros((2, 1)), [[1.0, 0.0], [0.0, 1.0]])
    cfg = sim.SimConfig(dt=0.01, t_end=1.0, x0=[1.0, -2.0], z0=[1.0, -2.0],
                        luenberger_gain=-np.eye(2))
    tr = sim.simulate(p, [], cfg)
    assert np.all(tr.error("lin") == 0.0)


def test_determinism(pendulum, pendulum_design):
    cfg = pendulum_config(t_end=0.05, noise=1e-3, seed=7)
    a = sim.simulate(pendulum, pendulum_design, cfg)
    b = sim.simulate(pendulum, pendulum_design, cfg)
    assert sim.to_csv(a) == sim.to_csv(b)
    c = sim.simulate(pendulum, pendulum_design, pendulum_config(t_end=0.05, noise=1e-3, seed=8))
    assert sim.to_csv(a) != sim.to_csv(c)


def test_config_validation():
    with pytest.raises(ParameterError):
        sim.SimConfig(dt=0.0, t_end=1.0, x0=[0.0])
    with pytest.raises(ParameterError):
        sim.SimConfig(dt=0.1, t_end=0.01, x0=[0.0])
    with pytest.raises(ParameterError):
        sim.SimConfig(dt=0.1, t_end=1.0, x0=[0.0], method="midpoint")


def test_blowup_reported(di, di_design):
    unstable = ds.Plant([[50.0, 0.0], [0.0, 50.0]], [[0.0], [1.0]], [[1.0, 0.0]])
    with pytest.raises(NumericalBlowupError) as info:
        sim.simulate(unstable, di_design, sim.SimConfig(dt=0.01, t_end=5.0, x0=[1.0, 1.0]))
    assert info.value.time is not None and info.value.observer in ("hom", "plant")


def test_metrics_closed_forms():
    t = np.linspace(0, 1, 1001)
    zero = sim.Trajectory(t, np.zeros((t.size, 1)),
                          {"hom": sim.ObserverTrace("filtering", np.zeros((t.size, 1)), np.zeros(t.size))})
    m = sim.metrics(zero, (0, 1))
    assert m.terminal_error == m.rms_error == m.peak_error == 0.0 and m.settling_time == 0.0
    ramp = sim.Trajectory(t, np.zeros((t.size, 1)),
                          {"hom": sim.ObserverTrace("filtering", t[:, None], t.copy())})
    m = sim.metrics(ramp, (0, 1))
    # discrete mean of (i/N)^2 over i = 0..N is (2N+1) / (6N)
    N = t.size - 1
    assert m.rms_error == pytest.approx(np.sqrt((2 * N + 1) / (6 * N)), rel=1e-12)
    assert m.rms_error == pytest.approx(1 / np.sqrt(3), rel=1e-3)
    assert m.settling_time is None
    with pytest.raises(ParameterError):
        sim.metrics(ramp, (2, 3))


def test_delta_check_nonnegative_start(di, di_design):
    cfg = sim.SimConfig(dt=1e-3, t_end=2.0, x0=[1.0, 0.5], psi0=[0.5], xi0=1.0)
    tr = sim.simulate(di, di_design, cfg)
    rep = sim.delta_monotone_check(tr, di_design)
    assert rep.t_delta == 0.0 and rep.sigma_is_sqrt_xi


def test_delta_check_adversarial(di, di_design):
    cfg = sim.SimConfig(dt=1e-4, t_end=3.0, x0=[0.0, 0.0], psi0=[2.0], xi0=0.0)
    tr = sim.simulate(di, di_design, cfg)
    rep = sim.delta_monotone_check(tr, di_design)
    assert rep.initial_delta == pytest.approx(-2.0)
    assert rep.t_delta is not None and 0.0 < rep.t_delta <= rep.bound
    assert rep.sigma_is_sqrt_xi


def test_delta_check_pendulum(nominal_run, pendulum_design):
    rep = sim.delta_monotone_check(nominal_run, pendulum_design)
    assert rep.t_delta is not None and rep.t_delta < sc.PENDULUM_T_END


def test_csv_and_json_round_trip(pendulum, pendulum_design, tmp_path):
    tr = sim.simulate(pendulum, pendulum_design, pendulum_config(t_end=0.01))
    path = tmp_path / "traj.csv"
    text = sim.to_csv(tr, path)
    cols, data = sim.read_csv(path)
    assert cols[:5] == ["t", "x1", "x2", "x3", "x4"]
    assert cols[-5:] == ["zlin1", "zlin2", "zlin3", "zlin4", "err_lin"] and "sigma" in cols
    back = sim.from_columns(cols, data)
    assert sim.to_csv(back) == text
    assert np.array_equal(back.observers["hom"].psi, tr.observers["hom"].psi)
    again = sim.from_json(sim.to_json(tr))
    assert sim.to_csv(again) == text
