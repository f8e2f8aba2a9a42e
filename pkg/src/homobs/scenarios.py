"""Embedded benchmark plants and the reference gains used for comparison."""
import numpy as np

from .design import Plant

PENDULUM_A = np.array([
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
    [0.0, 152.0057, -12.2542, -0.5005],
    [0.0, 264.3080, -12.1117, -0.8702],
])
PENDULUM_B = np.array([[0.0], [0.0], [50.6372], [50.0484]])
PENDULUM_C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])

PENDULUM_NU = -1.0 / 3.0
PENDULUM_RHO = 1.5
PENDULUM_GAMMA = 2.75
PENDULUM_K = np.array([[2.0, -35.0, 1.5, -3.0]])
PENDULUM_X0 = np.array([2.0, 2.0, 1.0, 2.0])
PENDULUM_DT = 0.5e-4
PENDULUM_T_END = 1.5
PENDULUM_PERTURBATION = {"amplitude": 0.1, "angular_frequency": 5.0, "through": "B"}
PENDULUM_NOISE = 1e-3
# quoted terminal estimation error of the nominal run
PENDULUM_TERMINAL_ERROR = 0.4e-4

PENDULUM_L_LIN = np.array([
    [-10.9008, 0.5005],
    [12.1117, -22.0156],
    [34.0122, -147.1205],
    [121.4870, -343.9178],
])

# reference homogenization and gains (4-6 significant digits)
REFERENCE_L0 = np.array([
    [12.2542, 0.5005],
    [12.1117, 0.8702],
    [-156.227, -158.574],
    [-158.959, -271.127],
])
REFERENCE_G_D = np.array([
    [2 / 3, 0.0, 0.0, 0.0],
    [0.0, 2 / 3, 0.0, 0.0],
    [-4.0847, -0.1668, 1 / 3, 0.0],
    [-4.0372, -0.2901, 0.0, 1 / 3],
])
REFERENCE_L_TILDE = -13.9248 * np.eye(2)
REFERENCE_L = np.array([
    [-90.01293, 0.0],
    [0.0, -90.01293],
    [969.1348, 45.0500],
    [1090.210, -55.5684],
])


def pendulum_plant() -> Plant:
    return Plant(PENDULUM_A, PENDULUM_B, PENDULUM_C)


def double_integrator() -> Plant:
    return Plant([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]])


def integrator_chain(n: int) -> Plant:
    A = np.diag(np.ones(n - 1), 1)
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    return Plant(A, B, C)
