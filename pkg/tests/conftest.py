"""Shared builders for the test suite."""

from importlib.resources import files

import numpy as np
import pytest

from viaguard import BarrierSpec, BoxSet, ControlAffineSystem, LyapunovSpec

CONFIG_DIR = files("viaguard") / "configs"


def config_path(name: str) -> str:
    return str(CONFIG_DIR / f"{name}.cfg")


def integrator(n: int, bound_v: float = 1.0, bound_s: float = 1.0,
               delta: float = 0.0, drift_gain: float = 0.0) -> ControlAffineSystem:
    """dx/dt = drift_gain * x + u_s + u_v with symmetric boxes."""
    eye = np.eye(n)
    return ControlAffineSystem(
        n=n, m_v=n, m_s=n,
        f=lambda x, k=drift_gain: k * np.asarray(x, dtype=float),
        g_v=lambda x, eye=eye: eye, g_s=lambda x, eye=eye: eye,
        U_v=BoxSet.symmetric(np.full(n, bound_v)),
        U_s=BoxSet.symmetric(np.full(n, bound_s)),
        delta=delta)


def paper_system(damped: bool = False, delta: float = 0.1) -> ControlAffineSystem:
    """The bundled 3-D benchmark (cubic drift, split columns)."""
    A = np.array([[0.61, 0.37, 2.69],
                  [-0.06, -1.02, -0.88],
                  [1.33, -2.71, 0.91]])
    if damped:
        A = A - 3.0 * np.eye(3)
    B1 = np.array([[-0.24], [0.32], [-1.12]])
    B2 = np.array([[0.04], [-0.01], [-0.07]])

    def f(x, A=A):
        x = np.asarray(x, dtype=float)
        cubic = 0.01 * np.array([x[0] ** 3 + x[1] ** 2 * x[2],
                                 x[1] ** 3 + x[2] ** 2 * x[0],
                                 x[2] ** 3 + x[0] ** 2 * x[1]])
        return A @ x + cubic

    return ControlAffineSystem(
        n=3, m_v=1, m_s=1, f=f,
        g_v=lambda x, B2=B2: B2, g_s=lambda x, B1=B1: B1,
        U_v=BoxSet.symmetric([20.0]), U_s=BoxSet.symmetric([20.0]),
        delta=delta)


@pytest.fixture
def unit_barrier_2d() -> BarrierSpec:
    return BarrierSpec.sphere([0.0, 0.0], 1.0)


@pytest.fixture
def unit_barrier_3d() -> BarrierSpec:
    return BarrierSpec.sphere([0.0, 0.0, 0.0], 1.0)


def quad_lyap(n: int) -> LyapunovSpec:
    return LyapunovSpec.quadratic(np.eye(n), 1.0)
