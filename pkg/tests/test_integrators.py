import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from poroheat.grid import build_grid, face_fluxes
from poroheat.integrators import (LinearIVP, LinearSolveError, Scheme, StepControlError,
                                  StepperConfig, advance, controlled_march, exponential_propagators,
                                  integrate, matrix_exponential, matrix_exponential_apply, step)

SCHEMES = ["explicit_euler", "implicit_euler", "trapezoidal"]


def scalar(a, c0=1.0, f=None):
    return LinearIVP(np.array([[a]]), [c0], f)


def test_trapezoidal_rational_update():
    c = step(scalar(-1.0), [1.0], 0.0, StepperConfig("trapezoidal", 0.1))
    assert np.isclose(c[0], 0.95 / 1.05, rtol=0, atol=1e-15)


def test_explicit_euler_value():
    assert step(scalar(-1.0), [1.0], 0.0, StepperConfig("explicit_euler", 0.1))[0] == 0.9


@pytest.mark.parametrize("scheme", SCHEMES + ["exponential"])
def test_constant_forcing_quadrature(scheme):
    ivp = scalar(0.0, f=np.array([2.5]))
    assert np.isclose(step(ivp, [1.0], 0.0, StepperConfig(scheme, 0.3))[0], 1.75)


def test_scheme_aliases():
    assert Scheme.parse("crank_nicolson") is Scheme.TRAPEZOIDAL
    assert Scheme.parse("implicit_trapezoidal") is Scheme.TRAPEZOIDAL
    with pytest.raises(ValueError):
        Scheme.parse("rk4")


def test_config_and_ivp_validation():
    with pytest.raises(ValueError):
        StepperConfig("trapezoidal", 0.0)
    with pytest.raises(ValueError):
        StepperConfig("trapezoidal", 1.0, cfl_max=-1)
    with pytest.raises(ValueError):
        LinearIVP(np.eye(2), [1.0])
    with pytest.raises(ValueError):
        LinearIVP(np.eye(2), [1.0, 2.0], np.ones(3))


def test_singular_implicit_system():
    with pytest.raises(LinearSolveError):
        step(scalar(1.0), [1.0], 0.0, StepperConfig("implicit_euler", 1.0))


@pytest.mark.parametrize("scheme,order", [("explicit_euler", 1), ("implicit_euler", 1), ("trapezoidal", 2)])
def test_observed_order(scheme, order):
    # c' = -c + sin t, c(0) = 1
    ivp = LinearIVP(np.array([[-1.0]]), [1.0], lambda t: np.array([np.sin(t)]))
    exact = lambda t: 1.5 * np.exp(-t) + 0.5 * (np.sin(t) - np.cos(t))  # noqa: E731
    taus = [0.1, 0.05, 0.025, 0.0125]
    errs = [abs(integrate(ivp, StepperConfig(scheme, h), int(round(1 / h)))[0] - exact(1.0)) for h in taus]
    slope = np.polyfit(np.log(taus), np.log(errs), 1)[0]
    assert abs(slope - order) <= 0.1


@pytest.mark.parametrize("scheme", ["implicit_euler", "trapezoidal"])
def test_a_stability_probe(scheme):
    assert abs(step(scalar(-1e6), [1.0], 0.0, StepperConfig(scheme, 1.0))[0]) <= 1.0


def test_expm_identity_and_exchange():
    v = np.array([1.0, 0.0])
    assert np.array_equal(matrix_exponential_apply(np.zeros((2, 2)), v, 1.0), v)
    out = matrix_exponential_apply(np.array([[-1.0, 1.0], [1.0, -1.0]]), v, 1.0)
    e = np.exp(-2.0)
    assert np.allclose(out, [0.5 * (1 + e), 0.5 * (1 - e)], atol=1e-14)
    far = matrix_exponential_apply(np.array([[-1.0, 1.0], [1.0, -1.0]]), v, 50.0)
    assert np.allclose(far, 0.5, atol=1e-14)


def test_expm_nilpotent():
    out = matrix_exponential_apply(np.array([[0.0, 1.0], [0.0, 0.0]]), [0.0, 1.0], 1.0)
    assert np.array_equal(out, [1.0, 1.0])


def test_expm_against_scipy():
    rng = np.random.default_rng(0)
    for scale in (0.1, 3.0, 40.0):
        A = scale * rng.standard_normal((10, 10))
        ref = sla.expm(A)
        assert np.allclose(matrix_exponential(A), ref, rtol=1e-11, atol=1e-12 * np.abs(ref).max())


def test_expm_errors():
    with pytest.raises(ValueError):
        matrix_exponential_apply(np.eye(2), [1.0], 1.0)
    with pytest.raises(ValueError):
        matrix_exponential_apply(np.eye(2), [1.0, 1.0], -1.0)
    with pytest.raises(ValueError):
        matrix_exponential(np.ones((2, 3)))


def test_expm_vs_fine_trapezoidal():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((8, 8))
    A = -(X @ X.T) / 8 - 0.1 * np.eye(8) + 0.2 * (X - X.T)
    c0 = rng.standard_normal(8)
    ref = matrix_exponential_apply(A, c0, 1.0)
    fine = integrate(LinearIVP(A, c0), StepperConfig("trapezoidal", 1e-4), 10_000)
    assert np.linalg.norm(fine - ref) <= 1e-6 * np.linalg.norm(ref)


def test_exponential_scheme_exact_for_linear_forcing():
    A = np.array([[-0.5, 0.2], [0.1, -0.3]])
    f0, f1 = np.array([1.0, 0.0]), np.array([0.0, 2.0])
    c0 = np.array([0.3, -0.2])
    h = 0.7
    out = advance(A, c0, h, f0, f1, "exponential")
    # augmented system with time as extra state gives the reference
    B = np.zeros((4, 4))
    B[:2, :2] = A
    B[:2, 2] = f0
    B[:2, 3] = (f1 - f0) / h
    B[3, 2] = 1.0
    ref = sla.expm(h * B) @ np.r_[c0, 1.0, 0.0]
    assert np.allclose(out, ref[:2], atol=1e-13)
    E, P1, P2 = exponential_propagators(sp.csr_matrix(A), h)
    assert np.allclose(E, sla.expm(h * A))


def test_controlled_march_cap():
    g = build_grid(64, 64, (0, 100, 0, 100), {"bottom": "outflow"})
    fl = face_fluxes(g, (0, -4e-3))
    n = g.n_cells
    ivp = LinearIVP(sp.csr_matrix((n, n)), np.zeros(n), interval=(0.0, 0.0))
    traj = controlled_march(ivp, StepperConfig("trapezoidal", 500.0, cfl_max=1.0), fl, g, 2)
    tau = traj.times[1] - traj.times[0]
    assert np.isclose(tau, 390.625)
    assert 1.158e2 <= tau and 1.298e2 <= tau
    assert np.isclose(traj.courant[-1], 1.0)


def test_controlled_march_no_cap_and_zero_steps():
    g = build_grid(3, 3)
    fl = face_fluxes(g, (0, 0))
    ivp = LinearIVP(-np.eye(9), np.ones(9), interval=(0.0, 1.0))
    traj = controlled_march(ivp, StepperConfig("implicit_euler", 0.25, cfl_max=1.0), fl, g, 4)
    assert np.allclose(np.diff(traj.times), 0.25)
    traj0 = controlled_march(ivp, StepperConfig("implicit_euler", 0.25), n_steps=0)
    assert len(traj0.states) == 1 and np.array_equal(traj0.final, ivp.initial)


def test_controlled_march_underflow():
    g = build_grid(2, 2, boundary_spec={"right": "outflow"})
    fl = face_fluxes(g, (1e15, 0))
    ivp = LinearIVP(-np.eye(4), np.ones(4), interval=(0.0, 10.0))
    with pytest.raises(StepControlError):
        controlled_march(ivp, StepperConfig("explicit_euler", 1.0, cfl_max=1.0), fl, g, 1)
    with pytest.raises(ValueError):
        controlled_march(ivp, StepperConfig("explicit_euler", 1.0, cfl_max=1.0), None, None, 1)
