import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochqm import logse, markov as mk
from stochqm.errors import InvalidInputError, SimulationError
from stochqm.fields import Grid, ScalarField

from conftest import harmonic_V, scalar_gausson_variance


def _moments(grid, P):
    w = grid.weights()
    x = grid.axes[0]
    m0 = np.sum(w * P)
    m1 = np.sum(w * P * x) / m0
    return m0, m1, np.sum(w * P * x * x) / m0 - m1**2


def test_wiener_second_moment_3d():
    nu, T = 0.3, 2.0
    ens = mk.simulate(mk.wiener_model(nu, 3), np.zeros(3), T, 0.05, 20000, seed=11)
    r2 = np.sum(ens.paths[:, -1] ** 2, axis=1)
    se = r2.std(ddof=1) / np.sqrt(r2.size)
    assert abs(r2.mean() - 6 * nu * T) < 4 * se


def test_ou_stationary_variance():
    gamma, nu = 2.0, 0.5
    ens = mk.simulate(mk.ou_model(gamma, nu), [3.0], 5.0, 0.001, 4000, seed=2, record_every=50)
    x = ens.paths[:, -1, 0]
    # Euler-Maruyama stationary variance of the discrete OU recursion
    dt = 0.001
    exact = nu * dt * 2 / (1 - (1 - gamma * dt) ** 2)
    assert exact == pytest.approx(nu / gamma, rel=2e-3)
    assert abs(x.var(ddof=1) - exact) < 4 * exact * np.sqrt(2 / x.size)


def test_paths_depend_only_on_seed_and_index():
    m = mk.ou_model(1.0, 0.2)
    a = mk.simulate(m, [0.5], 0.5, 0.01, 50, seed=7)
    b = mk.simulate(m, [0.5], 0.5, 0.01, 20, seed=7)
    c = mk.simulate(m, [0.5], 0.5, 0.01, 50, seed=7, workers=2)
    assert np.array_equal(a.paths[:20], b.paths)
    assert np.array_equal(a.paths, c.paths)
    assert a.paths.shape == (50, 51, 1)
    assert not np.array_equal(a.paths, mk.simulate(m, [0.5], 0.5, 0.01, 50, seed=8).paths)


def test_random_start_drawn_from_path_stream():
    m = mk.wiener_model(0.1)
    start = lambda rng: rng.normal(size=1)
    a = mk.simulate(m, start, 0.1, 0.01, 30, seed=5)
    b = mk.simulate(m, start, 0.1, 0.01, 10, seed=5)
    assert np.array_equal(a.paths[:10], b.paths)
    assert np.unique(a.paths[:, 0, 0]).size == 30


def test_nonfinite_drift_names_path():
    class Bad:
        def __call__(self, x):
            out = np.zeros_like(x)
            out[x[:, 0] > 1e6] = np.nan
            return out - 1e9 * x

    with pytest.raises(SimulationError, match="path"):
        mk.simulate(mk.MarkovModel(Bad(), 0.1), [1.0], 1.0, 0.1, 3, seed=0)


def test_bad_inputs():
    m = mk.wiener_model(1.0)
    with pytest.raises(InvalidInputError):
        mk.simulate(m, [0.0], 1.0, 0.3, 3, seed=0)
    with pytest.raises(InvalidInputError):
        mk.simulate(m, [0.0], -1.0, 0.1, 3, seed=0)
    with pytest.raises(InvalidInputError):
        mk.MarkovModel(mk.ZeroDrift(), -1.0)


def test_heat_kernel_l1():
    nu, t = 0.5, 1.0
    grid = Grid.cube(10.0, 801)
    td = mk.transition_density(mk.wiener_model(nu), grid, t, [[0.0]])
    x = grid.axes[0]
    exact = np.exp(-x * x / (4 * nu * t)) / np.sqrt(4 * np.pi * nu * t)
    assert np.sum(grid.weights() * np.abs(td.values[0] - exact)) < 1e-3


def test_mass_conservation_per_step():
    grid = Grid.cube(5.0, 201)
    model = mk.MarkovModel(mk.GridDrift(grid, np.sin(grid.coords())), 0.3)
    solver = mk.KolmogorovSolver(model, grid)
    P = np.exp(-grid.axes[0] ** 2)
    w = grid.weights()
    for _ in range(50):
        new = solver.forward(P, solver.dt_max)
        assert abs(np.sum(w * new) - np.sum(w * P)) < 1e-10 * np.sum(w * P)
        assert np.all(new >= 0)
        P = new


def test_ou_variance_recursion():
    gamma, nu = 1.5, 0.4
    grid = Grid.cube(6.0, 601)
    model = mk.ou_model(gamma, nu)
    solver = mk.KolmogorovSolver(model, grid)
    x = grid.axes[0]
    s0 = 0.3
    P = np.exp(-((x - 1.0) ** 2) / (2 * s0)) / np.sqrt(2 * np.pi * s0)
    for t in (0.2, 0.7, 2.0):
        _, m, v = _moments(grid, solver.forward(P, t))
        assert m == pytest.approx(np.exp(-gamma * t), rel=1e-3)
        exact = s0 * np.exp(-2 * gamma * t) + nu / gamma * (1 - np.exp(-2 * gamma * t))
        assert v == pytest.approx(exact, rel=1e-3)


def test_chapman_kolmogorov():
    grid = Grid.cube(5.0, 121)
    model = mk.ou_model(1.0, 0.5)
    solver = mk.KolmogorovSolver(model, grid)
    P0 = solver.deposit(np.array([[0.7]]))[0]
    one = solver.forward(P0, 0.6)
    # compose through the full kernel matrix at the intermediate time
    K = solver.forward(np.diag(1.0 / grid.weights()), 0.4)
    two = K @ (grid.weights() * one)
    direct = solver.forward(P0, 1.0)
    assert np.sum(grid.weights() * np.abs(two - direct)) < 1e-3


def test_backward_matches_monte_carlo():
    grid = Grid.cube(8.0, 401)
    model = mk.ou_model(1.0, 0.5)
    f = ScalarField(grid, np.cos(grid.axes[0]))
    u = mk.kolmogorov_backward(model, f, 0.8)
    ens = mk.simulate(model, [1.2], 0.8, 0.002, 20000, seed=4, record_every=400)
    vals = np.cos(ens.paths[:, -1, 0])
    se = vals.std(ddof=1) / np.sqrt(vals.size)
    assert abs(np.interp(1.2, grid.axes[0], u.values) - vals.mean()) < 4 * se + 1e-3


def test_forward_backward_duality():
    grid = Grid.cube(4.0, 81)
    model = mk.MarkovModel(mk.GridDrift(grid, -np.tanh(grid.coords())), 0.2)
    solver = mk.KolmogorovSolver(model, grid)
    x = grid.axes[0]
    P0 = np.exp(-((x + 1) ** 2))
    f = x**3 - x
    w = grid.weights()
    lhs = np.sum(w * solver.forward(P0, 0.9) * f)
    rhs = np.sum(w * P0 * solver.backward(f, 0.9))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_forward_is_linear(a, b):
    grid = Grid.cube(3.0, 41)
    solver = mk.KolmogorovSolver(mk.ou_model(0.7, 0.3), grid)
    x = grid.axes[0]
    P, Q = np.exp(-x * x), np.exp(-((x - 1) ** 2))
    lhs = solver.forward(a * P + b * Q, 0.3)
    rhs = a * solver.forward(P, 0.3) + b * solver.forward(Q, 0.3)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_stationary_drift_keeps_density():
    grid = Grid.cube(6.0, 301)
    x = grid.axes[0]
    rho = ScalarField(grid, np.exp(-x * x / 2) / np.sqrt(2 * np.pi))
    nu = 0.7
    model = mk.stationary_drift(rho, nu)
    assert np.allclose(model.b(np.array([[0.3], [-1.1]]))[:, 0], -nu * np.array([0.3, -1.1]))
    # one relaxation time: variance / nu
    out = mk.kolmogorov_forward(model, rho, 1.0 / nu)
    assert np.sum(grid.weights() * np.abs(out.values - rho.values)) < 1e-6


def test_force_closed_form_linear_drift():
    # b = -gamma x with harmonic V: F_E = -K x / (1 + gamma tau)
    gamma, nu, tau, K = 1.0, 1.0, 0.5, 1.0
    grid = Grid.cube(10.0, 401)
    V = ScalarField(grid, 0.5 * K * grid.axes[0] ** 2)
    model = mk.ou_model(gamma, nu)
    exact = -K * 1.0 / (1 + gamma * tau)
    kern = mk.force_expectation_kernel(model, V, tau, [1.0])
    assert kern[0] == pytest.approx(exact, rel=1e-3)
    mc = mk.force_expectation_mc(model, V, tau, [1.0], 20000, seed=9)
    assert abs(mc.value[0] - exact) < 4 * mc.stderr[0] + 1e-3
    assert mc.n_discarded == 0


def test_force_linear_potential_is_exact():
    grid = Grid.cube(6.0, 121)
    V = ScalarField(grid, 2.5 * grid.axes[0])
    model = mk.ou_model(0.4, 0.3)
    mc = mk.force_expectation_mc(model, V, 0.7, [0.2], 200, seed=1)
    assert mc.value[0] == pytest.approx(-2.5, rel=1e-12)
    assert mc.stderr[0] == pytest.approx(0.0, abs=1e-12)
    assert mk.force_expectation_kernel(model, V, 0.7, [0.2])[0] == pytest.approx(-2.5, rel=1e-10)


def test_escaping_paths_are_discarded_with_warning():
    grid = Grid.cube(4.0, 81)
    V = ScalarField(grid, 0.5 * grid.axes[0] ** 2)
    with pytest.warns(RuntimeWarning, match="discarded"):
        mc = mk.force_expectation_mc(mk.wiener_model(1.0), V, 0.1, [0.0], 200, seed=0, ds=0.05)
    assert 2 < mc.n_discarded < 200
    assert mc.n_paths == 200 - mc.n_discarded


def _closure_setup(nu_factor=1.0):
    K, kT, nu, tau = 1.0, 1.0, 1.0, 0.5
    D = 2 * tau * nu * kT
    grid = Grid.cube(8.0, 321)
    problem = logse.LogSEProblem(harmonic_V(grid, K), D, kT)
    sol = logse.solve(problem)
    return sol, problem, nu * nu_factor, tau


def test_gibbs_closure_kernel_route():
    sol, problem, nu, tau = _closure_setup()
    s = scalar_gausson_variance(1.0, problem.kT, problem.D)
    pts = np.array([[-1.5], [-0.5], [0.5], [1.0], [2.0]]) * np.sqrt(s)
    rep = mk.gibbs_closure(sol, problem, nu, tau, pts)
    assert rep.consistent
    assert rep.kernel_deviation < 0.02
    assert np.allclose(rep.target[:, 0], -problem.kT * pts[:, 0] / s, rtol=1e-3)


def test_gibbs_closure_wrong_nu_is_detected():
    sol, problem, nu, tau = _closure_setup()
    pts = np.array([[-1.0], [0.5], [1.5]])
    good = mk.gibbs_closure(sol, problem, nu, tau, pts)
    bad = mk.gibbs_closure(sol, problem, 2 * nu, tau, pts)
    assert not bad.consistent
    assert bad.kernel_deviation > 1.5 * good.kernel_deviation
    assert bad.kernel_deviation > 0.05


def test_gibbs_closure_monte_carlo(tmp_path):
    sol, problem, nu, tau = _closure_setup()
    rep = mk.gibbs_closure(sol, problem, nu, tau, [[0.8]], n_paths=4000, seed=3)
    assert rep.mc_max_z < 4
    rep.to_json(tmp_path / "closure.json")
    assert (tmp_path / "closure.json").read_text().startswith("{")
