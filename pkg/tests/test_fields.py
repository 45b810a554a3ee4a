import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochqm import fields
from stochqm.errors import InvalidInputError
from stochqm.fields import Grid, ScalarField


def line(n=41, lo=-2.0, hi=2.0):
    return Grid((lo,), (hi,), (n,))


def test_grid_invariants():
    g = Grid((0.0, -1.0), (1.0, 1.0), (11, 21))
    assert g.spacing == pytest.approx((0.1, 0.1))
    with pytest.raises(InvalidInputError):
        Grid((0.0,), (1.0,), (3,))
    with pytest.raises(InvalidInputError):
        Grid((1.0,), (0.0,), (10,))


@pytest.mark.parametrize("boundary", ["open", "dirichlet"])
def test_laplacian_of_quadratic_is_exact_in_interior(boundary):
    g = line()
    f = ScalarField.from_function(g, lambda x: x**2, boundary)
    lap = fields.laplacian(f).values
    np.testing.assert_allclose(lap[1:-1], 2.0, rtol=0, atol=1e-11)
    if boundary == "open":
        np.testing.assert_allclose(lap, 2.0, atol=1e-10)


def test_laplacian_of_constant():
    g = Grid((0, 0), (1, 1), (8, 9))
    f = ScalarField(g, np.full(g.shape, 3.0))
    assert np.max(np.abs(fields.laplacian(f).values)) < 1e-10


def _periodic_sin_error(n, k_modes=2):
    L = 2 * math.pi
    h = L / n
    g = Grid((0.0,), ((n - 1) * h,), (n,))
    k = k_modes * 2 * math.pi / L
    f = ScalarField.from_function(g, lambda x: np.sin(k * x), "periodic")
    exact = -(k**2) * np.sin(k * g.axes[0])
    return np.max(np.abs(fields.laplacian(f).values - exact))


def test_periodic_laplacian_second_order():
    e1, e2 = _periodic_sin_error(64), _periodic_sin_error(128)
    assert e1 < 0.02
    assert e1 / e2 == pytest.approx(4.0, rel=0.02)


def test_gradient_trivial():
    g = line()
    lin = ScalarField.from_function(g, lambda x: x)
    np.testing.assert_allclose(fields.gradient(lin).values[0], 1.0, atol=1e-12)
    const = ScalarField(g, np.full(g.shape, -7.0))
    np.testing.assert_allclose(fields.gradient(const).values, 0.0, atol=1e-12)


def test_gradient_gaussian_second_order():
    errs = []
    for n in (101, 201):
        g = Grid((-5.0,), (5.0,), (n,))
        f = ScalarField.from_function(g, lambda x: np.exp(-(x**2)))
        x = g.axes[0]
        errs.append(np.max(np.abs(fields.gradient(f).values[0] - (-2 * x * np.exp(-(x**2))))))
    assert errs[0] < 0.1**2  # h^2 * max|f'''|/6 with max|f'''| < 6
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_gradient_of_radial_field_is_radial():
    g = Grid((-3, -3), (3, 3), (61, 61))
    f = ScalarField.from_function(g, lambda x, y: np.exp(-(x**2 + y**2)))
    gr = fields.gradient(f).values
    x, y = g.coords()
    r = np.hypot(x, y)
    transverse = (-y * gr[0] + x * gr[1]) / np.where(r > 0, r, 1)
    radial = (x * gr[0] + y * gr[1]) / np.where(r > 0, r, 1)
    h = g.spacing[0]
    # central differences are not isotropic: the transverse part is O(h^2)
    assert np.max(np.abs(transverse)) < h**2 * np.max(np.abs(radial))


def test_integrate_constant_and_gaussian():
    g = Grid((0.0,), (1.0,), (17,))
    assert fields.integrate(ScalarField(g, np.ones(g.shape))) == pytest.approx(1.0, abs=1e-15)
    g = Grid((-10.0,), (10.0,), (401,))
    s = 0.7
    f = ScalarField.from_function(g, lambda x: np.exp(-(x**2) / (2 * s * s)) / math.sqrt(2 * math.pi * s * s))
    assert fields.integrate(f) == pytest.approx(1.0, abs=1e-8)
    g3 = Grid((-6,) * 3, (6,) * 3, (49,) * 3)
    f3 = ScalarField.from_function(g3, lambda x, y, z: np.exp(-(x**2 + y**2 + z**2) / 2) / (2 * math.pi) ** 1.5)
    assert fields.integrate(f3) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_integrate_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    g = Grid((0, 0), (1, 2), (7, 9))
    f = ScalarField(g, rng.normal(size=g.shape))
    h = ScalarField(g, rng.normal(size=g.shape))
    lhs = fields.integrate(ScalarField(g, a * f.values + b * h.values))
    rhs = a * fields.integrate(f) + b * fields.integrate(h)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)))


def test_periodic_laplacian_integrates_to_zero():
    rng = np.random.default_rng(3)
    g = Grid((0, 0), (1, 1), (16, 12))
    f = ScalarField(g, rng.normal(size=g.shape), "periodic")
    assert abs(fields.integrate(fields.laplacian(f))) < 1e-10 * np.max(np.abs(fields.laplacian(f).values))


def test_laplacian_matrix_matches_stencil():
    g = Grid((0, 0), (1, 2), (6, 7))
    rng = np.random.default_rng(0)
    a = rng.normal(size=g.shape)
    for b in ("dirichlet", "periodic"):
        M = fields.laplacian_matrix(g, b)
        np.testing.assert_allclose((M @ a.ravel()).reshape(g.shape), fields.laplacian_array(a, g, b), atol=1e-9)


# -- momentum transform --------------------------------------------------------

HBAR = 1.3


def gaussian_packet(grid, sigma, p0=0.0):
    return ScalarField.from_function(grid, lambda x: np.exp(-(x**2) / (2 * sigma**2) + 1j * p0 * x / HBAR), "dirichlet")


def test_momentum_round_trip():
    g = Grid((-12.0,), (12.0,), (128,))
    psi = gaussian_packet(g, 1.1, p0=0.4)
    back = fields.from_momentum(fields.to_momentum(psi, HBAR))
    assert np.max(np.abs(back.values - psi.values)) < 1e-10


def test_momentum_round_trip_3d():
    g = Grid((-6,) * 3, (6,) * 3, (24, 20, 16))
    psi = ScalarField.from_function(g, lambda x, y, z: np.exp(-(x**2 + 2 * y**2 + z**2) / 2) * (1 + 0.1j * x), "dirichlet")
    spec = fields.to_momentum(psi, HBAR)
    assert np.max(np.abs(fields.from_momentum(spec).values - psi.values)) < 1e-10


def _amplitude_width(axis_vals, amp):
    w = np.abs(amp) ** 2
    mean = np.sum(axis_vals * w) / np.sum(w)
    return math.sqrt(2 * np.sum((axis_vals - mean) ** 2 * w) / np.sum(w))


def test_gaussian_fourier_pair_width():
    g = Grid((-20.0,), (20.0,), (127,))
    sigma = 1.5
    psi = gaussian_packet(g, sigma)
    spec = fields.to_momentum(psi, HBAR)
    assert _amplitude_width(g.axes[0], psi.values) == pytest.approx(sigma, rel=1e-6)
    assert _amplitude_width(spec.grid.axes[0], spec.values) == pytest.approx(HBAR / sigma, rel=1e-6)


def test_parseval():
    g = Grid((-10, -10), (10, 10), (64, 48))
    psi = ScalarField.from_function(g, lambda x, y: np.exp(-(x**2 + (y - 1) ** 2) / 3) * np.exp(0.3j * y), "dirichlet")
    spec = fields.to_momentum(psi, HBAR)
    lhs = fields.integrate(ScalarField(g, np.abs(psi.values) ** 2))
    rhs = fields.integrate(ScalarField(spec.grid, np.abs(spec.values) ** 2)) / (2 * math.pi * HBAR) ** 2
    assert rhs == pytest.approx(lhs, rel=1e-8)


def test_real_even_field_gives_real_even_spectrum():
    g = Grid((-8.0,), (8.0,), (65,))
    psi = ScalarField.from_function(g, lambda x: np.exp(-(x**2)) * (1 + x**2), "dirichlet")
    spec = fields.to_momentum(psi, HBAR)
    assert np.max(np.abs(spec.values.imag)) < 1e-10
    v = spec.values.real
    # odd n: the reciprocal grid is symmetric
    np.testing.assert_allclose(v, v[::-1], atol=1e-10)


def test_boundary_leak_warning():
    g = Grid((-2.0,), (2.0,), (32,))
    psi = gaussian_packet(g, 1.0)
    assert fields.to_momentum(psi, HBAR).warnings
    g = Grid((-15.0,), (15.0,), (64,))
    assert not fields.to_momentum(gaussian_packet(g, 1.0), HBAR).warnings


def test_csv_round_trip(tmp_path):
    g = Grid((0, 0), (1, 2), (5, 6))
    rng = np.random.default_rng(1)
    f = ScalarField(g, rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape), "dirichlet")
    path = tmp_path / "f.csv"
    fields.write_csv(f, path, time=0.25)
    back, meta = fields.read_csv(path)
    assert meta["time"] == 0.25
    assert back.boundary == "dirichlet"
    np.testing.assert_array_equal(back.values, f.values)
    header = path.read_text().splitlines()[1]
    assert header == "x,y,re,im"
