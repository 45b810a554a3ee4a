"""Uniform-grid scalar and vector fields with finite-difference calculus.

Three boundary conventions are recognised and recorded on every field:

``"open"``
    one-sided second-order stencils at the edges (no assumption about the
    outside);
``"dirichlet"``
    the field is clamped to zero one node beyond each edge, which is the
    convention used by the eigen- and time-stepping solvers;
``"periodic"``
    node ``n`` is identified with node ``0``, so the period is ``n * h``.
"""

from dataclasses import dataclass, field as dc_field
import json
import math

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from .errors import InvalidInputError

__all__ = [
    "BOUNDARIES",
    "Grid",
    "ScalarField",
    "VectorField",
    "MomentumSpectrum",
    "laplacian",
    "gradient",
    "divergence",
    "integrate",
    "laplacian_matrix",
    "momentum_grid",
    "to_momentum",
    "from_momentum",
    "interpolate",
    "write_csv",
    "read_csv",
]

BOUNDARIES = ("open", "dirichlet", "periodic")
MIN_POINTS = 4


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid in 1, 2 or 3 dimensions."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        shape = tuple(int(v) for v in np.atleast_1d(self.shape))
        if not (len(lower) == len(upper) == len(shape)):
            raise InvalidInputError("lower, upper and shape must have equal length")
        if not 1 <= len(shape) <= 3:
            raise InvalidInputError("grid dimension must be 1, 2 or 3")
        if any(n < MIN_POINTS for n in shape):
            raise InvalidInputError(f"need at least {MIN_POINTS} points per axis, got {shape}")
        if any(not (math.isfinite(a) and math.isfinite(b) and b > a) for a, b in zip(lower, upper)):
            raise InvalidInputError("each axis needs finite bounds with upper > lower")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def cube(cls, half_width, n, dim=1, center=0.0):
        """Grid on ``[center - half_width, center + half_width]`` along every axis."""
        lo = tuple(float(center) - half_width for _ in range(dim))
        hi = tuple(float(center) + half_width for _ in range(dim))
        return cls(lo, hi, (n,) * dim)

    @property
    def dim(self):
        return len(self.shape)

    @property
    def spacing(self):
        return tuple((b - a) / (n - 1) for a, b, n in zip(self.lower, self.upper, self.shape))

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.shape)]

    def coords(self):
        """Node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    def points(self):
        """Node coordinates as an ``(size, dim)`` array in C order."""
        return self.coords().reshape(self.dim, -1).T

    def weights(self, boundary="open"):
        """Quadrature weights: trapezoid, or the plain rectangle rule when periodic."""
        w = np.ones(self.shape)
        for axis, (n, h) in enumerate(zip(self.shape, self.spacing)):
            wa = np.full(n, h)
            if boundary != "periodic":
                wa[0] = wa[-1] = 0.5 * h
            shape = [1] * self.dim
            shape[axis] = n
            w = w * wa.reshape(shape)
        return w

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}


def _check_boundary(boundary):
    if boundary not in BOUNDARIES:
        raise InvalidInputError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray
    boundary: str = "open"

    def __post_init__(self):
        _check_boundary(self.boundary)
        values = np.asarray(self.values)
        if not np.iscomplexobj(values):
            values = values.astype(float)
        if values.shape != self.grid.shape:
            raise InvalidInputError(f"values shape {values.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid, func, boundary="open"):
        return cls(grid, func(*grid.coords()), boundary)

    def with_values(self, values):
        return ScalarField(self.grid, values, self.boundary)

    @property
    def is_complex(self):
        return np.iscomplexobj(self.values)


@dataclass(frozen=True)
class VectorField:
    grid: Grid
    values: np.ndarray  # (dim, *shape)
    boundary: str = "open"

    def __post_init__(self):
        _check_boundary(self.boundary)
        values = np.asarray(self.values)
        if values.shape != (self.grid.dim,) + self.grid.shape:
            raise InvalidInputError("vector field needs one component per grid axis")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("field values must be finite")
        object.__setattr__(self, "values", values)

    def component(self, axis):
        return ScalarField(self.grid, self.values[axis], self.boundary)

    def norm(self):
        return ScalarField(self.grid, np.sqrt(np.sum(np.abs(self.values) ** 2, axis=0)), self.boundary)


# -- finite differences -------------------------------------------------------


def _shift(a, axis, offset, boundary):
    """Return a[i + offset] along ``axis`` with the boundary rule applied."""
    if boundary == "periodic":
        return np.roll(a, -offset, axis=axis)
    out = np.zeros_like(a)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if offset > 0:
        src[axis] = slice(offset, n)
        dst[axis] = slice(0, n - offset)
    else:
        src[axis] = slice(0, n + offset)
        dst[axis] = slice(-offset, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _edge(axis, index, ndim):
    s = [slice(None)] * ndim
    s[axis] = index
    return tuple(s)


def second_derivative(a, axis, h, boundary):
    d2 = (_shift(a, axis, 1, boundary) - 2.0 * a + _shift(a, axis, -1, boundary)) / h**2
    if boundary == "open":
        take = lambda i: a[_edge(axis, i, a.ndim)]
        d2[_edge(axis, 0, a.ndim)] = (2 * take(0) - 5 * take(1) + 4 * take(2) - take(3)) / h**2
        d2[_edge(axis, -1, a.ndim)] = (2 * take(-1) - 5 * take(-2) + 4 * take(-3) - take(-4)) / h**2
    return d2


def first_derivative(a, axis, h, boundary):
    d1 = (_shift(a, axis, 1, boundary) - _shift(a, axis, -1, boundary)) / (2.0 * h)
    if boundary == "open":
        take = lambda i: a[_edge(axis, i, a.ndim)]
        d1[_edge(axis, 0, a.ndim)] = (-3 * take(0) + 4 * take(1) - take(2)) / (2.0 * h)
        d1[_edge(axis, -1, a.ndim)] = (3 * take(-1) - 4 * take(-2) + take(-3)) / (2.0 * h)
    return d1


def laplacian_array(a, grid, boundary):
    return sum(second_derivative(a, ax, h, boundary) for ax, h in enumerate(grid.spacing))


def gradient_array(a, grid, boundary):
    return np.stack([first_derivative(a, ax, h, boundary) for ax, h in enumerate(grid.spacing)])


def laplacian(f):
    """Second-order finite-difference Laplacian honouring ``f.boundary``."""
    return ScalarField(f.grid, laplacian_array(f.values, f.grid, f.boundary), f.boundary)


def gradient(f):
    return VectorField(f.grid, gradient_array(f.values, f.grid, f.boundary), f.boundary)


def divergence(v):
    g = v.grid
    out = sum(first_derivative(v.values[ax], ax, h, v.boundary) for ax, h in enumerate(g.spacing))
    return ScalarField(g, out, v.boundary)


def integrate(f):
    """Trapezoidal quadrature (rectangle rule over one period when periodic)."""
    values = f.values if isinstance(f, ScalarField) else np.asarray(f)
    grid = f.grid
    return np.sum(values * grid.weights(f.boundary))


def laplacian_matrix(grid, boundary="dirichlet"):
    """Sparse Laplacian in C order, for the ``dirichlet`` or ``periodic`` convention."""
    if boundary not in ("dirichlet", "periodic"):
        raise InvalidInputError("matrix Laplacian supports 'dirichlet' and 'periodic' only")
    ops = []
    for n, h in zip(grid.shape, grid.spacing):
        d2 = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)], [-1, 0, 1], shape=(n, n), format="lil")
        if boundary == "periodic":
            d2[0, n - 1] = 1.0
            d2[n - 1, 0] = 1.0
        ops.append(d2.tocsr() / h**2)
    eyes = [sp.identity(n, format="csr") for n in grid.shape]
    total = None
    for axis, op in enumerate(ops):
        factors = eyes.copy()
        factors[axis] = op
        term = factors[0]
        for f in factors[1:]:
            term = sp.kron(term, f, format="csr")
        total = term if total is None else total + term
    return total.tocsr()


def interpolate(f, points):
    """Multilinear interpolation of a scalar field at ``points`` of shape ``(m, dim)``."""
    interp = RegularGridInterpolator(f.grid.axes, f.values, method="linear", bounds_error=False, fill_value=None)
    return interp(np.atleast_2d(points))


# -- momentum transform -------------------------------------------------------


@dataclass(frozen=True)
class MomentumSpectrum:
    """Samples of the momentum-space wave function on a reciprocal grid."""

    grid: Grid
    values: np.ndarray
    position_grid: Grid
    hbar: float
    p_max: float = None
    margin: float = None
    warnings: tuple = dc_field(default=())

    def momentum_magnitude(self):
        return np.sqrt(np.sum(self.grid.coords() ** 2, axis=0))


def momentum_grid(grid, hbar):
    """Reciprocal grid: spacing 2 pi hbar / (n h), centred with n//2 negative nodes."""
    lo, hi = [], []
    for n, h in zip(grid.shape, grid.spacing):
        dp = 2.0 * math.pi * hbar / (n * h)
        lo.append(-dp * (n // 2))
        hi.append(dp * (n - 1 - n // 2))
    return Grid(tuple(lo), tuple(hi), grid.shape)


def _axis_kernels(grid, pgrid, hbar):
    kernels = []
    for x, p, h in zip(grid.axes, pgrid.axes, grid.spacing):
        kernels.append(np.exp(-1j * np.outer(p, x) / hbar) * h)
    return kernels


def _apply_axes(values, mats):
    out = values.astype(complex)
    for axis, m in enumerate(mats):
        out = np.moveaxis(np.tensordot(m, out, axes=([1], [axis])), 0, axis)
    return out


def to_momentum(psi, hbar, leak_tol=1e-10):
    """Direct-quadrature transform psi~(p) = sum psi(x) exp(-i p.x / hbar) dV.

    The reciprocal grid is chosen so that :func:`from_momentum` inverts this
    exactly.  A boundary amplitude above ``leak_tol`` of the peak is reported
    in ``warnings`` rather than raised.
    """
    grid = psi.grid
    pgrid = momentum_grid(grid, hbar)
    values = _apply_axes(psi.values, _axis_kernels(grid, pgrid, hbar))
    warnings = []
    peak = np.max(np.abs(psi.values))
    if peak > 0 and _boundary_max(np.abs(psi.values)) > leak_tol * peak:
        warnings.append("wave function is not negligible at the grid boundary; transform is aliased")
    return MomentumSpectrum(pgrid, values, grid, hbar, warnings=tuple(warnings))


def from_momentum(spec, boundary="dirichlet"):
    """Inverse transform with the 1/(2 pi hbar)^d normalisation."""
    grid = spec.position_grid
    mats = []
    for x, p, dp in zip(grid.axes, spec.grid.axes, spec.grid.spacing):
        mats.append(np.exp(1j * np.outer(x, p) / spec.hbar) * (dp / (2.0 * math.pi * spec.hbar)))
    return ScalarField(grid, _apply_axes(spec.values, mats), boundary)


def _boundary_max(a):
    m = 0.0
    for axis in range(a.ndim):
        m = max(m, np.max(a[_edge(axis, 0, a.ndim)]), np.max(a[_edge(axis, -1, a.ndim)]))
    return m


# -- serialization ------------------------------------------------------------

_AXIS_NAMES = ("x", "y", "z")


def _fmt(v):
    return format(float(v), ".17g")


def write_csv(f, path, time=None, extra=None):
    """Write a scalar field as CSV: a ``#`` metadata line, a header, one row per node."""
    meta = {"grid": f.grid.to_dict(), "boundary": f.boundary, "complex": bool(f.is_complex)}
    if time is not None:
        meta["time"] = float(time)
    if extra:
        meta.update(extra)
    cols = list(_AXIS_NAMES[: f.grid.dim]) + ["re"] + (["im"] if f.is_complex else [])
    pts = f.grid.points()
    vals = f.values.ravel()
    lines = ["# " + json.dumps(meta, sort_keys=True), ",".join(cols)]
    for x, v in zip(pts, vals):
        row = [_fmt(c) for c in x] + [_fmt(np.real(v))]
        if f.is_complex:
            row.append(_fmt(np.imag(v)))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Inverse of :func:`write_csv`; returns ``(field, metadata)``."""
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise InvalidInputError("missing field metadata line")
        meta = json.loads(first[2:])
        fh.readline()
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    g = meta["grid"]
    grid = Grid(tuple(g["lower"]), tuple(g["upper"]), tuple(g["shape"]))
    d = grid.dim
    values = data[:, d]
    if meta.get("complex"):
        values = values + 1j * data[:, d + 1]
    return ScalarField(grid, values.reshape(grid.shape), meta["boundary"]), meta


class UniformInterpolator:
    """Fast multilinear interpolation of array data on a :class:`Grid`.

    Unlike :func:`interpolate` this reports which query points fall outside the
    grid instead of extrapolating.  ``data`` may carry leading component axes,
    i.e. have shape ``(..., *grid.shape)``.
    """

    def __init__(self, grid, data):
        self.grid = grid
        self.data = np.asarray(data)
        self.lead = self.data.shape[: self.data.ndim - grid.dim]
        self._flat = self.data.reshape(self.lead + (grid.size,))
        self._lower = np.array(grid.lower)
        self._h = np.array(grid.spacing)
        self._n = np.array(grid.shape)
        self._strides = np.array([int(np.prod(grid.shape[a + 1 :])) for a in range(grid.dim)])

    def inside(self, points):
        pts = np.atleast_2d(points)
        upper = self._lower + self._h * (self._n - 1)
        return np.all((pts >= self._lower) & (pts <= upper), axis=1)

    def __call__(self, points):
        pts = np.atleast_2d(points)
        u = (pts - self._lower) / self._h
        i0 = np.clip(np.floor(u).astype(np.int64), 0, self._n - 2)
        frac = np.clip(u - i0, 0.0, 1.0)
        out = np.zeros(self.lead + (pts.shape[0],))
        d = self.grid.dim
        for corner in range(1 << d):
            wgt = np.ones(pts.shape[0])
            flat = np.zeros(pts.shape[0], dtype=np.int64)
            for a in range(d):
                bit = (corner >> a) & 1
                wgt = wgt * (frac[:, a] if bit else 1.0 - frac[:, a])
                flat += (i0[:, a] + bit) * self._strides[a]
            out += self._flat[..., flat] * wgt
        return out
