"""Time-dependent Schroedinger evolution on a grid, with an optional kT ln|psi|^2 term.

Stepping is Crank-Nicolson (the Cayley form of exp(-iH dt/hbar)), which is
unitary for Hermitian H, so the norm is conserved to round-off.  The
Hamiltonian uses the ``"dirichlet"`` or ``"periodic"`` Laplacian from
:mod:`stochqm.fields`; a wave function carrying ``"open"`` boundaries is
treated as Dirichlet.

The nonlinear variant adds ``kT ln|psi|^2`` to the potential.  That is the
usual logarithmic nonlinear Schroedinger convention, chosen so the stationary
states are those of :mod:`stochqm.logse` with ``D = hbar^2 / 2m``.
"""

from dataclasses import dataclass, replace
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from . import fields
from .errors import InvalidInputError, SimulationError
from .fields import ScalarField, VectorField
from .logse import RHO_FLOOR

__all__ = [
    "NORM_TOL",
    "WaveFunction",
    "CurrentDensity",
    "hamiltonian",
    "propagate",
    "evolve",
    "evolve_log",
    "evolve_free_spectral",
    "current",
    "expect",
    "energy",
    "gaussian_packet",
]

NORM_TOL = 1e-8
EDGE_TOL = 1e-8
PHASE_LIMIT = 0.1  # max dt * E_max / hbar


def _solver_boundary(boundary):
    return "periodic" if boundary == "periodic" else "dirichlet"


@dataclass(frozen=True)
class WaveFunction:
    psi: ScalarField  # complex, cm^{-d/2}
    m: float  # g
    q: float  # statC
    hbar: float  # erg s
    t: float = 0.0  # s

    def __post_init__(self):
        if not (self.m > 0 and self.hbar > 0):
            raise InvalidInputError("mass and hbar must be positive")
        if not self.psi.is_complex:
            object.__setattr__(self, "psi", self.psi.with_values(self.psi.values.astype(complex)))

    @classmethod
    def normalized(cls, psi, m, q, hbar, t=0.0):
        f = psi
        vals = f.values.astype(complex)
        w = f.grid.weights(_solver_boundary(f.boundary))
        vals = vals / math.sqrt(np.sum(w * np.abs(vals) ** 2))
        return cls(ScalarField(f.grid, vals, _solver_boundary(f.boundary)), m, q, hbar, t)

    @property
    def grid(self):
        return self.psi.grid

    @property
    def boundary(self):
        return _solver_boundary(self.psi.boundary)

    @property
    def density(self):
        return np.abs(self.psi.values) ** 2

    def norm(self):
        return float(np.sum(self.grid.weights(self.boundary) * self.density))

    def edge_ratio(self):
        """Largest |psi| on the grid faces divided by the peak |psi|."""
        a = np.abs(self.psi.values)
        edge = 0.0
        for axis in range(a.ndim):
            edge = max(edge, float(np.max(np.take(a, [0, -1], axis=axis))))
        return edge / float(np.max(a))

    def check(self):
        """Raise InvalidInputError unless the norm and boundary-decay invariants hold."""
        if abs(self.norm() - 1.0) > NORM_TOL:
            raise InvalidInputError(f"wave function norm {self.norm():.12g} is not 1")
        if self.boundary != "periodic" and self.edge_ratio() > EDGE_TOL:
            raise InvalidInputError(f"wave function reaches the grid edge (ratio {self.edge_ratio():.2e})")
        return self


@dataclass(frozen=True)
class CurrentDensity:
    rho_q: ScalarField  # statC / cm^d
    J: VectorField  # statC / (cm^{d-1} s)
    t: float


def gaussian_packet(grid, center, sigma, p0, m, q, hbar, boundary="dirichlet"):
    """Normalised Gaussian with position spread ``sigma`` (|psi|^2 has variance sigma^2) and momentum p0."""
    x = grid.coords()
    c = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    p = np.broadcast_to(np.asarray(p0, dtype=float), (grid.dim,))
    arg = np.zeros(grid.shape, dtype=complex)
    for a in range(grid.dim):
        arg += -((x[a] - c[a]) ** 2) / (4 * sigma**2) + 1j * p[a] * x[a] / hbar
    return WaveFunction.normalized(ScalarField(grid, np.exp(arg), boundary), m, q, hbar)


def hamiltonian(wf, V=None):
    """Sparse H = -(hbar^2/2m) lap + V on the wave function's grid."""
    grid = wf.grid
    H = -(wf.hbar**2 / (2 * wf.m)) * fields.laplacian_matrix(grid, wf.boundary)
    if V is not None:
        if V.grid != grid:
            raise InvalidInputError("potential and wave function grids differ")
        H = H + sp.diags(V.values.ravel().astype(float))
    return H.tocsr()


def _moments(wf, H):
    w = wf.grid.weights(wf.boundary).ravel()
    psi = wf.psi.values.ravel()
    hpsi = H @ psi
    e = float(np.real(np.sum(w * np.conj(psi) * hpsi)))
    e2 = float(np.real(np.sum(w * np.conj(hpsi) * hpsi)))
    return e, math.sqrt(max(e2 - e * e, 0.0))


def _check_resolution(wf, H, V, dt):
    # kinetic energy plus the energy spread: insensitive to constant shifts of V
    e, s = _moments(wf, H)
    if V is not None:
        w = wf.grid.weights(wf.boundary) * wf.density
        e -= float(np.sum(w * V.values) / np.sum(w))
    e_max = abs(e) + 4 * s
    if dt * e_max / wf.hbar >= PHASE_LIMIT:
        raise InvalidInputError(
            f"dt = {dt:.3e} s does not resolve the fastest retained frequency; "
            f"need dt < {PHASE_LIMIT * wf.hbar / e_max:.3e} s"
        )


def _cn_solve(H, dt, hbar, psi):
    n = H.shape[0]
    a = (1j * dt / (2 * hbar)) * H
    eye = sp.identity(n, dtype=complex, format="csc")
    try:
        lu = spl.splu((eye + a).tocsc())
    except RuntimeError as exc:
        raise SimulationError(f"Crank-Nicolson factorisation failed: {exc}") from exc
    out = lu.solve(psi - a @ psi)
    if not np.all(np.isfinite(out)):
        raise SimulationError("Crank-Nicolson solve produced non-finite values")
    return out, lu


def _steps(t, dt):
    if not (dt > 0 and t >= 0):
        raise InvalidInputError("need dt > 0 and t >= 0")
    n = int(round(t / dt))
    if abs(n * dt - t) > 1e-9 * max(t, dt):
        raise InvalidInputError("t must be an integer multiple of dt")
    return n


def propagate(wf, V, t, dt, kT=0.0, every=1):
    """Yield the wave function every ``every`` steps, starting with ``wf`` itself."""
    n = _steps(t, dt)
    H0 = hamiltonian(wf, V)
    _check_resolution(wf, H0, V, dt)
    shape = wf.grid.shape
    psi = wf.psi.values.ravel().astype(complex)
    yield wf
    lu = None
    if kT == 0:
        a = (1j * dt / (2 * wf.hbar)) * H0
        lu = spl.splu((sp.identity(H0.shape[0], dtype=complex, format="csc") + a).tocsc())
    for k in range(1, n + 1):
        if kT == 0:
            psi = lu.solve(psi - a @ psi)
        else:
            # predictor with the log term frozen at step n, corrector at the half-step
            H = H0 + sp.diags(kT * np.log(np.maximum(np.abs(psi) ** 2, RHO_FLOOR)))
            pred, _ = _cn_solve(H, dt, wf.hbar, psi)
            half = 0.5 * (psi + pred)
            H = H0 + sp.diags(kT * np.log(np.maximum(np.abs(half) ** 2, RHO_FLOOR)))
            psi, _ = _cn_solve(H, dt, wf.hbar, psi)
        if k % every == 0 or k == n:
            yield replace(wf, psi=wf.psi.with_values(psi.reshape(shape)), t=wf.t + k * dt)


def evolve(wf, V, t, dt):
    """Advance ``wf`` by time t in steps of dt under H = -(hbar^2/2m) lap + V."""
    for out in propagate(wf, V, t, dt, every=max(1, _steps(t, dt))):
        pass
    return out


def evolve_log(wf, V, kT, t, dt):
    """As :func:`evolve` with kT ln|psi|^2 added to V, applied at half-step values."""
    if kT < 0:
        raise InvalidInputError("kT must be non-negative")
    if kT == 0:
        return evolve(wf, V, t, dt)
    for out in propagate(wf, V, t, dt, kT=kT, every=max(1, _steps(t, dt))):
        pass
    return out


def evolve_free_spectral(wf, t):
    """Exact free evolution: multiply the momentum amplitudes by exp(-i p^2 t / 2 m hbar).

    The direct-quadrature transform pair is an exact round trip, so the only
    approximation is the periodic (band-limited) representation itself.
    """
    spec = fields.to_momentum(wf.psi, wf.hbar, leak_tol=np.inf)
    p2 = spec.momentum_magnitude() ** 2
    spec = replace(spec, values=spec.values * np.exp(-1j * p2 * t / (2 * wf.m * wf.hbar)))
    psi = fields.from_momentum(spec, "periodic")
    return replace(wf, psi=psi, t=wf.t + t)


def spectral_gradient(wf):
    """grad psi via i p / hbar in momentum space, shape ``(dim, *shape)``."""
    spec = fields.to_momentum(wf.psi, wf.hbar, leak_tol=np.inf)
    pc = spec.grid.coords()
    out = []
    for a in range(wf.grid.dim):
        pa = pc[a].copy()
        # the unpaired most-negative node has no partner: drop it as usual for spectral derivatives
        if wf.grid.shape[a] % 2 == 0:
            pa[_first_plane(a, wf.grid.dim)] = 0.0
        out.append(fields.from_momentum(replace(spec, values=spec.values * (1j * pa / wf.hbar)), "periodic").values)
    return np.stack(out)


def _first_plane(axis, ndim):
    s = [slice(None)] * ndim
    s[axis] = 0
    return tuple(s)


def current(wf, method="central"):
    """Charge density q|psi|^2 and current (q hbar / m) Im(psi* grad psi).

    ``method`` is ``"central"`` (second-order differences) or ``"spectral"``
    (exact for band-limited periodic data).
    """
    grid = wf.grid
    psi = wf.psi.values
    if method == "central":
        grad = fields.gradient_array(psi, grid, wf.boundary)
    elif method == "spectral":
        grad = spectral_gradient(wf)
    else:
        raise InvalidInputError(f"unknown gradient method {method!r}")
    J = (wf.q * wf.hbar / wf.m) * np.imag(np.conj(psi)[None] * grad)
    return CurrentDensity(
        ScalarField(grid, wf.q * np.abs(psi) ** 2, wf.boundary),
        VectorField(grid, J, wf.boundary),
        wf.t,
    )


def acceleration_field(V, m):
    """a(x) = -grad V / m with second-order stencils, shape ``(dim, *shape)``."""
    b = "periodic" if V.boundary == "periodic" else "open"
    return -fields.gradient_array(V.values, V.grid, b) / m


def expect(wf, observable, V=None):
    """Quadrature of |psi|^2 times ``position``, ``acceleration`` or ``acceleration_squared``."""
    w = wf.grid.weights(wf.boundary) * wf.density
    w = w / np.sum(w)
    if observable == "position":
        return np.array([np.sum(w * x) for x in wf.grid.coords()])
    if V is None:
        raise InvalidInputError(f"observable {observable!r} needs a potential")
    a = acceleration_field(V, wf.m)
    if observable == "acceleration":
        return np.array([np.sum(w * c) for c in a])
    if observable == "acceleration_squared":
        return float(np.sum(w * np.sum(a * a, axis=0)))
    raise InvalidInputError(f"unknown observable {observable!r}")


def energy(wf, V=None):
    return _moments(wf, hamiltonian(wf, V))[0]
