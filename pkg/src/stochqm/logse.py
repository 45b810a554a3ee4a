"""Ground states of the logarithmic Schroedinger eigenproblem

    [-D lap + V + kT ln rho] e^R = lam e^R,    rho = e^{2R},

where ``D = 2 tau nu kT`` plays the role of hbar^2 / 2m.  Besides the solver
this module exposes the equivalent fixed-point (Gibbs-like) form and the
effective force, and a plain linear ground-state solver used as a reference.

The density is normalised to ``problem.norm`` (1 by default).  Because of the
log term the eigenvalue depends on that choice: rescaling rho by c shifts
lam by kT ln c.
"""

from dataclasses import dataclass, field
import json
import math

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from . import fields
from .errors import ConvergenceError, DiagnosticError, InvalidInputError
from .fields import ScalarField, VectorField

__all__ = [
    "RHO_FLOOR",
    "LogSEProblem",
    "LogSESolution",
    "solve",
    "residual",
    "fixed_point_residual",
    "effective_force",
    "gibbs_limit",
    "linear_ground_state",
    "quantum_potential",
    "dump",
]

RHO_FLOOR = 1e-300


@dataclass
class LogSEProblem:
    V: ScalarField  # erg
    D: float  # erg cm^2, equals 2 tau nu kT
    kT: float  # erg
    tol: float = 1e-10
    max_iter: int = 2000
    damping: float = 0.5
    norm: float = 1.0

    def __post_init__(self):
        if not self.D > 0:
            raise InvalidInputError("D must be positive")
        if not self.kT >= 0:
            raise InvalidInputError("kT must be non-negative")
        if not 0 < self.damping <= 1:
            raise InvalidInputError("damping must lie in (0, 1]")
        if self.norm <= 0:
            raise InvalidInputError("norm must be positive")

    @property
    def grid(self):
        return self.V.grid

    @property
    def boundary(self):
        return "periodic" if self.V.boundary == "periodic" else "dirichlet"


@dataclass
class LogSESolution:
    R: ScalarField
    rho: ScalarField
    lam: float
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)


def _weights(problem):
    return problem.grid.weights(problem.boundary)


def _normalize(phi, w, norm):
    return phi * math.sqrt(norm / np.sum(w * phi * phi))


def _log_rho(phi):
    return np.log(np.maximum(phi * phi, RHO_FLOOR))


def _hamiltonian(problem, lap):
    return -problem.D * lap + sp.diags(problem.V.values.ravel())


def linear_ground_state(V, D, tol=1e-13, max_iter=500):
    """Ground state of -D lap + V by shifted inverse power iteration.

    Returns ``(phi, energy)`` with phi positive and normalised so that the
    trapezoidal integral of phi^2 is one.
    """
    boundary = "periodic" if V.boundary == "periodic" else "dirichlet"
    grid = V.grid
    w = grid.weights(boundary)
    H = -D * fields.laplacian_matrix(grid, boundary) + sp.diags(V.values.ravel())
    # Gershgorin-free lower bound: min V is below the ground energy.
    shift = float(np.min(V.values)) - 1e-3 * (float(np.ptp(V.values)) + D / min(grid.spacing) ** 2)
    lu = spl.splu((H - shift * sp.identity(grid.size)).tocsc())
    phi = np.ones(grid.size)
    energy = np.inf
    for _ in range(max_iter):
        phi = lu.solve(phi)
        phi = _normalize(phi, w.ravel(), 1.0)
        new = float(np.sum(w.ravel() * phi * (H @ phi)))
        if abs(new - energy) <= tol * max(abs(new), 1e-300):
            energy = new
            break
        energy = new
    phi = np.abs(phi).reshape(grid.shape)
    return phi, energy


def _start(problem):
    """Initial iterate and energy scale: the linear ground state, or the Gibbs density when kT dominates."""
    phi_lin, e_lin = linear_ground_state(problem.V, problem.D)
    e_zero = e_lin - float(np.min(problem.V.values))
    if problem.kT > e_zero:
        phi = np.exp(-(problem.V.values - np.min(problem.V.values)) / (2.0 * problem.kT))
    else:
        phi = phi_lin
    return np.maximum(phi.ravel(), math.sqrt(RHO_FLOOR)), max(problem.kT, e_zero, 1e-300)


def residual(phi, problem, lap=None):
    """Return ``(||[H + kT ln rho] phi - lam phi|| / ||phi||, lam)`` with lam the Rayleigh quotient."""
    if lap is None:
        lap = fields.laplacian_matrix(problem.grid, problem.boundary)
    w = _weights(problem).ravel()
    phi = np.asarray(phi).ravel()
    hphi = _hamiltonian(problem, lap) @ phi + problem.kT * _log_rho(phi) * phi
    nrm = np.sum(w * phi * phi)
    lam = float(np.sum(w * phi * hphi) / nrm)
    res = math.sqrt(np.sum(w * (hphi - lam * phi) ** 2) / nrm)
    return res, lam


def solve(problem, initial=None):
    """Real, positive ground state by damped semi-implicit imaginary-time iteration.

    Each sweep solves ``(1/dt + H_k - lam_k + 2kT) psi = (1/dt + 2kT) phi_k``
    where ``H_k = -D lap + V + kT ln rho_k``; the constant ``2kT`` is the
    linearisation of the log term, which keeps the sweep stable when kT
    dominates.  The new iterate is mixed with the old one by
    ``problem.damping`` and renormalised.
    """
    grid = problem.grid
    n = grid.size
    w = _weights(problem).ravel()
    lap = fields.laplacian_matrix(grid, problem.boundary)
    H0 = _hamiltonian(problem, lap)
    kT = problem.kT
    phi, scale = _start(problem)
    if initial is not None:
        phi = np.maximum(np.abs(np.ravel(initial)), math.sqrt(RHO_FLOOR))
    phi = _normalize(phi, w, problem.norm)
    dt = 1.0 / scale
    eye = sp.identity(n, format="csr")
    beta = problem.damping

    history = []
    best, since_best = np.inf, 0
    for it in range(1, problem.max_iter + 1):
        log_rho = _log_rho(phi)
        Hk = H0 + sp.diags(kT * log_rho)
        hphi = Hk @ phi
        nrm = np.sum(w * phi * phi)
        lam = float(np.sum(w * phi * hphi) / nrm)
        res = math.sqrt(np.sum(w * (hphi - lam * phi) ** 2) / nrm)
        history.append(res)
        if res <= problem.tol * max(scale, abs(lam)):
            break
        if res < best * (1 - 1e-3):
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best >= 200:
                raise DiagnosticError(
                    f"log-Schroedinger iteration stalled at residual {res:.3e} (best {best:.3e}); "
                    "the log term may dominate the potential on this grid"
                )
        A = (eye * (1.0 / dt + 2.0 * kT - lam) + Hk).tocsc()
        psi = spl.spsolve(A, phi * (1.0 / dt + 2.0 * kT))
        psi = _normalize(np.abs(psi), w, problem.norm)
        phi = _normalize((1.0 - beta) * phi + beta * psi, w, problem.norm)
        phi = np.maximum(phi, math.sqrt(RHO_FLOOR))
    else:
        raise ConvergenceError(
            f"no convergence in {problem.max_iter} iterations (residual {res:.3e})",
            residual=res,
            iterations=problem.max_iter,
        )

    shape = grid.shape
    rho = (phi * phi).reshape(shape)
    R = 0.5 * np.log(np.maximum(rho, RHO_FLOOR))
    b = problem.boundary
    return LogSESolution(ScalarField(grid, R, b), ScalarField(grid, rho, b), lam, it, res, history)


def quantum_potential(rho, D, boundary="dirichlet"):
    """Return ``-D (lap sqrt(rho)) / sqrt(rho)`` as an array (rho floored)."""
    values = rho.values if isinstance(rho, ScalarField) else np.asarray(rho)
    grid = rho.grid
    root = np.sqrt(np.maximum(values, RHO_FLOOR))
    return -D * fields.laplacian_array(root, grid, boundary) / root


def _check_positive(rho):
    if np.any(rho.values <= 0):
        raise InvalidInputError("density must be strictly positive")


def fixed_point_residual(sol, problem):
    """Max-norm of rho - exp[-(V - D lap(sqrt rho)/sqrt rho - c0)/kT], c0 fixed by normalisation."""
    if not problem.kT > 0:
        raise InvalidInputError("fixed-point form needs kT > 0")
    rho = sol.rho
    _check_positive(rho)
    Q = problem.V.values + quantum_potential(rho, problem.D, problem.boundary)
    g = np.exp(-(Q - np.min(Q)) / problem.kT)
    pred = g * (fields.integrate(rho) / fields.integrate(ScalarField(rho.grid, g, rho.boundary)))
    return float(np.max(np.abs(rho.values - pred)))


def effective_force(sol, problem):
    """-grad[V - D lap(sqrt rho)/sqrt rho]."""
    Q = problem.V.values + quantum_potential(sol.rho, problem.D, problem.boundary)
    grad_b = "periodic" if problem.boundary == "periodic" else "open"
    return VectorField(problem.grid, -fields.gradient_array(Q, problem.grid, grad_b), grad_b)


def gibbs_limit(V, kT):
    """Normalised Boltzmann density exp(-V/kT), shifted by min V to avoid overflow."""
    if not kT > 0:
        raise InvalidInputError("kT must be positive")
    g = np.exp(-(V.values - np.min(V.values)) / kT)
    f = ScalarField(V.grid, g, V.boundary)
    return f.with_values(g / fields.integrate(f))


def dump(sol, problem, prefix):
    """Write ``<prefix>_R.csv`` and ``<prefix>.json``."""
    fields.write_csv(sol.R, f"{prefix}_R.csv")
    doc = {
        "lambda": sol.lam,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "kT": problem.kT,
        "D": problem.D,
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
    return doc
