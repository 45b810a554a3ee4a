"""Low-energy bremsstrahlung in six models of the same quantum evolution.

Every functional has the Larmor form (2/3)(q^2/c^3) int_0^T I(t) dt and differs
only in the integrand I(t):

    classical      |a(t)|^2 along the classical trajectory
    hydrodynamic   |<a>|^2
    qed            <|a|^2> = |<a>|^2 + Var(a)
    bohmian        int |a(x) + F_QM(x)/m|^2 rho(x) dx
    newtonian      ensemble mean of |a(x_i(t))|^2 over classical trajectories
    stochastic     divergent (Brownian paths have no finite acceleration)

where a(x) = -grad V(x) / m.  All finite models read from one
:class:`EvolutionTrace` so that comparisons share identical dynamics.
"""

from dataclasses import dataclass, field
import csv
import json

import numpy as np

from . import fields, qevolve as qe
from .errors import InvalidInputError
from .fields import ScalarField, UniformInterpolator, VectorField
from .logse import quantum_potential

__all__ = [
    "DIVERGENT",
    "Divergent",
    "MODELS",
    "EvolutionTrace",
    "BremsstrahlungReport",
    "build_trace",
    "larmor_prefactor",
    "classical",
    "hydrodynamic",
    "qed",
    "quantum_force",
    "bohmian",
    "newtonian_ensemble",
    "stochastic_mechanics",
    "report",
]

MODELS = ("classical", "hydrodynamic", "qed", "bohmian", "newtonian", "stochastic")


class Divergent:
    """Sentinel for an infinite radiated energy; compares above every float."""

    _instance = None
    note = "stochastic-mechanics paths are nowhere differentiable, so <a^2> is unbounded"

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Divergent"

    def __str__(self):
        return "divergent"

    def __eq__(self, other):
        return other is self

    def __hash__(self):
        return hash("divergent")

    def __gt__(self, other):
        return other is not self

    def __ge__(self, other):
        return True

    def __lt__(self, other):
        return False

    def __le__(self, other):
        return other is self


DIVERGENT = Divergent()


def larmor_prefactor(q, c):
    return 2.0 * q * q / (3.0 * c**3)


def _time_integral(times, y):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("time grid must be strictly increasing with at least two samples")
    return float(np.trapezoid(np.asarray(y, dtype=float), times))


@dataclass
class EvolutionTrace:
    times: np.ndarray  # (n,) s
    a_mean: np.ndarray  # (n, dim) cm/s^2
    a_var: np.ndarray  # (n,) cm^2/s^4, >= 0
    classical_a: np.ndarray  # (n, dim) along the classical trajectory
    densities: list = field(default_factory=list, repr=False)  # ScalarField per time
    positions: np.ndarray = None  # (n, N, dim) Newtonian ensemble, optional
    V: ScalarField = None
    m: float = 1.0
    q: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("trace times must be strictly increasing")
        if np.any(self.a_var < 0):
            raise InvalidInputError("acceleration variance must be non-negative")

    @property
    def a_squared(self):
        return np.sum(self.a_mean**2, axis=1) + self.a_var


def _sample_nodes(rng, grid, prob, n, axes):
    prob = prob.ravel() / np.sum(prob)
    idx = rng.choice(prob.size, size=n, p=prob)
    pts = np.stack([ax[i] for ax, i in zip(axes, np.unravel_index(idx, grid.shape))], axis=1)
    h = np.array(grid.spacing)
    return pts + (rng.random(pts.shape) - 0.5) * h


def _verlet(x, v, accel, dt, n_steps):
    out = [x.copy()]
    a = accel(x)
    for _ in range(n_steps):
        v_half = v + 0.5 * dt * a
        x = x + dt * v_half
        a = accel(x)
        v = v_half + 0.5 * dt * a
        out.append(x.copy())
    return np.stack(out)


def build_trace(wf, V, T, dt, every=1, kT=0.0, n_samples=0, seed=0, keep_densities=True):
    """Evolve ``wf`` and record everything the six functionals need.

    The classical trajectory starts from <x> and <p> of ``wf``.  With
    ``n_samples > 0`` a Newtonian ensemble is drawn with positions from
    |psi|^2 and momenta from |psi~|^2, independently, and moved by velocity
    Verlet with the same acceleration field.
    """
    grid = wf.grid
    if V is None:
        V = ScalarField(grid, np.zeros(grid.shape))
    a_field = qe.acceleration_field(V, wf.m)
    times, means, vars_, dens = [], [], [], []
    wq = grid.weights(wf.boundary)
    for snap in qe.propagate(wf, V, T, dt, kT=kT, every=every):
        w = wq * snap.density
        w = w / np.sum(w)
        mean = np.array([np.sum(w * a) for a in a_field])
        var = float(np.sum(w * np.sum((a_field - mean.reshape((-1,) + (1,) * grid.dim)) ** 2, axis=0)))
        times.append(snap.t)
        means.append(mean)
        vars_.append(var)
        if keep_densities:
            dens.append(ScalarField(grid, snap.density, wf.boundary))
    times = np.array(times)
    interp = UniformInterpolator(grid, a_field)
    accel = lambda x: interp(x).T
    n_steps = int(round(T / dt))
    x0 = qe.expect(wf, "position")
    p0 = _momentum_mean(wf)
    traj = _verlet(x0[None, :], p0[None, :] / wf.m, accel, dt, n_steps)[::every, 0]
    classical_a = accel(traj)
    positions = None
    if n_samples:
        rng = np.random.default_rng(seed)
        xs = _sample_nodes(rng, grid, wq * wf.density, n_samples, grid.axes)
        spec = fields.to_momentum(wf.psi, wf.hbar)
        pw = spec.grid.weights("periodic") * np.abs(spec.values) ** 2
        ps = _sample_nodes(rng, spec.grid, pw, n_samples, spec.grid.axes)
        positions = _verlet(xs, ps / wf.m, accel, dt, n_steps)[::every]
    return EvolutionTrace(times, np.array(means), np.array(vars_), classical_a, dens, positions, V, wf.m, wf.q, wf.hbar)


def _momentum_mean(wf):
    psi = wf.psi.values
    grad = fields.gradient_array(psi, wf.grid, wf.boundary)
    wq = wf.grid.weights(wf.boundary)
    return wf.hbar * np.array([np.sum(wq * np.imag(np.conj(psi) * g)) for g in grad])


def classical(a_series, times, q, c):
    """(2q^2/3c^3) int |a|^2 dt by the trapezoid rule."""
    a = np.asarray(a_series, dtype=float)
    a2 = a * a if a.ndim == 1 else np.sum(a * a, axis=1)
    return larmor_prefactor(q, c) * _time_integral(times, a2)


def hydrodynamic(trace, q, c):
    return larmor_prefactor(q, c) * _time_integral(trace.times, np.sum(trace.a_mean**2, axis=1))


def qed(trace, q, c):
    return larmor_prefactor(q, c) * _time_integral(trace.times, trace.a_squared)


def quantum_force(rho, hbar, m, boundary="dirichlet"):
    """F_QM = -grad Q with Q = -(hbar^2/2m) lap(sqrt rho)/sqrt rho (rho floored)."""
    Q = quantum_potential(rho, hbar * hbar / (2 * m), boundary)
    grad_b = "periodic" if boundary == "periodic" else "open"
    return VectorField(rho.grid, -fields.gradient_array(Q, rho.grid, grad_b), grad_b)


def bohmian_integrand(trace, V, hbar, m):
    a_field = qe.acceleration_field(V, m)
    out = []
    for rho in trace.densities:
        wq = rho.grid.weights(rho.boundary)
        F = quantum_force(rho, hbar, m, "periodic" if rho.boundary == "periodic" else "dirichlet").values
        resid = a_field + F / m
        w = wq * rho.values
        out.append(float(np.sum(w * np.sum(resid * resid, axis=0)) / np.sum(w)))
    return np.array(out)


def bohmian(trace, V, q, c, hbar, m):
    if not trace.densities:
        raise InvalidInputError("trace carries no density snapshots")
    return larmor_prefactor(q, c) * _time_integral(trace.times, bohmian_integrand(trace, V, hbar, m))


def newtonian_integrand(positions, V, m):
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 3 or positions.shape[1] == 0:
        raise InvalidInputError("need a non-empty (time, sample, dim) position array")
    interp = UniformInterpolator(V.grid, qe.acceleration_field(V, m))
    return np.array([np.mean(np.sum(interp(x) ** 2, axis=0)) for x in positions])


def newtonian_ensemble(positions, times, V, m, q, c):
    """Larmor energy averaged over an ensemble of classical trajectories."""
    return larmor_prefactor(q, c) * _time_integral(times, newtonian_integrand(positions, V, m))


def stochastic_mechanics():
    return DIVERGENT


@dataclass
class BremsstrahlungReport:
    energies: dict  # model -> erg, DIVERGENT, or None when not computed
    integrands: dict = field(default_factory=dict, repr=False)  # model -> array over times
    times: np.ndarray = None

    def __getitem__(self, key):
        return self.energies[key]

    def to_dict(self):
        return {k: (str(v) if v is DIVERGENT else v) for k, v in self.energies.items()}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["time", "model", "integrand"])
            for i, t in enumerate(self.times):
                for model in MODELS:
                    val = self.integrands.get(model)
                    cell = "divergent" if val is None else format(float(val[i]), ".17g")
                    out.writerow([format(float(t), ".17g"), model, cell])


def report(trace, c, V=None):
    """All six functionals for one trace (q, m, hbar taken from the trace)."""
    V = V if V is not None else trace.V
    q, m, hbar = trace.q, trace.m, trace.hbar
    pref = larmor_prefactor(q, c)
    ca = trace.classical_a
    integrands = {
        "classical": np.sum(ca * ca, axis=1),
        "hydrodynamic": np.sum(trace.a_mean**2, axis=1),
        "qed": trace.a_squared,
        "bohmian": bohmian_integrand(trace, V, hbar, m),
    }
    if trace.positions is not None:
        integrands["newtonian"] = newtonian_integrand(trace.positions, V, m)
    energies = {k: pref * _time_integral(trace.times, v) for k, v in integrands.items()}
    if "newtonian" not in energies:
        energies["newtonian"] = None
    energies["stochastic"] = stochastic_mechanics()
    return BremsstrahlungReport({k: energies[k] for k in MODELS}, integrands, trace.times)
