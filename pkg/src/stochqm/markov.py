"""Stationary Markov diffusions dx = b(x) dt + dW with E(dW_i dW_j) = 2 nu delta_ij dt.

Note the factor 2: the Wiener increments here have variance ``2 nu dt`` per
axis, not the probabilist's ``nu dt``.  Every routine in this module uses the
same convention, so a zero-drift process has E|x(t)|^2 = 2 d nu t.

Two independent routes are provided for the pre-acceleration force
expectation

    F_E(x) = -E[ int_0^inf ds e^{-s} grad V(x(tau s)) | x(0) = x ]:

:func:`force_expectation_mc` averages Euler-Maruyama paths, and
:func:`force_expectation_kernel` integrates grid transition densities from
:class:`KolmogorovSolver` with Gauss-Laguerre quadrature in s.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import json
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_laguerre

from . import fields
from .errors import InvalidInputError, SimulationError
from .fields import Grid, ScalarField, UniformInterpolator

__all__ = [
    "MarkovModel",
    "LinearDrift",
    "GridDrift",
    "ou_model",
    "wiener_model",
    "path_rng",
    "TrajectoryEnsemble",
    "simulate",
    "KolmogorovSolver",
    "TransitionDensity",
    "kolmogorov_forward",
    "kolmogorov_backward",
    "transition_density",
    "stationary_drift",
    "ForceEstimate",
    "force_expectation_mc",
    "force_expectation_kernel",
    "ClosureReport",
    "gibbs_closure",
]

S_MAX = 30.0
LAGUERRE_NODES = 24


# -- models --------------------------------------------------------------------


class LinearDrift:
    """b(x) = -gamma (x - center)."""

    def __init__(self, gamma, center=0.0):
        self.gamma = float(gamma)
        self.center = center

    def __call__(self, x):
        return -self.gamma * (x - self.center)


class ZeroDrift:
    def __call__(self, x):
        return np.zeros_like(x)


class GridDrift:
    """Drift sampled on a grid (shape ``(dim, *grid.shape)``), multilinearly interpolated."""

    def __init__(self, grid, values):
        self.grid = grid
        self.values = np.asarray(values)
        self._interp = UniformInterpolator(grid, self.values)

    def __call__(self, x):
        return self._interp(x).T


@dataclass
class MarkovModel:
    drift: object  # callable (m, dim) -> (m, dim)
    nu: float  # cm^2/s
    dim: int = 1

    def __post_init__(self):
        if not (self.nu >= 0 and math.isfinite(self.nu)):
            raise InvalidInputError("nu must be finite and non-negative")

    def b(self, x):
        return self.drift(np.atleast_2d(x))


def ou_model(gamma, nu, dim=1, center=0.0):
    return MarkovModel(LinearDrift(gamma, center), nu, dim)


def wiener_model(nu, dim=1):
    return MarkovModel(ZeroDrift(), nu, dim)


# -- path simulation -------------------------------------------------------------


def path_rng(seed, index):
    """Generator for path ``index``: a pure function of (seed, index)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))))


def _initial_positions(x0, rngs, dim):
    if callable(x0):
        return np.array([np.asarray(x0(r), dtype=float).reshape(dim) for r in rngs])
    x0 = np.asarray(x0, dtype=float)
    return np.broadcast_to(x0.reshape(-1, dim)[0] if x0.size == dim else x0, (len(rngs), dim)).copy()


def _chunk_noise(seed, start, stop, n_steps, dim, x0):
    rngs = [path_rng(seed, i) for i in range(start, stop)]
    x = _initial_positions(x0, rngs, dim)
    noise = np.stack([r.standard_normal((n_steps, dim)) for r in rngs], axis=1)
    return x, noise


def _euler_chunk(args):
    model, x0, seed, start, stop, n_steps, dt, record_every = args
    dim = model.dim
    x, noise = _chunk_noise(seed, start, stop, n_steps, dim, x0)
    scale = math.sqrt(2.0 * model.nu * dt)
    out = [x.copy()]
    for k in range(n_steps):
        b = model.drift(x)
        if not np.all(np.isfinite(b)):
            bad = start + int(np.flatnonzero(~np.all(np.isfinite(b), axis=1))[0])
            raise SimulationError(f"non-finite drift on path {bad} at step {k}")
        x = x + b * dt + scale * noise[k]
        if (k + 1) % record_every == 0:
            out.append(x.copy())
    return np.stack(out, axis=1)


def _chunks(n, size):
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def _chunk_size(n_steps, dim, budget=2**24):
    return max(1, min(4096, budget // max(1, n_steps * dim)))


def _map(func, tasks, workers):
    if workers and workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, tasks))
    return [func(t) for t in tasks]


@dataclass
class TrajectoryEnsemble:
    times: np.ndarray  # (n_rec,)
    paths: np.ndarray  # (N, n_rec, dim)
    dt: float
    horizon: float
    seed: int

    @property
    def n_paths(self):
        return self.paths.shape[0]

    def at(self, t, tol=1e-9):
        """Positions of every path at recorded time t."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol * max(self.horizon, 1e-300):
            raise InvalidInputError(f"time {t} is not a recorded time of the ensemble")
        return self.paths[:, i, :]

    def to_csv(self, path):
        dim = self.paths.shape[2]
        cols = ["t", "path_id"] + ["x", "y", "z"][:dim]
        lines = [",".join(cols)]
        for k, t in enumerate(self.times):
            tt = format(float(t), ".17g")
            for i in range(self.n_paths):
                lines.append(",".join([tt, str(i)] + [format(float(v), ".17g") for v in self.paths[i, k]]))
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def simulate(model, x0, T, dt, N, seed, record_every=1, workers=1):
    """Euler-Maruyama ensemble of N paths on [0, T].

    ``x0`` is a point (broadcast to every path) or a callable drawing one
    start point from the path's own generator.  Path i depends only on
    ``(seed, i)``, so neither N nor ``workers`` changes any individual path.
    """
    if not dt > 0 or not T > 0:
        raise InvalidInputError("dt and T must be positive")
    if N < 1:
        raise InvalidInputError("need at least one path")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * T:
        raise InvalidInputError("T must be an integer multiple of dt")
    if n_steps % record_every:
        raise InvalidInputError("record_every must divide the number of steps")
    size = _chunk_size(n_steps, model.dim)
    tasks = [(model, x0, seed, a, b, n_steps, dt, record_every) for a, b in _chunks(N, size)]
    paths = np.concatenate(_map(_euler_chunk, tasks, workers), axis=0)
    times = dt * np.arange(0, n_steps + 1, record_every)
    return TrajectoryEnsemble(times, paths, dt, T, seed)


# -- Kolmogorov equations ---------------------------------------------------------


def _bernoulli(z):
    """B(z) = z / (e^z - 1), evaluated stably."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    small = np.abs(z) < 1e-6
    zs = z[small]
    out[small] = 1.0 - zs / 2.0 + zs * zs / 12.0
    zl = z[~small]
    out[~small] = zl / np.expm1(zl)
    return out


@dataclass
class TransitionDensity:
    grid: Grid
    elapsed: float
    sources: np.ndarray  # (n_src, dim) source points
    values: np.ndarray  # (n_src, *grid.shape); values[k] is P_t(., sources[k])


class KolmogorovSolver:
    """Explicit finite-volume solver for the forward and backward equations.

    Nodes are vertex-centred control volumes whose widths equal the
    trapezoid weights, so the trapezoidal integral of P is conserved to
    round-off.  Face fluxes use the Scharfetter-Gummel form

        F = (nu/h) [B(-Pe) P_i - B(Pe) P_j],   Pe = b_face h / nu,

    which is the central flux for small Pe, stays positive for any Pe and
    has the exact discrete steady state P_j/P_i = e^Pe.  Boundaries carry
    zero flux.  The backward generator is the adjoint of the forward one in
    the weighted inner product, so the two routes are exactly dual.
    """

    def __init__(self, model, grid, cfl=0.9):
        if model.dim != grid.dim:
            raise InvalidInputError("model and grid dimensions differ")
        self.model = model
        self.grid = grid
        self.weights = grid.weights("open")
        self.L = self._assemble()
        w = self.weights.ravel()
        self.L_back = (sp.diags(1.0 / w) @ self.L.T @ sp.diags(w)).tocsr()
        rate = float(np.max(np.abs(self.L.diagonal())))
        self.dt_max = cfl / rate if rate > 0 else np.inf
        self.info = {}

    def _assemble(self):
        grid, nu = self.grid, self.model.nu
        n = grid.size
        idx = np.arange(n).reshape(grid.shape)
        coords = grid.coords()
        rows, cols, vals = [], [], []
        self.peclet_max = 0.0
        for axis, h in enumerate(grid.spacing):
            sl_i = [slice(None)] * grid.dim
            sl_j = [slice(None)] * grid.dim
            sl_i[axis] = slice(0, -1)
            sl_j[axis] = slice(1, None)
            i = idx[tuple(sl_i)].ravel()
            j = idx[tuple(sl_j)].ravel()
            mid = 0.5 * (coords[(slice(None),) + tuple(sl_i)] + coords[(slice(None),) + tuple(sl_j)])
            bf = self.model.drift(mid.reshape(grid.dim, -1).T)[:, axis]
            if not np.all(np.isfinite(bf)):
                raise InvalidInputError("drift is not finite on the grid")
            if nu > 0:
                pe = bf * h / nu
                alpha = nu / h * _bernoulli(-pe)
                beta = -nu / h * _bernoulli(pe)
                self.peclet_max = max(self.peclet_max, float(np.max(np.abs(pe), initial=0.0)))
            else:
                # pure advection: first-order upwind
                alpha = np.maximum(bf, 0.0)
                beta = np.minimum(bf, 0.0)
                self.peclet_max = np.inf
            width = np.full(grid.shape[axis], h)
            width[0] = width[-1] = 0.5 * h
            shape = [1] * grid.dim
            shape[axis] = -1
            c = np.broadcast_to(width.reshape(shape), grid.shape).ravel()
            ci, cj = c[i], c[j]
            rows += [i, i, j, j]
            cols += [i, j, i, j]
            vals += [-alpha / ci, -beta / ci, alpha / cj, beta / cj]
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    def _steps(self, t):
        if t < 0:
            raise InvalidInputError("elapsed time must be non-negative")
        if t == 0:
            return 0, 0.0
        n = max(1, math.ceil(t / self.dt_max))
        return n, t / n

    def _run(self, op, u, t):
        n, dt = self._steps(t)
        self.info = {"substeps": n, "dt": dt, "dt_max": self.dt_max, "peclet_max": self.peclet_max}
        for _ in range(n):
            u = u + dt * (op @ u)
        return u

    def forward(self, P0, t):
        shape = P0.shape
        flat = P0.reshape(self.grid.size, -1) if P0.ndim > self.grid.dim else P0.ravel()
        return self._run(self.L, flat, t).reshape(shape)

    def backward(self, f, t):
        shape = f.shape
        flat = f.reshape(self.grid.size, -1) if f.ndim > self.grid.dim else f.ravel()
        return self._run(self.L_back, flat, t).reshape(shape)

    def forward_snapshots(self, P0, times):
        """Evolve P0 once, returning the density at each of the sorted ``times``."""
        out = []
        u = P0.ravel()
        now = 0.0
        total = 0
        for t in times:
            if t < now:
                raise InvalidInputError("snapshot times must be non-decreasing")
            u = self._run(self.L, u, t - now)
            total += self.info["substeps"]
            now = t
            out.append(u.reshape(self.grid.shape).copy())
        self.info["substeps"] = total
        return out

    def deposit(self, points):
        """Unit masses at ``points`` spread onto the grid by multilinear weights."""
        pts = np.atleast_2d(points)
        interp = UniformInterpolator(self.grid, np.zeros(self.grid.shape))
        if not np.all(interp.inside(pts)):
            raise InvalidInputError("source point outside the grid")
        out = np.zeros((pts.shape[0], self.grid.size))
        eye_like = UniformInterpolator(self.grid, np.eye(self.grid.size).reshape((self.grid.size,) + self.grid.shape)) if self.grid.size <= 4096 else None
        for k, p in enumerate(pts):
            if eye_like is not None:
                mass = eye_like(p[None, :])[:, 0]
            else:
                mass = _deposit_weights(self.grid, p)
            out[k] = mass / self.weights.ravel()
        return out.reshape((pts.shape[0],) + self.grid.shape)


def _deposit_weights(grid, p):
    lower = np.array(grid.lower)
    h = np.array(grid.spacing)
    n = np.array(grid.shape)
    u = (p - lower) / h
    i0 = np.clip(np.floor(u).astype(int), 0, n - 2)
    frac = u - i0
    mass = np.zeros(grid.shape)
    for corner in range(1 << grid.dim):
        wgt = 1.0
        idx = []
        for a in range(grid.dim):
            bit = (corner >> a) & 1
            wgt *= frac[a] if bit else 1 - frac[a]
            idx.append(i0[a] + bit)
        mass[tuple(idx)] += wgt
    return mass.ravel()


def kolmogorov_forward(model, P0, t, solver=None):
    """Evolve a density under the forward equation; diagnostics in ``solver.info``."""
    solver = solver or KolmogorovSolver(model, P0.grid)
    if np.any(P0.values < 0):
        raise InvalidInputError("initial density must be non-negative")
    return ScalarField(P0.grid, solver.forward(P0.values, t), "open")


def kolmogorov_backward(model, f, t, solver=None):
    """Return u(x) = E[f(x(t)) | x(0) = x] on the grid."""
    solver = solver or KolmogorovSolver(model, f.grid)
    return ScalarField(f.grid, solver.backward(f.values, t), "open")


def transition_density(model, grid, t, sources, solver=None):
    solver = solver or KolmogorovSolver(model, grid)
    P0 = solver.deposit(sources)
    vals = np.stack([solver.forward(p, t) for p in P0])
    return TransitionDensity(grid, float(t), np.atleast_2d(sources), vals)


def stationary_drift(rho, nu):
    """Model with the zero-current drift b = nu grad ln rho, which leaves rho stationary."""
    if np.any(rho.values <= 0):
        raise InvalidInputError("density must be strictly positive")
    grad_b = "periodic" if rho.boundary == "periodic" else "open"
    b = nu * fields.gradient_array(np.log(rho.values), rho.grid, grad_b)
    return MarkovModel(GridDrift(rho.grid, b), nu, rho.grid.dim)


# -- force expectation -------------------------------------------------------------


@dataclass
class ForceEstimate:
    value: np.ndarray
    stderr: np.ndarray
    n_paths: int
    n_discarded: int = 0


def _grad_interpolator(V):
    grad_b = "periodic" if V.boundary == "periodic" else "open"
    return UniformInterpolator(V.grid, fields.gradient_array(V.values, V.grid, grad_b))


def _mc_chunk(args):
    model, gradV, x, seed, start, stop, n_steps, ds, tau = args
    dim = model.dim
    x0, noise = _chunk_noise(seed, start, stop, n_steps, dim, x)
    dt = tau * ds
    scale = math.sqrt(2.0 * model.nu * dt)
    # trapezoid weights of e^{-s} on [0, S_MAX], renormalised so a constant integrand is exact
    s = ds * np.arange(n_steps + 1)
    w = np.full(n_steps + 1, ds) * np.exp(-s)
    w[0] *= 0.5
    w[-1] *= 0.5
    w /= np.sum(w)
    pos = x0
    alive = gradV.inside(pos)
    acc = w[0] * gradV(pos).T
    for k in range(n_steps):
        b = model.drift(pos)
        if not np.all(np.isfinite(b[alive])):
            raise SimulationError(f"non-finite drift at step {k}")
        pos = pos + b * dt + scale * noise[k]
        alive &= gradV.inside(pos)
        acc += w[k + 1] * gradV(pos).T
    return acc, alive


def force_expectation_mc(model, V, tau, x, N, seed, ds=0.01, s_max=S_MAX, workers=1):
    """Monte Carlo estimate of F_E(x) over N Euler-Maruyama paths started at x.

    The s integral is truncated at ``s_max`` and evaluated by the trapezoid
    rule on the same grid as the path steps (time step ``tau * ds``).  Paths
    that leave V's grid are discarded; more than 1% discards raises a warning.
    """
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    x = np.asarray(x, dtype=float).reshape(model.dim)
    gradV = _grad_interpolator(V)
    n_steps = int(round(s_max / ds))
    size = _chunk_size(n_steps, model.dim)
    tasks = [(model, gradV, x, seed, a, b, n_steps, ds, tau) for a, b in _chunks(N, size)]
    parts = _map(_mc_chunk, tasks, workers)
    samples = np.concatenate([p[0] for p in parts], axis=0)
    alive = np.concatenate([p[1] for p in parts])
    kept = samples[alive]
    discarded = int(N - kept.shape[0])
    if discarded > 0.01 * N:
        warnings.warn(f"{discarded} of {N} paths left the potential grid and were discarded", RuntimeWarning)
    if kept.shape[0] == 0:
        raise SimulationError("every path left the grid")
    mean = -kept.mean(axis=0)
    se = kept.std(axis=0, ddof=1) / math.sqrt(kept.shape[0]) if kept.shape[0] > 1 else np.full(model.dim, np.inf)
    return ForceEstimate(mean, se, int(kept.shape[0]), discarded)


def force_expectation_kernel(model, V, tau, x, n_nodes=LAGUERRE_NODES, solver=None):
    """F_E(x) = -sum_k w_k int grad V(y) P_{tau s_k}(y, x) dy with Gauss-Laguerre (s_k, w_k)."""
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    solver = solver or KolmogorovSolver(model, V.grid)
    grad_b = "periodic" if V.boundary == "periodic" else "open"
    g = fields.gradient_array(V.values, V.grid, grad_b)
    s, w = roots_laguerre(n_nodes)
    P0 = solver.deposit(np.asarray(x, dtype=float).reshape(1, -1))[0]
    snaps = solver.forward_snapshots(P0, tau * s)
    wq = solver.weights
    total = np.zeros(V.grid.dim)
    for wk, P in zip(w, snaps):
        total += wk * np.array([np.sum(wq * P * g[a]) for a in range(V.grid.dim)])
    return -total


# -- Gibbs closure ------------------------------------------------------------------


@dataclass
class ClosureReport:
    points: np.ndarray
    target: np.ndarray  # kT grad ln rho
    kernel: np.ndarray
    kernel_deviation: float  # max |kernel - target| / max |target|
    mc: np.ndarray = None
    mc_stderr: np.ndarray = None
    mc_max_z: float = None
    consistent: bool = True
    notes: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "points": self.points.tolist(),
            "target": self.target.tolist(),
            "kernel": self.kernel.tolist(),
            "kernel_deviation": self.kernel_deviation,
            "consistent": self.consistent,
            "notes": self.notes,
        }
        if self.mc is not None:
            out.update(mc=self.mc.tolist(), mc_stderr=self.mc_stderr.tolist(), mc_max_z=self.mc_max_z)
        return out

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def gibbs_closure(sol, problem, nu, tau, points, n_paths=0, seed=0, ds=0.01, workers=1):
    """Compare both F_E routes against kT grad ln rho at ``points`` (shape ``(m, dim)``).

    The drift is the zero-current choice b = nu grad ln rho of the solved
    density.  ``n_paths = 0`` skips the Monte Carlo route.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    rho = sol.rho
    model = stationary_drift(rho, nu)
    notes = []
    consistent = abs(problem.D - 2.0 * tau * nu * problem.kT) <= 1e-8 * problem.D
    if not consistent:
        notes.append("D != 2 tau nu kT: the solution does not belong to this (nu, tau)")
    grad_b = "periodic" if rho.boundary == "periodic" else "open"
    glog = problem.kT * fields.gradient_array(np.log(rho.values), rho.grid, grad_b)
    target = UniformInterpolator(rho.grid, glog)(points).T
    solver = KolmogorovSolver(model, problem.V.grid)
    kernel = np.array([force_expectation_kernel(model, problem.V, tau, p, solver=solver) for p in points])
    scale = float(np.max(np.abs(target)))
    report = ClosureReport(points, target, kernel, float(np.max(np.abs(kernel - target))) / scale, consistent=consistent, notes=notes)
    if n_paths:
        ests = [force_expectation_mc(model, problem.V, tau, p, n_paths, seed + k, ds=ds, workers=workers) for k, p in enumerate(points)]
        report.mc = np.array([e.value for e in ests])
        report.mc_stderr = np.array([e.stderr for e in ests])
        report.mc_max_z = float(np.max(np.abs(report.mc - target) / report.mc_stderr))
    return report
