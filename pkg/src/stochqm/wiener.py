"""Empirical checks of the Wiener process: covariance kernel, kink and path dimension.

With increments of variance 2 nu dt per axis, a path started at the origin has
E[w(t1) w(t2)] = 2 nu min(t1, t2).  The kernel has slope 2 nu in t1 below
t2 and 0 above it.  Spatial traces of the path are fractal curves of
dimension 2 in d >= 2.
"""

from dataclasses import asdict, dataclass
import csv
import json

import numpy as np

from .errors import DiagnosticError, InvalidInputError

__all__ = [
    "CovarianceEstimate",
    "OneSidedSlopes",
    "DimensionReport",
    "covariance",
    "covariance_surface",
    "increment_covariance",
    "covariance_matrix",
    "one_sided_derivative",
    "fractal_dimension",
    "brownian_path",
    "straight_path",
]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sample E[w(t1) w(t2)] averaged over paths and axes; entries may be arrays."""

    t1: np.ndarray
    t2: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    n: int

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["t1", "t2", "estimate", "stderr", "n"])
            for row in zip(*(np.ravel(v) for v in (self.t1, self.t2, self.estimate, self.stderr))):
                out.writerow([format(float(v), ".17g") for v in row] + [self.n])


def _column(ens, t):
    if not 0 <= t <= ens.horizon * (1 + 1e-12):
        raise InvalidInputError(f"time {t} lies outside the ensemble horizon [0, {ens.horizon}]")
    return ens.at(t)


def _mean_se(per_path):
    n = per_path.size
    if n < 2:
        raise InvalidInputError("need at least two paths for a standard error")
    return float(np.mean(per_path)), float(np.std(per_path, ddof=1) / np.sqrt(n))


def covariance(ensemble, t1, t2):
    """E[w(t1) w(t2)] with its standard error.  Paths must start at the origin with zero drift."""
    a, b = _column(ensemble, t1), _column(ensemble, t2)
    # the product is commutative elementwise, so (t1, t2) and (t2, t1) agree bit for bit
    est, se = _mean_se(np.mean(a * b, axis=1))
    return CovarianceEstimate(float(t1), float(t2), est, se, ensemble.n_paths)


def covariance_surface(ensemble, times):
    """Covariance on the product grid times x times."""
    times = np.asarray(times, dtype=float)
    est = np.empty((times.size, times.size))
    se = np.empty_like(est)
    for i, s in enumerate(times):
        for j, t in enumerate(times):
            c = covariance(ensemble, s, t)
            est[i, j], se[i, j] = c.estimate, c.stderr
    T1, T2 = np.meshgrid(times, times, indexing="ij")
    return CovarianceEstimate(T1, T2, est, se, ensemble.n_paths)


def increment_covariance(ensemble, first, second):
    """E[(w(b) - w(a)) (w(d) - w(c))] for intervals ``first = (a, b)`` and ``second = (c, d)``."""
    (a, b), (c, d) = first, second
    u = _column(ensemble, b) - _column(ensemble, a)
    v = _column(ensemble, d) - _column(ensemble, c)
    return _mean_se(np.mean(u * v, axis=1))


def covariance_matrix(ensemble, times):
    """(matrix, stderr matrix, smallest eigenvalue) of the covariance on ``times``."""
    surf = covariance_surface(ensemble, times)
    return surf.estimate, surf.stderr, float(np.min(np.linalg.eigvalsh(surf.estimate)))


@dataclass(frozen=True)
class OneSidedSlopes:
    t2: float
    delta: float
    left: float
    left_stderr: float
    right: float
    right_stderr: float
    n: int


def one_sided_derivative(ensemble, t2, delta=None):
    """Difference quotients of E[w(t1) w(t2)] in t1 from below and above t2.

    The kernel is piecewise linear, so the quotients are unbiased for any
    step; the step only sets the statistical error.  ``delta`` defaults to
    the recorded spacing and must be a multiple of it.
    """
    spacing = float(ensemble.times[1] - ensemble.times[0])
    room = min(t2, ensemble.horizon - t2)
    if room <= 0:
        raise InvalidInputError("t2 must lie strictly inside the ensemble horizon")
    if spacing > room * (1 + 1e-12):
        raise InvalidInputError(f"t1 sampling too coarse: need recorded spacing <= {room:.6g} s around t2 = {t2:.6g} s")
    delta = spacing if delta is None else float(delta)
    k = delta / spacing
    if abs(k - round(k)) > 1e-9 or round(k) < 1 or delta > room * (1 + 1e-12):
        raise InvalidInputError(f"delta must be a positive multiple of {spacing:.6g} s not exceeding {room:.6g} s")
    w2 = _column(ensemble, t2)
    lo = _column(ensemble, t2 - delta)
    hi = _column(ensemble, t2 + delta)
    left, lse = _mean_se(np.mean(w2 * (w2 - lo), axis=1) / delta)
    right, rse = _mean_se(np.mean(w2 * (hi - w2), axis=1) / delta)
    return OneSidedSlopes(float(t2), delta, left, lse, right, rse, ensemble.n_paths)


# -- fractal dimension --------------------------------------------------------------


@dataclass
class DimensionReport:
    dimension: float
    residual: float  # RMS of the log-log fit residuals
    sizes: list
    counts: list
    window: tuple
    decades: float
    n_steps: int
    notes: list

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _box_count(path, origin, eps):
    idx = np.floor((path - origin) / eps).astype(np.int64)
    idx -= idx.min(axis=0)
    span = idx.max(axis=0) + 1
    keys = np.ravel_multi_index(tuple(idx.T), tuple(span))
    return int(np.unique(keys).size)


def fractal_dimension(path, n_sizes=12, min_steps=100_000, min_decades=0.5):
    """Box-counting dimension of a path of shape (n + 1, d), d >= 2.

    Box sizes are spaced geometrically between 10 x the mean step length and
    a tenth of the largest extent, and the dimension is minus the
    least-squares slope of log N(eps) against log eps.
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[1] < 2:
        raise InvalidInputError("path must have shape (steps + 1, d) with d >= 2")
    n_steps = path.shape[0] - 1
    if n_steps < min_steps:
        raise InvalidInputError(f"path has {n_steps} steps; need at least {min_steps}")
    step = float(np.mean(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    extent = float(np.max(np.ptp(path, axis=0)))
    lo, hi = 10 * step, extent / 10
    decades = float(np.log10(hi / lo)) if hi > lo > 0 else 0.0
    if decades < min_decades:
        raise DiagnosticError(
            f"box-size window [{lo:.3g}, {hi:.3g}] spans {decades:.2f} decades; need at least {min_decades}"
        )
    sizes = np.geomspace(lo, hi, n_sizes)
    origin = path.min(axis=0)
    counts = np.array([_box_count(path, origin, e) for e in sizes])
    X = np.log(sizes)
    Y = np.log(counts)
    slope, icept = np.polyfit(X, Y, 1)
    resid = float(np.sqrt(np.mean((Y - (slope * X + icept)) ** 2)))
    notes = []
    if decades < 3:
        notes.append(f"scaling window covers {decades:.2f} decades, fewer than 3")
    return DimensionReport(float(-slope), resid, sizes.tolist(), counts.tolist(), (lo, hi), decades, n_steps, notes)


def brownian_path(n_steps, dt, nu, dim, seed):
    """Single zero-drift path from the origin (increments of variance 2 nu dt per axis)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    inc = rng.standard_normal((n_steps, dim)) * np.sqrt(2 * nu * dt)
    return np.vstack([np.zeros((1, dim)), np.cumsum(inc, axis=0)])


def straight_path(n_steps, dim=2, step=1.0):
    direction = np.ones(dim) / np.sqrt(dim)
    return np.arange(n_steps + 1)[:, None] * step * direction
