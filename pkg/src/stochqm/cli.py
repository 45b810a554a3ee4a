"""Command-line experiment runner.

    stochqm <experiment> [--config FILE] [--seed N] [--out DIR] [--workers N] [-v]

The config is one JSON document ``{"experiment": ..., "seed": ..., "params": {...}}``
where every key is optional and unknown keys are rejected.  Each run writes its
data files and a ``manifest.json`` (version, resolved parameters, checks,
SHA-256 of every output).  Exit status: 0 when every quantitative check
passes, 2 when one fails, 1 on any error.
"""

import argparse
from dataclasses import asdict, fields as dc_fields
import hashlib
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .errors import StochQMError

log = logging.getLogger("stochqm")

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2
TOP_KEYS = {"experiment", "seed", "out", "workers", "params"}


class ConfigError(StochQMError, ValueError):
    """The config document does not match the experiment's schema."""


# -- helpers ---------------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if obj is None or isinstance(obj, (int, str)):
        return obj
    return str(obj)


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(_plain(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _check(name, value, limit, passed=None, kind="max"):
    if passed is None:
        passed = value <= limit if kind == "max" else value >= limit
    return {"name": name, "value": value, "limit": limit, "passed": bool(passed)}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _harmonic(grid, K):
    from .fields import ScalarField

    x = grid.coords()
    return ScalarField(grid, 0.5 * K * np.sum(x * x, axis=0), "dirichlet")


def _gausson_variance(K, kT, D):
    # Gaussian ansatz: K/2 = D/(4 s^2) + kT/(2 s) with s the variance
    return (kT + math.sqrt(kT * kT + 2 * K * D)) / (2 * K)


# -- experiments -----------------------------------------------------------------------


def exp_constants(p, seed, out, workers):
    from . import units

    c = units.preset(p["preset"])
    alpha = units.fine_structure(c)
    tau = units.characteristic_time(c)
    energy = units.electrostatic_energy(c.q, p["separation_cm"])
    write_json(os.path.join(out, "constants.json"), {"alpha": alpha, "tau_s": tau, "energy_eV": energy, "separation_cm": p["separation_cm"]})
    checks = [
        _check("alpha_rel_error", abs(alpha / 7.297352568e-3 - 1), 1e-8),
        _check("coulomb_energy_rel_error", abs(energy / 3.3e-15 - 1), 0.03),
    ]
    return checks


def exp_logse_solve(p, seed, out, workers):
    from . import fields, logse
    from .fields import Grid

    grid = Grid.cube(p["half_width"], p["n"])
    problem = logse.LogSEProblem(_harmonic(grid, p["K"]), p["D"], p["kT"], tol=p["tol"])
    sol = logse.solve(problem)
    logse.dump(sol, problem, os.path.join(out, "logse"))
    fields.write_csv(sol.rho, os.path.join(out, "rho.csv"))
    x = grid.axes[0]
    var = fields.integrate(sol.rho.with_values(sol.rho.values * x * x))
    s = _gausson_variance(p["K"], p["kT"], p["D"])
    checks = [
        _check("residual", sol.residual, p["tol"] * max(p["kT"], abs(sol.lam), 1e-300)),
        _check("gausson_width_rel_error", abs(math.sqrt(var / s) - 1), 1e-4),
    ]
    return checks


def exp_gibbs_closure(p, seed, out, workers):
    from . import logse, markov
    from .fields import Grid

    K, kT, nu, tau = p["K"], p["kT"], p["nu"], p["tau"]
    D = 2 * tau * nu * kT
    grid = Grid.cube(p["half_width"], p["n"])
    problem = logse.LogSEProblem(_harmonic(grid, K), D, kT)
    sol = logse.solve(problem)
    s = _gausson_variance(K, kT, D)
    pts = np.asarray(p["points"], float)[:, None] * math.sqrt(s)
    rep = markov.gibbs_closure(sol, problem, nu, tau, pts, n_paths=p["n_paths"], seed=seed, ds=p["ds"], workers=workers)
    # zero-current drift of a Gaussian is linear with rate nu / s
    closed = -K * pts[:, 0] / (1 + nu / s * tau)
    doc = rep.to_dict()
    doc["ou_closed_form"] = closed
    write_json(os.path.join(out, "closure.json"), doc)
    checks = [
        _check("consistent", float(rep.consistent), 1.0, passed=rep.consistent),
        _check("kernel_vs_kT_grad_ln_rho", rep.kernel_deviation, 0.02),
        _check("kernel_vs_closed_form", float(np.max(np.abs(rep.kernel[:, 0] / closed - 1))), 0.01),
    ]
    if rep.mc is not None:
        z = float(np.max(np.abs(rep.mc[:, 0] - closed) / rep.mc_stderr[:, 0]))
        checks.append(_check("mc_vs_closed_form_z", z, 4.0))
    return checks


def _model(p):
    from . import markov

    if p["model"] == "ou":
        return markov.ou_model(p["gamma"], p["nu"], p["dim"])
    if p["model"] == "wiener":
        return markov.wiener_model(p["nu"], p["dim"])
    raise ConfigError(f"unknown model {p['model']!r}; choose 'ou' or 'wiener'")


def _analytic_moments(p, x0, t):
    if p["model"] == "wiener":
        return x0, np.full_like(x0, 2 * p["nu"] * t)
    g = p["gamma"]
    return x0 * math.exp(-g * t), np.full_like(x0, p["nu"] / g * (1 - math.exp(-2 * g * t)))


def exp_sde(p, seed, out, workers):
    from . import markov

    model = _model(p)
    x0 = np.broadcast_to(np.asarray(p["x0"], float), (p["dim"],)).copy()
    ens = markov.simulate(model, x0, p["T"], p["dt"], p["N"], seed, p["record_every"], workers)
    if p["write_paths"]:
        ens.to_csv(os.path.join(out, "trajectories.csv"))
    X = ens.paths[:, -1, :]
    mean, var = X.mean(axis=0), X.var(axis=0, ddof=1)
    m_ex, v_ex = _analytic_moments(p, x0, p["T"])
    se_m = np.sqrt(var / ens.n_paths)
    dev = X - mean
    se_v = np.sqrt(np.maximum(np.mean(dev**4, axis=0) - var**2, 0) / ens.n_paths)
    write_json(os.path.join(out, "moments.json"), {"time": p["T"], "mean": mean, "var": var, "mean_exact": m_ex, "var_exact": v_ex, "n_paths": ens.n_paths})
    return [
        _check("mean_z", float(np.max(np.abs(mean - m_ex) / se_m)), 4.0),
        _check("var_z", float(np.max(np.abs(var - v_ex) / se_v)), 4.0),
    ]


def exp_kolmogorov(p, seed, out, workers):
    from . import markov
    from .fields import Grid

    p = dict(p, dim=1)
    model = _model(p)
    grid = Grid.cube(p["half_width"], p["n"])
    solver = markov.KolmogorovSolver(model, grid)
    w = grid.weights()
    P0 = solver.deposit(np.array([[p["source"]]]))[0]
    P = solver.forward(P0, p["t"])
    x = grid.axes[0]
    m_ex, v_ex = _analytic_moments(p, np.array([p["source"]]), p["t"])
    exact = np.exp(-((x - m_ex[0]) ** 2) / (2 * v_ex[0])) / math.sqrt(2 * math.pi * v_ex[0])
    l1 = float(np.sum(w * np.abs(P - exact)))
    steps = max(1, solver.info["substeps"])
    drift = abs(np.sum(w * P) - np.sum(w * P0)) / np.sum(w * P0)
    # Chapman-Kolmogorov on a coarse grid: 0.4 t then 0.6 t through the full kernel
    cg = Grid.cube(p["ck_half_width"], p["ck_n"])
    cs = markov.KolmogorovSolver(model, cg)
    cw = cg.weights()
    Q0 = cs.deposit(np.array([[p["source"]]]))[0]
    one = cs.forward(Q0, 0.6 * p["t"])
    Kmat = cs.forward(np.diag(1.0 / cw), 0.4 * p["t"])
    ck = float(np.sum(cw * np.abs(Kmat @ (cw * one) - cs.forward(Q0, p["t"]))))
    with open(os.path.join(out, "density.csv"), "w") as fh:
        fh.write("x,P,exact\n")
        for row in zip(x, P, exact):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    write_json(os.path.join(out, "kolmogorov.json"), {"l1_error": l1, "mass_drift": drift, "steps": steps, "chapman_kolmogorov_l1": ck, "dt_max": solver.dt_max})
    return [
        _check("l1_vs_exact", l1, 1e-3),
        _check("mass_drift_per_step", drift / steps, 1e-10),
        _check("chapman_kolmogorov_l1", ck, 1e-3),
    ]


def exp_force_expectation(p, seed, out, workers):
    from . import markov
    from .fields import Grid, ScalarField

    grid = Grid.cube(p["half_width"], p["n"])
    V = ScalarField(grid, 0.5 * p["K"] * grid.axes[0] ** 2)
    model = markov.ou_model(p["gamma"], p["nu"])
    exact = -p["K"] * p["x"] / (1 + p["gamma"] * p["tau"])
    doc = {"x": p["x"], "closed_form": exact}
    checks = []
    if p["method"] in ("kernel", "both"):
        k = float(markov.force_expectation_kernel(model, V, p["tau"], [p["x"]])[0])
        doc["kernel"] = k
        checks.append(_check("kernel_rel_error", abs(k / exact - 1), 0.01))
    if p["method"] in ("mc", "both"):
        mc = markov.force_expectation_mc(model, V, p["tau"], [p["x"]], p["N"], seed, ds=p["ds"], workers=workers)
        doc.update(mc=float(mc.value[0]), mc_stderr=float(mc.stderr[0]), n_paths=mc.n_paths, n_discarded=mc.n_discarded)
        checks.append(_check("mc_z", abs(mc.value[0] - exact) / mc.stderr[0], 4.0))
    if not checks:
        raise ConfigError("method must be 'kernel', 'mc' or 'both'")
    write_json(os.path.join(out, "force.json"), doc)
    return checks


def exp_bremsstrahlung(p, seed, out, workers):
    from . import logse, qevolve as qe, radiation as rd
    from .fields import Grid, ScalarField

    m, hbar, omega, q, c = p["m"], p["hbar"], p["omega"], p["q"], p["c"]
    grid = Grid.cube(p["half_width"], p["n"])
    preset = p["preset"]
    if preset == "harmonic-ground-state":
        V = _harmonic(grid, m * omega**2)
        phi, _ = logse.linear_ground_state(V, hbar**2 / (2 * m))
        wf = qe.WaveFunction.normalized(ScalarField(grid, phi, "dirichlet"), m, q, hbar)
    elif preset == "coherent-state":
        V = _harmonic(grid, m * omega**2)
        wf = qe.gaussian_packet(grid, p["x0"], math.sqrt(hbar / (2 * m * omega)), p["p0"], m, q, hbar)
    elif preset == "free-packet":
        V = ScalarField(grid, np.zeros(grid.shape), "dirichlet")
        wf = qe.gaussian_packet(grid, p["x0"], p["sigma"], p["p0"], m, q, hbar)
    else:
        raise ConfigError(f"unknown bremsstrahlung preset {preset!r}")
    trace = rd.build_trace(wf, V, p["T"], p["dt"], every=p["every"], n_samples=p["n_samples"], seed=seed)
    rep = rd.report(trace, c)
    rep.to_json(os.path.join(out, "bremsstrahlung.json"))
    rep.to_csv(os.path.join(out, "integrands.csv"))
    E = rep.energies
    checks = [
        _check("qed_ge_hydrodynamic", E["qed"] - E["hydrodynamic"], 0.0, kind="min"),
        _check("stochastic_divergent", str(E["stochastic"]), "divergent", passed=E["stochastic"] is rd.DIVERGENT),
    ]
    if preset == "harmonic-ground-state":
        checks += [
            _check("qed_positive", E["qed"], 0.0, passed=E["qed"] > 0),
            _check("hydrodynamic_over_qed", abs(E["hydrodynamic"]) / E["qed"], 1e-8),
            _check("bohmian_over_qed", abs(E["bohmian"]) / E["qed"], 1e-8),
        ]
    elif preset == "free-packet":
        for k in ("classical", "hydrodynamic", "qed"):
            checks.append(_check(f"{k}_zero", abs(E[k]), 1e-12))
        checks.append(_check("bohmian_positive", E["bohmian"], 0.0, passed=E["bohmian"] > 0))
    else:
        checks.append(_check("hydrodynamic_vs_classical", abs(E["hydrodynamic"] / E["classical"] - 1), 1e-3))
    return checks


def exp_nonrad_verify(p, seed, out, workers):
    from . import nonrad

    cfg = nonrad.Theorem1Config(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in p.items()})
    rep = nonrad.verify_theorem1(cfg, workers=workers)
    rep.to_json(os.path.join(out, "flux.json"))
    rep.write_sphere_csv(os.path.join(out, "sphere"))
    return [
        _check("packet_over_control", rep.packet_to_control, 0.01),
        _check("packet_monotone", float(rep.monotone), 1.0, passed=rep.monotone),
        _check("control_flatness", rep.control_flatness, 0.1),
        _check("control_vs_larmor", rep.control_larmor_error, 0.05),
        _check("dipole_agrees", float(rep.dipole["passed"] == rep.passed), 1.0, passed=rep.dipole["passed"] == rep.passed),
    ]


def exp_wiener_props(p, seed, out, workers):
    from . import markov, wiener

    ens = markov.simulate(markov.wiener_model(p["nu"], 1), 0.0, p["T"], p["dt"], p["N"], seed, p["record_every"], workers)
    surf = wiener.covariance_surface(ens, p["times"])
    surf.to_csv(os.path.join(out, "covariance.csv"))
    exact = 2 * p["nu"] * np.minimum(surf.t1, surf.t2)
    z = float(np.max(np.abs(surf.estimate - exact) / surf.stderr))
    sl = wiener.one_sided_derivative(ens, p["t2"], p["delta"])
    write_json(os.path.join(out, "slopes.json"), asdict(sl))
    dims = {}
    for k, d in enumerate(p["dimension_dims"]):
        path = wiener.brownian_path(p["dimension_steps"], p["T"] / p["dimension_steps"], p["nu"], d, seed + 1 + k)
        dims[f"{d}d"] = wiener.fractal_dimension(path).to_dict()
    write_json(os.path.join(out, "dimension.json"), dims)
    checks = [
        _check("covariance_max_z", z, 4.0),
        _check("left_slope_z", abs(sl.left - 2 * p["nu"]) / sl.left_stderr, 4.0),
        _check("right_slope_z", abs(sl.right) / sl.right_stderr, 4.0),
    ]
    for name, rep in dims.items():
        checks.append(_check(f"dimension_{name}_error", abs(rep["dimension"] - 2.0), 0.15))
    return checks


def _theorem1_defaults():
    from .nonrad import Theorem1Config

    return {f.name: (list(v) if isinstance(v, tuple) else v) for f in dc_fields(Theorem1Config) for v in [getattr(Theorem1Config, f.name)]}


EXPERIMENTS = {
    "constants": (exp_constants, {"preset": "electron", "separation_cm": 435e5}),
    "logse-solve": (exp_logse_solve, {"n": 1024, "half_width": 10.0, "K": 1.0, "D": 0.5, "kT": 0.5, "tol": 1e-10}),
    "gibbs-closure": (
        exp_gibbs_closure,
        {"K": 1.0, "kT": 1.0, "nu": 1.0, "tau": 0.5, "half_width": 8.0, "n": 321, "points": [-1.5, -0.5, 0.5, 1.0, 2.0], "n_paths": 0, "ds": 0.01},
    ),
    "sde": (
        exp_sde,
        {"model": "ou", "gamma": 1.0, "nu": 0.5, "dim": 1, "x0": [1.0], "T": 1.0, "dt": 0.01, "N": 1000, "record_every": 10, "write_paths": True},
    ),
    "kolmogorov": (
        exp_kolmogorov,
        {"model": "wiener", "gamma": 1.0, "nu": 0.5, "half_width": 10.0, "n": 801, "t": 1.0, "source": 0.0, "ck_half_width": 5.0, "ck_n": 121},
    ),
    "force-expectation": (
        exp_force_expectation,
        {"gamma": 1.0, "nu": 1.0, "K": 1.0, "tau": 0.5, "x": 1.0, "half_width": 10.0, "n": 401, "N": 20000, "ds": 0.01, "method": "both"},
    ),
    "bremsstrahlung": (
        exp_bremsstrahlung,
        {
            "preset": "harmonic-ground-state", "n": 801, "half_width": 8.0, "m": 1.0, "hbar": 1.0, "omega": 1.0,
            "q": 1.0, "c": 1.0, "x0": 0.0, "p0": 0.0, "sigma": 1.0, "T": 2.0, "dt": 0.01, "every": 5, "n_samples": 0,
        },
    ),
    "nonrad-verify": (exp_nonrad_verify, None),
    "wiener-props": (
        exp_wiener_props,
        {
            "nu": 0.5, "N": 100000, "T": 1.0, "dt": 0.01, "record_every": 10, "times": [0.2, 0.4, 0.6, 0.8, 1.0],
            "t2": 0.5, "delta": 0.1, "dimension_steps": 1000000, "dimension_dims": [2],
        },
    ),
}


def defaults(experiment):
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {sorted(EXPERIMENTS)}")
    d = EXPERIMENTS[experiment][1]
    return dict(_theorem1_defaults() if d is None else d)


def resolve(experiment, doc=None, seed=None, out=None, workers=None):
    """Merge a config document with defaults and CLI overrides; reject unknown keys."""
    doc = dict(doc or {})
    extra = set(doc) - TOP_KEYS
    if extra:
        raise ConfigError(f"unknown top-level config keys {sorted(extra)}; allowed {sorted(TOP_KEYS)}")
    if doc.get("experiment", experiment) != experiment:
        raise ConfigError(f"config is for {doc['experiment']!r}, not {experiment!r}")
    params = defaults(experiment)
    given = doc.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be an object")
    bad = set(given) - set(params)
    if bad:
        raise ConfigError(f"unknown params for {experiment}: {sorted(bad)}; allowed {sorted(params)}")
    for k, v in given.items():
        ref = params[k]
        if isinstance(ref, (int, float)) and not isinstance(ref, bool) and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ConfigError(f"param {k!r} must be a number")
        if isinstance(ref, str) and not isinstance(v, str):
            raise ConfigError(f"param {k!r} must be a string")
        if isinstance(ref, list) and not isinstance(v, list):
            raise ConfigError(f"param {k!r} must be a list")
        params[k] = v
    seed = seed if seed is not None else doc.get("seed", 0)
    workers = workers if workers is not None else doc.get("workers", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    return {
        "experiment": experiment,
        "seed": seed,
        "params": params,
        "out": out or doc.get("out") or os.path.join("runs", experiment),
        "workers": workers,
    }


def run(config):
    """Execute a resolved config; return (exit status, manifest)."""
    exp = config["experiment"]
    out = config["out"]
    os.makedirs(out, exist_ok=True)
    func = EXPERIMENTS[exp][0]
    t0 = time.perf_counter()
    checks = func(config["params"], config["seed"], out, config["workers"])
    log.info("%s finished in %.1f s with %d worker(s)", exp, time.perf_counter() - t0, config["workers"])
    outputs = {name: _sha256(os.path.join(out, name)) for name in sorted(os.listdir(out)) if name != "manifest.json"}
    passed = all(c["passed"] for c in checks)
    # worker count is deliberately absent: outputs must not depend on it
    manifest = {
        "package": "stochqm",
        "version": __version__,
        "numpy": np.__version__,
        "experiment": exp,
        "seed": config["seed"],
        "params": config["params"],
        "checks": checks,
        "passed": passed,
        "outputs": outputs,
    }
    write_json(os.path.join(out, "manifest.json"), manifest)
    for c in checks:
        log.info("%s %s value=%s limit=%s", "PASS" if c["passed"] else "FAIL", c["name"], c["value"], c["limit"])
    return (EXIT_OK if passed else EXIT_CHECK), manifest


class _Parser(argparse.ArgumentParser):
    # usage errors are config errors (exit 1); exit 2 is reserved for failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"error: {message}\n")


def build_parser():
    ap = _Parser(prog="stochqm", description="Run a stochastic-mechanics experiment.")
    ap.add_argument("experiment", help=", ".join(sorted(EXPERIMENTS)))
    ap.add_argument("--config", help="JSON config document")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory (default runs/<experiment>)")
    ap.add_argument("--workers", type=int)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        doc = {}
        if args.config:
            with open(args.config) as fh:
                doc = json.load(fh)
            if not isinstance(doc, dict):
                raise ConfigError("config must be a JSON object")
        config = resolve(args.experiment, doc, args.seed, args.out, args.workers)
        status, manifest = run(config)
    except (StochQMError, OSError, json.JSONDecodeError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR
    for c in manifest["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (limit {c['limit']})")
    return status


if __name__ == "__main__":
    sys.exit(main())
