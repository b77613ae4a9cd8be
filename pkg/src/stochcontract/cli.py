"""Config-driven experiment runner.

A run reads a YAML config, executes one experiment and writes into the output
directory::

    report.txt        human-readable summary (verdict for ``verify`` runs)
    meta.txt          seeds, package versions and the validated config
    series_*.csv      time series with a one-line header
    grid_*.csv        grid densities in the GridDensity CSV format
    particles_*.csv   particle ensembles (``id,x1,...``) plus a .meta.json sidecar

Exit status: 0 pass or success, 1 fail, 2 inconclusive, 3 error.  The
environment variable ``STOCHCONTRACT_OUTPUT_DIR`` overrides the output
directory given in the config.
"""

from __future__ import annotations

import argparse
import copy
import csv
import logging
import os
import platform
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .fields import CATALOG_NAMES, FieldError, catalog_field
from .fpe import FpeProblem, lemma_tr_two_sided, solve_stationary, standard_lemma_cases
from .harness import (grid_initial, verify_prop1, verify_prop2, verify_thm1, verify_thm2)
from .hopfield import build_model
from .measures import DEFAULT_THRESHOLD, Grid, GridDensity, kde_grid, wasserstein2
from .sde_sim import ParticleEnsemble, sample_measure, simulate_ensemble_path

log = logging.getLogger(__name__)

OUTPUT_ENV = "STOCHCONTRACT_OUTPUT_DIR"
EXIT = {"pass": 0, "success": 0, "fail": 1, "inconclusive": 2, "error": 3}

EXPERIMENTS = ("simulate", "stationary", "wasserstein", "verify", "hopfield-demo",
               "fpe-solve", "lemma-report")
CLAIMS = ("thm1_decay", "prop1_chi_bound", "prop2_mass_sink", "thm2_concentration")

# schema: key -> (kind, required); kinds are checked by _check_value
FIELD_KEYS = {"name": ("str", True), "params": ("map", False)}
MEASURE_KEYS = {"kind": ("str", True), "x": ("vector", False), "mean": ("vector", False),
                "cov": ("matrix_or_pos", False), "center": ("vector", False),
                "radius": ("pos", False), "lo": ("vector", False), "hi": ("vector", False)}
GRID_KEYS = {"half_width": ("pos", False), "n": ("posint", False),
             "x_min": ("real", False), "x_max": ("real", False), "n_x": ("posint", False),
             "y_min": ("real", False), "y_max": ("real", False), "n_y": ("posint", False)}
NUMERIC_KEYS = {
    "dt": ("pos", False), "T": ("pos", False), "T_max": ("pos", False), "N": ("posint", False),
    "seed": ("nonnegint", False), "grid": ("grid", False), "tolerance": ("pos", False),
    "threshold": ("pos", False), "record_interval": ("pos", False),
    "kernel_variance": ("pos", False), "workers": ("posint", False),
    "method": ("str", False), "scheme": ("str", False), "max_steps": ("posint", False),
    "n_nodes": ("posint", False),
}
TARGET_KEYS = {"x_a": ("vector", False), "x_b": ("vector", False), "x_star": ("vector", False),
               "radius": ("pos", False), "omega": ("nonneg", False), "c_star": ("pos", False)}
TOP_KEYS = {
    "experiment": ("str", True), "claim": ("str", False), "drift": ("field", False),
    "diffusion": ("field", False), "diffusion_q": ("field", False),
    "initial": ("measure", False), "initial_b": ("measure", False),
    "numerics": ("numerics", False), "targets": ("targets", False), "output": ("str", False),
}


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.key = key
        self.line = line


@dataclass
class ExperimentConfig:
    experiment: str
    claim: str = None
    drift: dict = None
    diffusion: dict = None
    diffusion_q: dict = None
    initial: dict = None
    initial_b: dict = None
    numerics: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    output: str = "out"

    def to_dict(self):
        out = {"experiment": self.experiment}
        for k in ("claim", "drift", "diffusion", "diffusion_q", "initial", "initial_b"):
            v = getattr(self, k)
            if v is not None:
                out[k] = copy.deepcopy(v)
        if self.numerics:
            out["numerics"] = copy.deepcopy(self.numerics)
        if self.targets:
            out["targets"] = copy.deepcopy(self.targets)
        out["output"] = self.output
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# parsing and validation

def _line(node):
    return node.start_mark.line + 1 if node is not None else None


def _child_nodes(node):
    """Map keys of a mapping node to their value nodes."""
    if isinstance(node, yaml.MappingNode):
        return {k.value: (k, v) for k, v in node.value}
    return {}


def _is_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_value(kind, value, key, node):
    line = _line(node)

    def bad(msg):
        raise ConfigError(f"{key}: {msg}", key, line)

    if kind == "str":
        if not isinstance(value, str):
            bad("expected a string")
    elif kind == "map":
        if not isinstance(value, dict):
            bad("expected a mapping")
    elif kind == "real":
        if not _is_real(value):
            bad("expected a number")
    elif kind == "pos":
        if not _is_real(value) or not value > 0:
            bad("expected a positive number")
    elif kind == "nonneg":
        if not _is_real(value) or value < 0:
            bad("expected a non-negative number")
    elif kind == "posint":
        if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
            bad("expected a positive integer")
    elif kind == "nonnegint":
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            bad("expected a non-negative integer")
    elif kind == "vector":
        if not isinstance(value, list) or not value or not all(_is_real(v) for v in value):
            bad("expected a list of numbers")
    elif kind == "matrix_or_pos":
        if _is_real(value):
            if not value > 0:
                bad("expected a positive number")
        elif not (isinstance(value, list) and all(isinstance(r, list) and all(_is_real(x) for x in r)
                                                   for r in value)):
            bad("expected a positive number or a matrix")
    elif kind == "field":
        _check_section(value, node, FIELD_KEYS, key)
        if value["name"] not in CATALOG_NAMES:
            vn = _child_nodes(node).get("name", (None, node))[1]
            raise ConfigError(f"{key}.name: unknown field {value['name']!r}", value["name"],
                              _line(vn))
    elif kind == "measure":
        _check_section(value, node, MEASURE_KEYS, key)
        if value["kind"] not in ("point", "gaussian", "uniform_ball", "uniform_box"):
            bad(f"unknown measure kind {value['kind']!r}")
    elif kind == "grid":
        _check_section(value, node, GRID_KEYS, key)
    elif kind == "numerics":
        _check_section(value, node, NUMERIC_KEYS, key)
    elif kind == "targets":
        _check_section(value, node, TARGET_KEYS, key)
    else:  # pragma: no cover
        raise AssertionError(kind)


def _check_section(value, node, schema, prefix):
    if not isinstance(value, dict):
        raise ConfigError(f"{prefix}: expected a mapping", prefix, _line(node))
    children = _child_nodes(node)
    for k, v in value.items():
        knode, vnode = children.get(k, (node, node))
        if k not in schema:
            raise ConfigError(f"unknown key {prefix + '.' if prefix else ''}{k}", k, _line(knode))
        _check_value(schema[k][0], v, f"{prefix + '.' if prefix else ''}{k}", vnode)
    for k, (_, required) in schema.items():
        if required and k not in value:
            raise ConfigError(f"missing required key {prefix + '.' if prefix else ''}{k}", k,
                              _line(node))


def parse_config(text):
    """Parse and validate YAML config text into an ``ExperimentConfig``."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from exc
    if data is None:
        raise ConfigError("empty config")
    _check_section(data, node, TOP_KEYS, "")
    children = _child_nodes(node)
    if data["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {data['experiment']!r}", "experiment",
                          _line(children["experiment"][1]))
    if data["experiment"] == "verify":
        if data.get("claim") not in CLAIMS:
            raise ConfigError(f"claim must be one of {', '.join(CLAIMS)}", "claim",
                              _line(children.get("claim", (None, node))[1]))
    for key in ("drift", "diffusion", "diffusion_q"):
        if key in data:
            try:
                catalog_field(data[key]["name"], data[key].get("params"))
            except FieldError as exc:
                vnode = children[key][1]
                raise ConfigError(f"{key}: {exc}", exc.key, _line(vnode)) from exc
    return ExperimentConfig(**data)


def load_config(path):
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# helpers

def _field(section, kind):
    drift, diff = catalog_field(section["name"], section.get("params"))
    return drift if kind == "drift" else diff


def _pair(cfg):
    """Drift and diffusion: the diffusion section wins over the drift's paired one."""
    if cfg.drift is None:
        raise ConfigError("this experiment needs a drift section", "drift")
    f, G = catalog_field(cfg.drift["name"], cfg.drift.get("params"))
    if cfg.diffusion is not None:
        G = _field(cfg.diffusion, "diffusion")
    if f is None:
        raise ConfigError(f"{cfg.drift['name']} is not a drift", "drift")
    if G is None:
        raise ConfigError("no diffusion available for this drift", "diffusion")
    return f, G


def _grid(num, default_half=4.0, default_n=96):
    g = num.get("grid", {})
    if "x_min" in g:
        return Grid(g["x_min"], g["x_max"], g["n_x"], g["y_min"], g["y_max"], g["n_y"])
    return Grid.square(g.get("half_width", default_half), g.get("n", default_n))


def _omega(G):
    consts = G.constants
    if consts.isotropic_amplitude is None:
        raise ConfigError("this experiment needs a constant isotropic diffusion", "diffusion")
    return consts.isotropic_amplitude


def _write_series(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header.split(","))
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating, int, np.integer))
                        and not isinstance(v, bool) else v for v in row])


def _write_meta(out, cfg, seeds):
    lines = [f"seeds: {seeds}", f"stochcontract: {__version__}", f"numpy: {np.__version__}",
             f"scipy: {scipy.__version__}", f"python: {platform.python_version()}",
             "config:"]
    lines += ["  " + ln for ln in cfg.to_yaml().splitlines()]
    (out / "meta.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# experiments; each returns (status, report_text)

def _run_simulate(cfg, num, out):
    f, G = _pair(cfg)
    seed, N, dt, T = num.get("seed", 0), num.get("N", 1000), num.get("dt", 0.01), num.get("T", 10.0)
    e = ParticleEnsemble(sample_measure(cfg.initial or _default_initial(f.dim), N, seed), 0.0, seed)
    every = max(1, int(round(num.get("record_interval", 0.1) / dt)))
    path = simulate_ensemble_path(e, f, G, dt, int(round(T / dt)), every, num.get("workers", 1))
    d = f.dim
    header = "t," + ",".join(f"mean_x{j + 1}" for j in range(d)) + "," + \
        ",".join(f"var_x{j + 1}" for j in range(d))
    rows = [(t, *s.mean(axis=0), *s.var(axis=0, ddof=1)) for t, s in zip(path.times, path.states)]
    _write_series(out / "series_moments.csv", header, rows)
    path.final.to_csv(out / "particles_final.csv", f.name, dt)
    if d == 2:
        kv = num.get("kernel_variance", 2.0)
        kde_grid(path.final, kv * np.eye(2), _grid(num)).to_csv(out / "grid_kde.csv")
    cov = np.atleast_2d(path.final.covariance())
    text = (f"experiment: simulate\nstatus: success\nparticles: {N}\nT: {T}\ndt: {dt}\n"
            f"final_mean: {path.final.particles.mean(axis=0).tolist()}\n"
            f"final_covariance: {cov.tolist()}\n")
    return "success", text


def _default_initial(d):
    return {"kind": "gaussian", "mean": [0.0] * d, "cov": 1.0}


def _run_stationary(cfg, num, out):
    """Particle run to stationarity under the KDE convergence monitor."""
    f, G = _pair(cfg)
    seed, N, dt = num.get("seed", 0), num.get("N", 2000), num.get("dt", 0.01)
    T_max = num.get("T_max", num.get("T", 50.0))
    threshold = num.get("threshold", DEFAULT_THRESHOLD)
    kv = num.get("kernel_variance", 2.0)
    grid = _grid(num)
    e = ParticleEnsemble(sample_measure(cfg.initial or _default_initial(2), N, seed), 0.0, seed)
    prev = kde_grid(e, kv * np.eye(2), grid)
    rows, converged = [], None
    n_steps = int(round(T_max / dt))
    for _ in range(n_steps):
        e = simulate_ensemble_path(e, f, G, dt, 1).final
        cur = kde_grid(e, kv * np.eye(2), grid)
        diff = float(np.linalg.norm((cur.values - prev.values) * grid.cell_area))
        rows.append((e.time, diff))
        prev = cur
        if diff < threshold:
            converged = e.time
            break
    _write_series(out / "series_convergence.csv", "t,norm", rows)
    prev.to_csv(out / "grid_kde.csv")
    e.to_csv(out / "particles_final.csv", f.name, dt)
    status = "success" if converged is not None else "inconclusive"
    text = (f"experiment: stationary\nstatus: {status}\nconverged_at: {converged}\n"
            f"threshold: {threshold}\nfinal_norm: {rows[-1][1]!r}\nparticles: {N}\n")
    if converged is None:
        text += ("note: the snapshot difference stayed above the threshold; for finite "
                 "ensembles it saturates at the sampling noise floor\n")
    return status, text


def _run_wasserstein(cfg, num, out):
    f, G = _pair(cfg)
    seed, N, dt, T = num.get("seed", 0), num.get("N", 500), num.get("dt", 0.01), num.get("T", 10.0)
    method = num.get("method", "exact_assignment")
    a0 = sample_measure(cfg.initial or _default_initial(f.dim), N, seed)
    b0 = sample_measure(cfg.initial_b or _default_initial(f.dim), N, seed)
    every = max(1, int(round(num.get("record_interval", 0.1) / dt)))
    steps = int(round(T / dt))
    pa = simulate_ensemble_path(ParticleEnsemble(a0, 0.0, seed), f, G, dt, steps, every)
    pb = simulate_ensemble_path(ParticleEnsemble(b0, 0.0, seed), f, G, dt, steps, every)
    rows = [(t, wasserstein2(x, z, method=method, seed=seed).value, method)
            for t, x, z in zip(pa.times, pa.states, pb.states)]
    _write_series(out / "series_w2.csv", "t,w2,method", rows)
    text = (f"experiment: wasserstein\nstatus: success\nmethod: {method}\n"
            f"w2_initial: {rows[0][1]!r}\nw2_final: {rows[-1][1]!r}\n")
    return "success", text


def _run_fpe_solve(cfg, num, out):
    f, G = _pair(cfg)
    grid = _grid(num)
    p = FpeProblem(f, G, grid, dt=num.get("dt"), scheme=num.get("scheme", "exponential"))
    init = grid_initial(cfg.initial, grid) if cfg.initial else None
    history = []
    dens = solve_stationary(p, num.get("tolerance", DEFAULT_THRESHOLD),
                            num.get("max_steps", 1_000_000), initial=init, history=history)
    _write_series(out / "series_residual.csv", "step,residual", history)
    dens.to_csv(out / "grid_stationary.csv")
    text = (f"experiment: fpe-solve\nstatus: success\nstationary_time: {dens.time!r}\n"
            f"steps: {history[-1][0]}\nmass: {dens.mass()!r}\nmean: {dens.mean().tolist()}\n"
            f"covariance: {dens.covariance().tolist()}\ndt: {p.dt!r}\nscheme: {p.scheme}\n")
    return "success", text


def _run_lemma(cfg, num, out):
    n_nodes = num.get("n_nodes", 720)
    rows, lines = [], ["experiment: lemma-report", "status: success",
                       "identity: int (div A, v) dsigma = -int Tr(A J_v^T) dsigma"]
    for name, A, v, q in standard_lemma_cases(n_nodes):
        rep = lemma_tr_two_sided(A, v, q)
        fine = lemma_tr_two_sided(A, v, q.refined())
        drift = max(abs(rep.lhs - fine.lhs), abs(rep.rhs - fine.rhs))
        rows.append((name, rep.lhs, rep.rhs, rep.gap, drift))
        lines.append(f"{name}: lhs={rep.lhs!r} rhs={rep.rhs!r} gap={rep.gap!r} "
                     f"refinement_change={drift!r}")
    with open(out / "series_lemma.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case", "lhs", "rhs", "gap", "refinement_change"])
        w.writerows([(r[0], *(repr(float(x)) for x in r[1:])) for r in rows])
    return "success", "\n".join(lines) + "\n"


def _hopfield_from(cfg):
    params = dict(cfg.drift.get("params") or {})
    return build_model(params.get("u", (1.0, 3.0)), params.get("beta", 2.0))


def _run_hopfield_demo(cfg, num, out):
    """Two shared-noise ensembles: W2 between them over time, the terminal KDE
    and the energy landscape."""
    if cfg.drift is None:
        cfg = copy.deepcopy(cfg)
        cfg.drift = {"name": "hopfield_global", "params": {}}
    f, G = _pair(cfg)
    model = _hopfield_from(cfg)
    seed, N, dt, T = num.get("seed", 0), num.get("N", 2000), num.get("dt", 0.01), num.get("T", 10.0)
    kv = num.get("kernel_variance", 2.0)
    grid = _grid(num, default_half=5.0, default_n=100)
    mu0 = cfg.initial or {"kind": "gaussian", "mean": [2.0, 2.0], "cov": 0.1}
    nu0 = cfg.initial_b or {"kind": "gaussian", "mean": [-2.0, -2.0], "cov": 0.1}
    every = max(1, int(round(num.get("record_interval", 0.1) / dt)))
    steps = int(round(T / dt))
    pa = simulate_ensemble_path(ParticleEnsemble(sample_measure(mu0, N, seed), 0.0, seed),
                                f, G, dt, steps, every)
    pb = simulate_ensemble_path(ParticleEnsemble(sample_measure(nu0, N, seed), 0.0, seed),
                                f, G, dt, steps, every)
    rows = [(t, wasserstein2(x, z).value, "exact_assignment")
            for t, x, z in zip(pa.times, pa.states, pb.states)]
    _write_series(out / "series_w2.csv", "t,w2,method", rows)
    kde = kde_grid(pa.final, kv * np.eye(2), grid)
    kde.to_csv(out / "grid_kde.csv")
    prev = kde_grid(pa.states[-2], kv * np.eye(2), grid)
    last_norm = float(np.linalg.norm((kde.values - prev.values) * grid.cell_area))
    X, Y = np.meshgrid(grid.xs, grid.ys, indexing="ij")
    energy = model.energy(np.stack([X, Y], axis=-1))
    GridDensity(grid, energy, 0.0).to_csv(out / "grid_energy.csv")
    text = (f"experiment: hopfield-demo\nstatus: success\nregime: {model.regime}\n"
            f"beta: {model.beta}\nu: {list(model.u)}\nparticles: {N}\ndt: {dt}\n"
            f"kernel_variance: {kv}\nw2_initial: {rows[0][1]!r}\nw2_final: {rows[-1][1]!r}\n"
            f"last_snapshot_norm: {last_norm!r}\n"
            f"threshold: {num.get('threshold', DEFAULT_THRESHOLD)}\n")
    return "success", text


def _run_verify(cfg, num, out):
    seed, dt = num.get("seed", 0), num.get("dt", 0.01)
    claim = cfg.claim
    tg = cfg.targets or {}
    if claim == "thm1_decay":
        f, G = _pair(cfg)
        rep = verify_thm1(f, G, cfg.initial or {"kind": "gaussian", "mean": [2.0, 2.0], "cov": 0.04},
                          cfg.initial_b or {"kind": "gaussian", "mean": [-2.0, -2.0], "cov": 0.04},
                          num.get("T", 10.0), dt, num.get("N", 400), seed,
                          record_interval=num.get("record_interval", 0.2))
    elif claim == "prop1_chi_bound":
        f, G = _pair(cfg)
        if cfg.diffusion_q is None:
            raise ConfigError("prop1_chi_bound needs a diffusion_q section", "diffusion_q")
        Q = _field(cfg.diffusion_q, "diffusion")
        kv = num.get("kernel_variance", 2.0)
        rep = verify_prop1(f, G, Q, cfg.initial or {"kind": "gaussian", "mean": [0.0, 0.0],
                                                    "cov": 0.05},
                           num.get("T", 10.0), dt, num.get("N", 1024), seed,
                           T_max=num.get("T_max", 20.0), kernel_cov=kv * np.eye(2),
                           threshold=num.get("threshold", DEFAULT_THRESHOLD))
    elif claim == "prop2_mass_sink":
        f, G = _pair(cfg)
        omega = tg.get("omega", _omega(G))
        x_star = tg.get("x_star", [0.0] * f.dim)
        r = tg.get("radius", 1.0)
        mu0 = cfg.initial or {"kind": "uniform_ball", "center": x_star, "radius": r}
        rep = verify_prop2(f, x_star, omega, r, mu0, num.get("T", 10.0), dt,
                           _grid(num, default_half=float(np.max(np.abs(x_star))) + r + 3.0),
                           tg.get("c_star"), num.get("N", 2000), seed,
                           num.get("record_interval", 0.1), num.get("tolerance", 0.02))
    else:
        if cfg.drift is None or not cfg.drift["name"].startswith("hopfield"):
            raise ConfigError("thm2_concentration needs a hopfield drift", "drift")
        f, G = _pair(cfg)
        model = _hopfield_from(cfg)
        eq = model.equilibria()
        deep = [x for x in eq if x[0] > 0 and x[1] < 0]
        shallow = [x for x in eq if x[0] > 0 and x[1] > 0]
        x_a = tg.get("x_a", deep[0].tolist() if deep else None)
        x_b = tg.get("x_b", shallow[0].tolist() if shallow else None)
        if x_a is None or x_b is None:
            raise ConfigError("could not locate default minima; set targets.x_a and x_b",
                              "targets")
        rep = verify_thm2(model, x_a, x_b, tg.get("radius", 0.8), tg.get("omega", _omega(G)),
                          _grid(num, default_half=4.5, default_n=180), drift=f,
                          T=num.get("T", 20.0), dt=dt, n=num.get("N", 2000), seed=seed,
                          mu0_spec=cfg.initial, tol=num.get("tolerance", 0.02),
                          stationary_tol=num.get("threshold", 1e-8))
    for name, (header, rows) in rep.series.items():
        _write_series(out / f"series_{name}.csv", header, rows)
    return rep.verdict, rep.to_text()


RUNNERS = {
    "simulate": _run_simulate, "stationary": _run_stationary, "wasserstein": _run_wasserstein,
    "verify": _run_verify, "hopfield-demo": _run_hopfield_demo, "fpe-solve": _run_fpe_solve,
    "lemma-report": _run_lemma,
}


def run(config_path, output_dir=None):
    """Run one experiment; returns the exit status."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT["error"]
    out = Path(output_dir or os.environ.get(OUTPUT_ENV) or cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT["error"]
    num = cfg.numerics or {}
    _write_meta(out, cfg, {"seed": num.get("seed", 0)})
    try:
        status, text = RUNNERS[cfg.experiment](cfg, num, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT["error"]
    except Exception as exc:
        where = exc.__traceback__
        module = "unknown"
        while where is not None:
            module = where.tb_frame.f_globals.get("__name__", module)
            where = where.tb_next
        print(f"error in {module}: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("%s", traceback.format_exc())
        (out / "report.txt").write_text(f"status: error\nmodule: {module}\nerror: {exc}\n")
        return EXIT["error"]
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT[status]


def main(argv=None):
    ap = argparse.ArgumentParser(prog="stochcontract",
                                 description="Run a stochastic contraction experiment.")
    ap.add_argument("config", help="YAML experiment config")
    ap.add_argument("-o", "--output", help="output directory (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return run(args.config, args.output)


if __name__ == "__main__":
    sys.exit(main())
