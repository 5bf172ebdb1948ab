"""Batch front end: ``hepplab <validate|converge|classical|bogocheck> --config PATH``.

Config files are line oriented ``key = value`` pairs grouped in
``[section]`` blocks; keys before the first section belong to
``[experiment]``.  Unknown keys and sections are hard errors.

Exit codes: 0 all assertions passed, 2 an assertion failed, 3 the config is
invalid, 4 a numerical error stopped the run.  A manifest JSON holding the
resolved config, the seed and every checked number is always written.
"""
import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bogoliubov as bg
from . import classical as cl
from . import fock, hepp, pphi2, suites
from .errors import ConfigError, HepplabError, InvalidModel, ParseError, UnknownKey
from .settings import DEFAULT_TOLERANCES, Tolerances

KINDS = ("validate", "converge", "classical", "bogocheck")
EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# value parsers

def _floats(text):
    return [float(x) for x in text.strip().strip("[]").split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.strip().strip("[]").split(",") if x.strip()]


def _complexes(text):
    return [complex(x.replace(" ", "")) for x in text.strip().strip("[]").split(",") if x.strip()]


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _kind(text):
    if text not in KINDS:
        raise ValueError(f"kind must be one of {', '.join(KINDS)}")
    return text


def _eps(text):
    vals = sorted(_floats(text), reverse=True)
    if not vals or not all(0 < e <= 1 for e in vals):
        raise ValueError("eps values must lie in (0, 1]")
    return vals


def _positive(text):
    v = float(text)
    if not v > 0:
        raise ValueError("tolerances must be positive")
    return v


SCHEMA = {
    "experiment": {"kind": _kind, "seed": int, "out": str},
    "model": {"file": str, "d": int, "dk": float, "m0": float, "g": str, "beta": _floats,
              "jmax": int, "modes": str},
    "run": {"phi0": str, "psi": str, "T": float, "N": _ints, "eps": _eps, "n_grid": int,
            "fluct_M": int, "workers": int, "override": _bool, "cases": int, "suites": str,
            "fock_M": int, "n_symbols": int, "max_order": int},
    "tolerances": {f.name: _positive for f in fields(Tolerances)},
}


@dataclass
class ExperimentConfig:
    kind: str = "validate"
    seed: int = 0
    out: str = "results"
    model: dict = field(default_factory=lambda: {
        "d": 1, "dk": 0.5, "m0": 1.0, "g": "gauss(1.0)",
        "beta": [0.0, 0.0, 0.0, 0.0, 0.4 / np.sqrt(24)], "jmax": None, "modes": "lowest", "file": None})
    phi0: str = "0.5"
    psi: str = "vacuum"
    T: float = 1.0
    N: list = field(default_factory=lambda: [0, 1, 2])
    eps: list = field(default_factory=lambda: [0.32, 0.16, 0.08, 0.04, 0.02])
    n_grid: int = 257
    fluct_M: int = None
    workers: int = 1
    override: bool = True
    cases: int = 20
    suites: str = "all"
    fock_M: int = 40
    n_symbols: int = 10
    max_order: int = 4
    tolerances: Tolerances = DEFAULT_TOLERANCES
    source: str = None

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "tolerances"}
        out["tolerances"] = self.tolerances.as_dict()
        return out


def parse_config(text, source=None):
    """Parse config text into an :class:`ExperimentConfig` with defaults filled."""
    cfg = ExperimentConfig(source=source)
    model = dict(cfg.model)
    tol_changes = {}
    seen = {}
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(f"malformed section header {line!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ParseError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise UnknownKey(key, lineno)
        if (section, key) in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[(section, key)]})", lineno)
        seen[(section, key)] = lineno
        try:
            val = SCHEMA[section][key](value)
        except ValueError as exc:
            raise ParseError(f"bad value for {key!r}: {exc}", lineno) from None
        if section == "model":
            model[key] = val
        elif section == "tolerances":
            tol_changes[key] = val
        else:
            setattr(cfg, key, val)
    inline = {k for s, k in seen if s == "model" and k not in ("file", "modes", "jmax")}
    if model.get("file") and inline:
        raise ConfigError("give the model either as a file or inline, not both")
    if model.get("file") and source:
        model["file"] = str((Path(source).parent / model["file"]).resolve()) \
            if not os.path.isabs(model["file"]) else model["file"]
    cfg.model = model
    cfg.tolerances = DEFAULT_TOLERANCES.updated(**tol_changes)
    if any(n < 0 for n in cfg.N):
        raise ConfigError("N values must be nonnegative")
    cfg.N = sorted(set(cfg.N))
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# model and state construction

def build_config_model(cfg):
    """(GridModel, PotentialSeries on the selected modes, mode indices)."""
    m = cfg.model
    try:
        if m.get("file"):
            model, jmax = pphi2.load_model_spec(m["file"])
            jmax = m.get("jmax") if m.get("jmax") is not None else jmax
        else:
            model = pphi2.build_model(m["d"], m["dk"], m["m0"], pphi2.parse_profile(m["g"]), m["beta"])
            jmax = m.get("jmax")
    except (ValueError, OSError) as exc:
        raise ConfigError(f"model: {exc}") from exc
    modes = m.get("modes") or "lowest"
    if modes == "lowest":
        idx = pphi2.lowest_pair(model)
    elif modes == "all":
        idx = list(range(model.d))
    else:
        idx = _ints(modes)
    V = pphi2.build_potential_tensors(model, jmax_cap=jmax, modes=idx)
    return model, V, idx


def initial_field(cfg, n, rng):
    text = cfg.phi0.strip()
    if text.startswith("random(") and text.endswith(")"):
        scale = float(text[7:-1])
        return scale * (rng.normal(size=n) + 1j * rng.normal(size=n))
    vals = _complexes(text)
    if len(vals) == 1:
        return np.full(n, vals[0], dtype=complex)
    if len(vals) != n:
        raise ConfigError(f"phi0 has {len(vals)} entries for {n} modes")
    return np.array(vals, dtype=complex)


def fluctuation_state(spec, fbasis, N):
    """psi on the fluctuation basis: vacuum, sector:counts or coherent:u (truncated)."""
    spec = spec.strip()
    if spec == "vacuum":
        return fbasis.vacuum()
    kind, _, arg = spec.partition(":")
    if kind == "sector":
        counts = _ints(arg)
        if len(counts) != fbasis.d:
            raise ConfigError("sector occupation has the wrong number of modes")
        return fbasis.basis_vector(counts)
    if kind == "coherent":
        u = np.array(_complexes(arg), dtype=complex)
        if len(u) == 1:
            u = np.full(fbasis.d, u[0])
        vec = fock.coherent_state(fbasis, u, 1.0).vector
        # keep a finite support well below the fluctuation cutoff
        vec[fbasis.sector > fbasis.M - 3 * N - 8] = 0
        return vec / np.linalg.norm(vec)
    raise ConfigError(f"unknown psi spec {spec!r}")


# ---------------------------------------------------------------------------
# experiments

@dataclass
class Results:
    kind: str
    config: dict
    checks: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    failure: dict = None

    @property
    def passed(self):
        return self.failure is None and all(c.passed for c in self.checks)


@dataclass
class Report:
    """One emitted report: a CSV table, a JSON document and summary lines."""

    name: str
    header: list
    rows: list
    document: dict
    lines: list


def _check_table(name, checks, seed):
    rows = [[c.suite, c.name, repr(float(c.value)), repr(float(c.tol)), c.cases, c.passed] for c in checks]
    doc = {"seed": seed, "checks": [c.to_dict() for c in checks]}
    return Report(name, ["suite", "name", "value", "tol", "cases", "passed"], rows, doc,
                  [c.line() for c in checks])


def run_validate(cfg, res):
    names = None if cfg.suites == "all" else [s.strip() for s in cfg.suites.split(",")]
    unknown = set(names or ()) - set(suites.SUITES)
    if unknown:
        raise ConfigError(f"unknown suites {sorted(unknown)}")
    res.checks = suites.run_suites(cfg.seed, cases=cfg.cases, tolerances=cfg.tolerances, names=names)
    res.reports.append(_check_table("validate", res.checks, cfg.seed))


def run_converge(cfg, res):
    model, V, idx = build_config_model(cfg)
    tol = cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    phi0 = initial_field(cfg, V.d, rng)
    pipe = hepp.build_pipeline(V, phi0, cfg.T, max(cfg.N), fluct_M=cfg.fluct_M, n_grid=cfg.n_grid,
                               ode_tol=tol.ode_tol, u2_tol=tol.u2_tol, quad_tol=tol.quad_tol,
                               override=cfg.override)
    psi = fluctuation_state(cfg.psi, pipe.fbasis, max(cfg.N))
    reports = hepp.convergence_study(V, phi0, cfg.T, cfg.N, cfg.eps, psi=psi, model_id=model.describe(),
                                     tolerances=tol, workers=cfg.workers, pipeline=pipe)
    exact = any(r.exact_regime for r in reports.values())
    table = []
    for N, rep in sorted(reports.items()):
        doc = rep.to_dict()
        doc["seed"] = cfg.seed
        rows = [[repr(float(e)), int(M), repr(float(t)), repr(float(a)), repr(float(b)), repr(float(r))]
                for e, M, t, a, b, r in zip(rep.eps, rep.M, rep.tails, rep.err_norm, rep.err_fidelity,
                                            rep.runtime_s)]
        if exact:
            res.checks.append(suites.Check("converge", f"N{N}_exact_regime", max(rep.err_norm), tol.tol_exact,
                                           len(rep.eps)))
            line = f"N={N}  exact regime  max err {max(rep.err_norm):.3e}"
        else:
            target = (N + 1) / 2
            res.checks.append(suites.Check("converge", f"N{N}_slope_offset", abs(rep.slope - target),
                                           tol.slope_band, len(rep.used_eps)))
            line = (f"N={N}  slope {rep.slope:.4f}  target {target:.1f}  "
                    f"CI [{rep.slope_ci[0]:.4f}, {rep.slope_ci[1]:.4f}]  points {len(rep.used_eps)}")
        table.append(line)
        res.reports.append(Report(f"converge_N{N}", ["eps", "M", "tail", "err_norm", "err_fidelity", "runtime_s"],
                                  rows, doc, [line]))
    if not exact and len(reports) > 1:
        ok = hepp.ordering_check(reports)
        res.checks.append(suites.Check("converge", "ordering_smallest_eps", 0.0 if ok else 1.0, 0.0))
    res.summary = {
        "model": model.describe(), "modes": idx, "exact_regime": exact,
        "slopes": {str(N): (None if exact else float(r.slope)) for N, r in reports.items()},
        "errors": {str(N): [float(x) for x in r.err_norm] for N, r in reports.items()},
        "M": {str(N): [int(x) for x in r.M] for N, r in reports.items()},
    }


def run_classical(cfg, res):
    model, V, idx = build_config_model(cfg)
    tol = cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    phi0 = initial_field(cfg, model.d, rng)
    traj = pphi2.integrate_field(model, phi0, cfg.T, tol=tol.ode_tol)
    ts = traj.samples["t"]
    dcirc = pphi2.delta_circ(model, traj, ts)
    dstate = traj.samples["delta"]
    diag = traj.diagnostics
    res.checks.append(suites.Check("classical", "energy_drift", diag["energy_drift"], tol.energy_tol))
    res.checks.append(suites.Check("classical", "energy_lower_bound",
                                   0.0 if diag["energy_bound_ok"] else 1.0, 0.0))
    res.checks.append(suites.Check("classical", "delta_circ_vs_state", float(np.max(np.abs(dcirc - dstate))),
                                   tol.delta_tol, len(ts)))
    if model.d <= 4:
        Vfull = pphi2.build_potential_tensors(model)
        gen = cl.integrate_flow(Vfull, phi0, cfg.T, tol=tol.ode_tol, override=True, check_envelope=False)
        dev = float(np.max(np.abs(dcirc - [gen.delta_at(s) for s in ts])))
        res.checks.append(suites.Check("classical", "delta_circ_vs_tensor_route", dev, tol.delta_tol, len(ts)))
    resid = pphi2.realspace_residual(model, traj, cfg.T / 2)
    rows = []
    for t, z, dc, ds in zip(ts, traj.samples["phi"], dcirc, dstate):
        rows.append([repr(float(t))] + [repr(float(x)) for x in z.real] + [repr(float(x)) for x in z.imag]
                    + [repr(float(ds)), repr(cl.energy(model, z)), repr(float(dc))])
    d = model.d
    header = (["t"] + [f"re_phi{i + 1}" for i in range(d)] + [f"im_phi{i + 1}" for i in range(d)]
              + ["delta", "h", "delta_circ"])
    doc = {"seed": cfg.seed, "model": model.describe(), "diagnostics": _plain(diag),
           "realspace_residual": {"value": resid.value, "h_t": resid.h_t, "candidate_map": resid.enabled,
                                  "note": resid.note}}
    lines = [f"energy drift {diag['energy_drift']:.3e}", f"lower bound ok {diag['energy_bound_ok']}",
             f"real-space residual (candidate map) {resid.value:.3e} at h_t={resid.h_t}"]
    lines += [c.line() for c in res.checks]
    res.reports.append(Report("classical", header, rows, doc, lines))
    res.summary = {"model": model.describe(), "energy_drift": diag["energy_drift"],
                   "delta_T": float(dstate[-1]), "realspace_residual": resid.value}


def run_bogocheck(cfg, res):
    model, V, idx = build_config_model(cfg)
    tol = cfg.tolerances
    rng = np.random.default_rng(cfg.seed)
    phi0 = initial_field(cfg, V.d, rng)
    grid = np.linspace(0.0, cfg.T, 11)
    traj = cl.integrate_flow(V, phi0, cfg.T, tol=tol.ode_tol, override=cfg.override, t_eval=grid)
    qpath = bg.build_V2_path(V, traj, grid)
    maps = bg.integrate_symplectic(qpath, grid)
    basis = fock.FockBasis(V.space, cfg.fock_M)
    prop = bg.integrate_U2(basis, qpath, 1.0, tol=tol.u2_tol)
    times = [grid[3], grid[6], grid[10]]
    guard = basis.M // 4
    rows = []
    worst = 0.0
    for i in range(cfg.n_symbols):
        b = suites.random_symbol(rng, V.d, suites.random_orders(rng, cfg.max_order, 3), 0.5)
        for t in times:
            bh = bg.transport_symbol(b, t, maps)
            dev = bg.transport_deviation(b, bh, prop.at(t), basis, guard=guard) / max(1.0, b.norm())
            worst = max(worst, dev)
            rows.append([i, repr(float(t)), b.order, repr(dev)])
    res.checks.append(suites.Check("bogocheck", "transport_oracle", worst, tol.transport_tol, len(rows)))
    paths = [bg.integrate_U2(basis, qpath, e, tol=tol.u2_tol) for e in (0.5, 0.3)]
    dev = max(float(np.max(np.abs(x - y))) for x, y in zip(paths[0].U_tilde, paths[1].U_tilde))
    res.checks.append(suites.Check("bogocheck", "U2_eps_independence", dev, 1e-8))
    res.checks.append(suites.Check("bogocheck", "U2_unitarity", prop.unitarity(), 1e-9))
    doc = {"seed": cfg.seed, "model": model.describe(), "modes": idx, "fock_M": basis.M, "guard": guard,
           "twisted_symmetry": qpath.diagnostics["twisted_symmetry"]}
    res.reports.append(Report("bogocheck", ["symbol", "t", "order", "deviation"], rows, doc,
                              [c.line() for c in res.checks]))
    res.summary = {"worst_transport_deviation": worst}


RUNNERS = {"validate": run_validate, "converge": run_converge, "classical": run_classical,
           "bogocheck": run_bogocheck}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _exit_code(exc):
    if isinstance(exc, (ConfigError, InvalidModel)):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def execute(cfg):
    """Run the experiment in ``cfg``; returns (exit code, Results). Never raises module errors."""
    res = Results(cfg.kind, cfg.to_dict())
    try:
        RUNNERS[cfg.kind](cfg, res)
    except HepplabError as exc:
        res.failure = {"type": type(exc).__name__, "message": str(exc),
                       "details": _plain({k: v for k, v in vars(exc).items() if not k.startswith("_")})}
        return _exit_code(exc), res
    return (EXIT_OK if res.passed else EXIT_ASSERT), res


def run_experiment(cfg, out_dir=None):
    """Execute and emit; returns (exit code, Results, written paths)."""
    code, res = execute(cfg)
    paths = emit_report(res, out_dir or cfg.out, exit_code=code)
    return code, res, paths


# ---------------------------------------------------------------------------
# output

def _versioned(directory, stems):
    """Smallest version whose file names are all free: name.ext, then name-v2.ext, ..."""
    v = 1
    while True:
        suffix = "" if v == 1 else f"-v{v}"
        names = [f"{stem}{suffix}{ext}" for stem, ext in stems]
        if not any((directory / n).exists() for n in names):
            return names
        v += 1


def _csv_text(header, rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def emit_report(results, directory, exit_code=None):
    """Write CSV + JSON per report, one summary text and the manifest.

    An empty result set writes the manifest only.  Existing files are never
    overwritten: the whole batch moves to the next free version suffix.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    kind = results.kind
    stems = [("manifest", ".json")]
    for r in results.reports:
        stems += [(r.name, ".csv"), (r.name, ".json")]
    if results.reports:
        stems.append((f"{kind}_summary", ".txt"))
    names = _versioned(directory, stems)
    written = []
    it = iter(names[1:])
    for r in results.reports:
        csv_name, json_name = next(it), next(it)
        (directory / csv_name).write_text(_csv_text(r.header, r.rows))
        (directory / json_name).write_text(json.dumps(_plain(r.document), indent=2, sort_keys=True) + "\n")
        written += [csv_name, json_name]
    if results.reports:
        summary_name = next(it)
        seed = results.config.get("seed")
        lines = [f"hepplab {kind}  seed {seed}", ""]
        for r in results.reports:
            lines += [f"[{r.name}]"] + list(r.lines) + [""]
        if results.failure:
            lines.append(f"FAILED: {results.failure['type']}: {results.failure['message']}")
        else:
            lines.append("all checks passed" if results.passed else "some checks FAILED")
        (directory / summary_name).write_text("\n".join(lines) + "\n")
        written.append(summary_name)
    manifest = {
        "kind": kind,
        "seed": results.config.get("seed"),
        "exit_code": exit_code,
        "passed": results.passed,
        "config": _plain(results.config),
        "checks": [c.to_dict() for c in results.checks],
        "summary": _plain(results.summary),
        "failure": results.failure,
        "files": written,
    }
    (directory / names[0]).write_text(json.dumps(_plain(manifest), indent=2, sort_keys=True) + "\n")
    return [directory / names[0]] + [directory / n for n in written]


def _config_failure(kind, exc, seed, out):
    res = Results(kind or "unknown", {"seed": seed, "out": out})
    res.failure = {"type": type(exc).__name__, "message": str(exc),
                   "details": _plain({k: v for k, v in vars(exc).items() if not k.startswith("_")})}
    return res


def main(argv=None):
    ap = argparse.ArgumentParser(prog="hepplab", description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS)
    ap.add_argument("--config", required=True, help="key = value config file")
    ap.add_argument("--out", help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="rng seed (overrides the config)")
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        out = args.out or "results"
        res = _config_failure(args.kind, exc, args.seed, out)
        emit_report(res, out, exit_code=EXIT_CONFIG)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cfg.kind = args.kind
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    code, res, paths = run_experiment(cfg)
    for r in res.reports:
        for line in r.lines:
            print(line)
    if res.failure:
        print(f"{res.failure['type']}: {res.failure['message']}", file=sys.stderr)
    print(f"exit {code}; wrote {', '.join(str(p) for p in paths)}")
    return code


if __name__ == "__main__":
    sys.exit(main())
