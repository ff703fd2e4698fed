"""Command-line front end.

Every subcommand reads a JSON run configuration (``--config``) and writes its
artifacts to ``--out``. Exit codes: 0 success, 1 configuration error, 2 data
error, 3 solver did not converge (artifacts are still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import losses
from .adaptive import adaptive_fit
from .admm import FitState, SCCProblem, SolverOptions
from .biclust import BiclustProblem, heatmap_order
from .exceptions import ConfigError, DataError, FuseclustError
from .selection import (
    adjusted_rand_index,
    default_fusion_tol,
    extract_clusters,
    fit_n_clusters,
    lambda_bounds,
    solve_path,
    stability_select,
)
from .simulate import SCENARIOS, simulate
from .weights import build_weights, column_weights

log = logging.getLogger("fuseclust")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3
MODES = ("scc", "biclust", "doubly", "adaptive")
MISSING = {"", "na", "nan", "null", "none"}


@dataclass
class RunConfig:
    """Parsed run configuration; see the README for the JSON schema."""

    data: str | None = None
    family: str = "gaussian"
    columns: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    lam: object = "auto"
    K: int | None = None
    mode: str = "scc"
    seed: int = 0
    out: str = "."
    stability: dict = field(default_factory=dict)
    n_lambda: int = 30
    feature_y: dict | None = None
    scenario: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        if "lambda" in raw:
            raw["lam"] = raw.pop("lambda")
        known = {f.name for f in fields(cls)}
        extra = set(raw) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        try:
            losses.family(self.family)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        lam = self.lam
        if not (lam == "auto" or isinstance(lam, (int, float)) or isinstance(lam, list)):
            raise ConfigError("lambda must be a number, a list of numbers or 'auto'")
        if isinstance(lam, (int, float)) and lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.mode == "adaptive" and not self.columns.get("Z"):
            raise ConfigError("adaptive mode requires covariate columns 'Z'")
        if self.mode == "doubly" and not self.feature_y:
            raise ConfigError("doubly mode requires a 'feature_y' block")
        unknown = set(self.solver) - {f.name for f in fields(SolverOptions)}
        if unknown:
            raise ConfigError(f"unknown solver options: {sorted(unknown)}")
        unknown = set(self.weights) - {"k", "phi", "alpha"}
        if unknown:
            raise ConfigError(f"unknown weight options: {sorted(unknown)}")

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.solver)


def load_config(path, overrides=None) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_dict(raw)


# ---------------------------------------------------------------- data input

def read_table(path):
    """Header and float matrix of a comma-separated file; rejects missing or non-numeric cells."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    out = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for c, cell in enumerate(row):
            text = cell.strip()
            if text.lower() in MISSING:
                raise DataError(f"{path}: missing value at row {r}, column '{header[c]}'")
            try:
                out[r - 1, c] = float(text)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {r}, column '{header[c]}'") from None
            if not math.isfinite(out[r - 1, c]):
                raise DataError(f"{path}: non-finite value at row {r}, column '{header[c]}'")
    return header, out


def _pick(header, table, names, path, what):
    names = [names] if isinstance(names, str) else list(names)
    idx = []
    for nm in names:
        if nm not in header:
            raise ConfigError(f"{what} column '{nm}' not found in {path}")
        idx.append(header.index(nm))
    return table[:, idx]


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray | None
    family: losses.Family
    Z: np.ndarray | None
    x_names: list


def _response(fam, header, table, cols, path):
    if fam.kind == "cox":
        if "event" not in cols or "time" not in cols:
            raise ConfigError("cox family needs 'event' and 'time' columns")
        ev = _pick(header, table, cols["event"], path, "event")[:, 0]
        t = _pick(header, table, cols["time"], path, "time")[:, 0]
        y = losses.surv(ev, t)
    elif "y" in cols:
        y = _pick(header, table, cols["y"], path, "y")
        if fam.kind == "multinomial" and y.shape[1] == 1:
            lab = y[:, 0]
            if np.any(lab != np.round(lab)) or lab.min() < 0:
                bad = int(np.flatnonzero((lab != np.round(lab)) | (lab < 0))[0]) + 1
                raise DataError(f"{path}: class label at row {bad}, column '{cols['y']}' is not a "
                                "non-negative integer")
            y = losses.one_hot(lab.astype(int), fam.n_classes)
        elif y.shape[1] == 1:
            y = y[:, 0]
    else:
        return None
    try:
        return losses.check_response(fam, y)
    except FuseclustError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_dataset(cfg: RunConfig) -> Dataset:
    if not cfg.data:
        raise ConfigError("config needs a 'data' CSV path")
    header, table = read_table(cfg.data)
    cols = cfg.columns
    fam = losses.family(cfg.family)
    used = set()
    for key in ("y", "Z", "event", "time"):
        v = cols.get(key)
        if v:
            used.update([v] if isinstance(v, str) else v)
    if cols.get("X"):
        x_names = list(cols["X"])
    else:
        x_names = [h for h in header if h not in used]
    X = _pick(header, table, x_names, cfg.data, "X")
    y = _response(fam, header, table, cols, cfg.data)
    if y is None and cfg.mode != "biclust":
        raise ConfigError(f"mode {cfg.mode!r} needs a supervising column 'y'")
    Z = _pick(header, table, cols["Z"], cfg.data, "Z") if cols.get("Z") else None
    if fam.kind == "multinomial" and y is not None and fam.n_classes is None:
        fam = losses.Family("multinomial", y.shape[1])
    return Dataset(X, y, fam, Z, x_names)


# ------------------------------------------------------------------ artifacts

def _report_dict(rep):
    d = asdict(rep)
    d.pop("objective_trace", None)
    d["objective"] = rep.objective
    return {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in d.items()}


def write_fit_json(path, fit, lam, objective, report, pi, family, extra=None):
    doc = {
        "lambda": float(lam),
        "objective": float(objective),
        "family": str(family),
        "pi": [float(pi[0]), float(pi[1])],
        "U": np.asarray(fit.U).tolist(),
        "theta": np.asarray(fit.theta).tolist(),
        "beta": np.asarray(fit.beta).tolist(),
        "report": _report_dict(report),
    }
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_fit_json(path):
    """Reload ``fit.json`` as ``(FitState, document)``; ``V`` and ``Q`` are not stored."""
    with open(path) as fh:
        doc = json.load(fh)
    U = np.array(doc["U"], dtype=float)
    theta = np.array(doc["theta"], dtype=float).reshape(U.shape[0], -1)
    beta = np.array(doc["beta"], dtype=float)
    return FitState(U, theta, beta, None, None, float(doc["report"]["rho"]), doc["lambda"]), doc


def write_labels(path, labels, name="label"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", name])
        for i, lab in enumerate(np.asarray(labels).tolist(), start=1):
            w.writerow([i, lab])


def read_labels(path):
    header, table = read_table(path)
    col = header.index("label") if "label" in header else len(header) - 1
    return table[:, col].astype(int)


def write_matrix(path, M, header):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in np.asarray(M):
            w.writerow([repr(float(v)) for v in row])


# ------------------------------------------------------------------- commands

def _lambda_grid(prob, cfg, opts):
    if isinstance(cfg.lam, list):
        return np.asarray(cfg.lam, dtype=float)
    lo, hi = lambda_bounds(prob, opts)
    return np.geomspace(lo, hi, cfg.n_lambda)


def _weights(ds, cfg):
    kw = {k: v for k, v in cfg.weights.items()}
    return build_weights(ds.X, ds.y, ds.family, **kw)


def _scc_fit(ds, cfg, opts, jobs):
    graph = _weights(ds, cfg)
    prob = SCCProblem(ds.X, ds.y, ds.family, graph, Z=ds.Z)
    tol = default_fusion_tol(prob)
    if cfg.K is not None:
        pt = fit_n_clusters(prob, cfg.K, opts=opts)
        return prob, pt.fit, pt.report, pt.lam, pt.assignment, None
    stab = None
    if isinstance(cfg.lam, (int, float)):
        lam = float(cfg.lam)
    else:
        grid = _lambda_grid(prob, cfg, opts)
        wkw = {k: v for k, v in cfg.weights.items() if k in ("k", "phi")}
        stab = stability_select(ds.X, ds.y, ds.family, grid, Z=ds.Z, weight_kw=wkw, opts=opts,
                                seed=cfg.seed, jobs=jobs, **cfg.stability)
        lam = stab.lam
    fit, rep = prob.solve(lam, opts=opts)
    return prob, fit, rep, lam, extract_clusters(fit, graph, tol), stab


def _finish(out, prob, fit, rep, lam, assign, ds):
    write_fit_json(out / "fit.json", fit, lam, prob.objective(fit, lam), rep, (prob.pi_X, prob.pi_y),
                   ds.family, {"K": assign.K, "x_columns": ds.x_names})
    write_labels(out / "labels.csv", assign.labels)
    prob.graph.to_csv(out / "weights.csv")
    order = np.argsort(assign.labels, kind="stable")
    write_matrix(out / "heatmap.csv", np.column_stack([order + 1, assign.labels[order], fit.U[order]]),
                 ["row", "label"] + ds.x_names)
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_fit(cfg: RunConfig, jobs=1):
    ds = load_dataset(cfg)
    out = _outdir(cfg)
    opts = cfg.solver_options()
    if cfg.mode in ("biclust", "doubly"):
        return _biclust(ds, cfg, opts, out)
    if cfg.mode == "adaptive":
        res = adaptive_fit(ds.X, ds.y, ds.family, ds.Z, K=cfg.K,
                           lambdas=None if cfg.K is not None else _adaptive_grid(ds, cfg, opts),
                           opts=opts, select_kw=dict(cfg.stability, seed=cfg.seed, jobs=jobs),
                           **{k: v for k, v in cfg.weights.items() if k in ("k", "phi")})
        prob = SCCProblem(ds.X, ds.y, ds.family, res.stage2_graph, Z=ds.Z)
        return _finish(out, prob, res.fit, res.report, res.lam, res.assignment, ds)
    prob, fit, rep, lam, assign, stab = _scc_fit(ds, cfg, opts, jobs)
    if stab is not None:
        stab.to_csv(out / "stability.csv")
    return _finish(out, prob, fit, rep, lam, assign, ds)


def _adaptive_grid(ds, cfg, opts):
    if isinstance(cfg.lam, list):
        return np.asarray(cfg.lam, dtype=float)
    prob = SCCProblem(ds.X, ds.y, ds.family, _weights(ds, cfg), Z=ds.Z)
    return _lambda_grid(prob, cfg, opts)


def cmd_path(cfg: RunConfig, jobs=1):
    ds = load_dataset(cfg)
    out = _outdir(cfg)
    opts = cfg.solver_options()
    prob = SCCProblem(ds.X, ds.y, ds.family, _weights(ds, cfg), Z=ds.Z)
    lambdas = np.asarray(cfg.lam, dtype=float) if isinstance(cfg.lam, list) else None
    path = solve_path(prob, lambdas, opts=opts, n_lambda=cfg.n_lambda)
    path.to_csv(out / "path.csv")
    prob.graph.to_csv(out / "weights.csv")
    return EXIT_OK if all(r.converged for r in path.reports) else EXIT_NOT_CONVERGED


def cmd_stability(cfg: RunConfig, jobs=1):
    if isinstance(cfg.lam, (int, float)):
        raise ConfigError("stability selection needs lambda 'auto' or a grid")
    return cmd_fit(RunConfig(**{**asdict(cfg), "K": None, "mode": "scc"}), jobs)


def _biclust(ds, cfg, opts, out):
    rg = _weights(ds, cfg)
    cg = column_weights(ds.X, **{k: v for k, v in cfg.weights.items() if k in ("k", "phi")})
    kw = {}
    if cfg.mode == "doubly":
        fy = cfg.feature_y
        header, table = read_table(fy["data"])
        fam_t = losses.family(fy.get("family", "gaussian"))
        yt = _pick(header, table, fy["column"], fy["data"], "feature_y")[:, 0]
        if yt.size != ds.X.shape[1]:
            raise DataError(f"{fy['data']}: {yt.size} feature responses for {ds.X.shape[1]} features")
        kw = {"y_tilde": yt, "family_tilde": fam_t}
    prob = BiclustProblem(ds.X, ds.y, ds.family, rg, cg, Z=ds.Z, **kw)
    if cfg.K is not None:
        pt = fit_n_clusters(prob, cfg.K, opts=opts)
        fit, rep, lam = pt.fit, pt.report, pt.lam
    elif isinstance(cfg.lam, (int, float)):
        lam = float(cfg.lam)
        fit, rep = prob.solve(lam, opts=opts)
    else:
        raise ConfigError("biclust mode needs a numeric lambda or a target K")
    rows, cols = prob.assignments(fit)
    write_fit_json(out / "fit.json", fit, lam, prob.objective(fit, lam), rep, (prob.pi_X, prob.side.pi_y),
                   ds.family, {"K_rows": rows.K, "K_cols": cols.K, "x_columns": ds.x_names})
    write_labels(out / "labels.csv", rows.labels)
    write_labels(out / "col_labels.csv", cols.labels)
    rg.to_csv(out / "weights.csv")
    cg.to_csv(out / "col_weights.csv")
    H, r, c = heatmap_order(fit.U, rows.labels, cols.labels)
    write_matrix(out / "heatmap.csv", H, [ds.x_names[j] for j in c])
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_biclust(cfg: RunConfig, jobs=1):
    if cfg.mode not in ("biclust", "doubly"):
        cfg = RunConfig(**{**asdict(cfg), "mode": "biclust"})
    ds = load_dataset(cfg)
    return _biclust(ds, cfg, cfg.solver_options(), _outdir(cfg))


def cmd_simulate(cfg: RunConfig, jobs=1):
    if cfg.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    sim = simulate(cfg.scenario, cfg.family, cfg.seed)
    out = _outdir(cfg)
    p = sim.X.shape[1]
    write_matrix(out / "X.csv", sim.X, [f"x{j + 1}" for j in range(p)])
    fam = sim.family
    if fam.kind == "cox":
        write_matrix(out / "y.csv", sim.y, ["event", "time"])
    elif fam.kind == "multinomial":
        write_matrix(out / "y.csv", np.argmax(sim.y, axis=1)[:, None], ["y"])
    else:
        write_matrix(out / "y.csv", np.asarray(sim.y)[:, None], ["y"])
    if sim.Z is not None:
        write_matrix(out / "Z.csv", sim.Z, [f"z{j + 1}" for j in range(sim.Z.shape[1])])
    write_labels(out / "labels.csv", sim.labels)
    if sim.col_labels is not None:
        write_labels(out / "col_labels.csv", sim.col_labels)
    return EXIT_OK


def cmd_ari(a, b):
    la, lb = read_labels(a), read_labels(b)
    if la.size != lb.size:
        raise DataError(f"label files have {la.size} and {lb.size} rows")
    print(repr(adjusted_rand_index(la, lb)))
    return EXIT_OK


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "stability": cmd_stability, "biclust": cmd_biclust,
            "simulate": cmd_simulate}


def build_parser():
    ap = argparse.ArgumentParser(prog="fuseclust", description="Supervised convex clustering")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--jobs", type=int, default=1, help="worker threads")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory (overrides the config)")
        if name == "simulate":
            sp.add_argument("--scenario")
            sp.add_argument("--family")
    sp = sub.add_parser("ari")
    sp.add_argument("labels_a")
    sp.add_argument("labels_b")
    return ap


def _setup_logging():
    level = os.environ.get("FUSECLUST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "ari":
            return cmd_ari(args.labels_a, args.labels_b)
        over = {"seed": args.seed, "out": args.out}
        if args.command == "simulate":
            over.update(scenario=args.scenario, family=args.family)
            cfg = load_config(args.config, over) if args.config else RunConfig.from_dict(
                {k: v for k, v in over.items() if v is not None})
        else:
            if not args.config:
                raise ConfigError(f"{args.command} needs --config")
            cfg = load_config(args.config, over)
        return COMMANDS[args.command](cfg, jobs=max(1, args.jobs))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FuseclustError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
