"""Command-line driver for the certificate, solver, experiment and limit checks.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
CSV output uses ``repr`` floats (shortest round-trip form) and JSON is
pretty-printed with sorted keys, so reruns are byte-identical.
"""

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import graphs
from .eot import SUPPORT_TOL, QuadraticBasis, center_features, rescale_features, support
from .errors import ConvergenceError, NumericalError
from .gaussian import (
    GaussianModel,
    gaussian_certificate,
    limit_certificate_inf,
    limit_certificate_zero,
    population_iot,
    symmetric_certificate,
    unvec,
    vec,
)
from .limits import LimitProblemSpec, glasso_solve, lasso_solve
from .solver import SolverConfig, solve

SCHEMA_VERSION = 1
TRIAL_FIELDS = ["lambda", "eps", "n_samples", "seed", "support_errors", "l2_error", "margin", "status"]


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Every parameter a command may use; unused ones keep their defaults."""

    command: str = ""
    kind: str = ""
    graph: str = "circular"
    n: int = 20
    p: float = 0.1
    directed: bool = False
    eps: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    lambda_grid: str = "1:0.01:20"
    lam: float = 0.1
    lambda0: float = 0.1
    samples: list = field(default_factory=lambda: [1000])
    seeds: list = field(default_factory=lambda: [0])
    input: str = ""
    grad_tol: float = 1e-8
    max_iter: int = 5000
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if data.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise UsageError(f"unsupported schema_version {data['schema_version']}")
        return cls(**data)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    """``"0,1,2"`` or an inclusive range ``"0-9"``."""
    try:
        if "-" in text.strip("-") and "," not in text:
            lo, hi = text.split("-")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from exc


def build_parser():
    parser = argparse.ArgumentParser(prog="l1iot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON RunConfig; explicit flags override it")
        p.add_argument("--out", default="-", help="output file ('-' for stdout)")
        p.add_argument("--summary", help="summary JSON path (default: <out>.json)")

    def graph_flags(p):
        p.add_argument("--graph", choices=["circular", "planar", "erdos"])
        p.add_argument("--n", type=int)
        p.add_argument("--p", type=float)
        p.add_argument("--seed", type=int, help="seed for random graphs and sampling")

    cert = sub.add_parser("certificate", help="certificate values over a graph")
    common(cert)
    graph_flags(cert)
    cert.add_argument("--eps", type=_float_list)
    cert.add_argument("--directed", action="store_true", default=None)

    solve_p = sub.add_parser("solve", help="fit l1-iOT on paired samples")
    common(solve_p)
    graph_flags(solve_p)
    solve_p.add_argument("--input", help="CSV with header x0..,y0..")
    solve_p.add_argument("--lambda", dest="lam", type=float)
    solve_p.add_argument("--eps", type=_float_list, help="entropic weight of the loss")
    solve_p.add_argument("--samples", type=_int_list)
    solve_p.add_argument("--grad-tol", type=float)
    solve_p.add_argument("--max-iter", type=int)

    exp = sub.add_parser("experiment", help="support recovery or sample complexity")
    common(exp)
    exp.add_argument("kind", choices=["sparsistency", "complexity"])
    graph_flags(exp)
    exp.add_argument("--eps", type=_float_list)
    exp.add_argument("--lambda-grid", help="log grid start:stop:count (sparsistency)")
    exp.add_argument("--lambda", dest="lam", type=float, help="penalty (complexity)")
    exp.add_argument("--samples", type=_int_list)
    exp.add_argument("--seeds", type=_int_list)
    exp.add_argument("--grad-tol", type=float)
    exp.add_argument("--max-iter", type=int)

    lim = sub.add_parser("limits", help="compare with the Lasso / graphical-lasso limits")
    common(lim)
    lim.add_argument("kind", choices=["lasso", "glasso"])
    graph_flags(lim)
    lim.add_argument("--eps", type=_float_list, help="eps grid")
    lim.add_argument("--lambda0", type=float)
    lim.add_argument("--identity", action="store_true", help="use A_hat = identity")
    return parser


_FLAG_TO_FIELD = {
    "graph": "graph", "n": "n", "p": "p", "directed": "directed", "eps": "eps",
    "lambda_grid": "lambda_grid", "lam": "lam", "lambda0": "lambda0",
    "samples": "samples", "seeds": "seeds", "input": "input",
    "grad_tol": "grad_tol", "max_iter": "max_iter",
}


def resolve_config(args):
    if args.config:
        try:
            config = RunConfig.from_json(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    else:
        config = RunConfig()
    config.command = args.command
    config.kind = getattr(args, "kind", "") or ""
    for flag, name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "seed", None) is not None:
        config.seeds = [args.seed]
    return config


def make_graph(config):
    seed = config.seeds[0]
    if config.graph == "circular":
        g = graphs.gen_circular(config.n)
    elif config.graph == "planar":
        rows = max(r for r in range(1, int(np.sqrt(config.n)) + 1) if config.n % r == 0)
        g = graphs.gen_grid_planar(rows, config.n // rows)
    else:
        g = graphs.gen_erdos_renyi(config.n, config.p, seed)
    return graphs.directed_lower(g) if config.directed else g


def _cost(g):
    if not g.adjacency.any():
        # empty graph: shift by the value a single edge would give
        return graphs.shifted_laplacian_cost(g, delta=0.2)
    return graphs.shifted_laplacian_cost(g)


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _emit(args, text, summary=None):
    if args.out == "-":
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    if summary is not None:
        path = args.summary or (None if args.out == "-" else args.out + ".json")
        if path:
            Path(path).write_text(_json_text(summary))


def cmd_certificate(args, config):
    g = make_graph(config)
    rows, margins = graphs.certificate_profile(g, config.eps, A_hat=_cost(g))
    text = _csv_text(["i", "j", "d_geod", "eps", "z", "on_support"],
                     [(i, j, d, e, z, int(on)) for i, j, d, e, z, on in rows])
    summary = {
        "config": config.to_dict(),
        "margin": {repr(k): v for k, v in margins.items()},
        "schema_version": SCHEMA_VERSION,
    }
    _emit(args, text, summary)


def read_samples(path):
    """Parse a paired-sample CSV; raises :class:`UsageError` naming the bad line."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise UsageError(f"{path}:1: empty file") from None
    header = [h.strip() for h in header]
    xs = [h for h in header if h.startswith("x")]
    ys = [h for h in header if h.startswith("y")]
    expected = [f"x{i}" for i in range(len(xs))] + [f"y{j}" for j in range(len(ys))]
    if not xs or not ys or header != expected:
        raise UsageError(f"{path}:1: header must be x0,...,x<d1-1>,y0,...,y<d2-1>")
    data = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise UsageError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError:
            raise UsageError(f"{path}:{lineno}: non-numeric field") from None
        if not all(np.isfinite(values)):
            raise UsageError(f"{path}:{lineno}: non-finite value")
        data.append(values)
    if len(data) < 2:
        raise UsageError(f"{path}: need at least two samples")
    arr = np.array(data)
    return arr[:, : len(xs)], arr[:, len(xs):]


def fit_samples(x, y, lam, eps, grad_tol=1e-8, max_iter=5000, seed=0):
    """Center, rescale, solve and map back to the units of the samples."""
    basis, scale = rescale_features(center_features(QuadraticBasis(x, y)))
    config = SolverConfig(lam=lam / scale, eps=eps, grad_tol=grad_tol,
                          max_iter=max_iter, seed=seed)
    sol = solve(basis, config)
    return unvec(sol.A / scale, x.shape[1], y.shape[1]), sol


def cmd_solve(args, config):
    eps = config.eps[0]
    if config.input:
        x, y = read_samples(config.input)
    else:
        g = make_graph(config)
        model = GaussianModel.identity(_cost(g), eps / 2)
        x, y = graphs.sample_coupling(model, config.samples[0], config.seeds[0])
    A, sol = fit_samples(x, y, config.lam, eps, config.grad_tol, config.max_iter,
                         config.seeds[0])
    A[np.abs(A) <= SUPPORT_TOL] = 0.0
    idx = support(vec(A))
    d1 = A.shape[0]
    out = {
        "A": A.tolist(),
        "triplets": [[int(k % d1), int(k // d1), float(vec(A)[k])] for k in idx],
        "support": [[int(k % d1), int(k // d1)] for k in idx],
        "kkt_sup": sol.kkt_sup,
        "objective": sol.objective,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "config": config.to_dict(),
        "schema_version": SCHEMA_VERSION,
    }
    _emit(args, _json_text(out))


def _trial_row(t):
    return (t.lam, t.eps, t.n_samples, t.seed, t.support_errors, t.l2_error, t.margin, t.status)


def cmd_experiment(args, config):
    g = make_graph(config)
    solver_kw = {"grad_tol": config.grad_tol, "max_iter": config.max_iter}
    summary = {"config": config.to_dict(), "schema_version": SCHEMA_VERSION}
    if args.kind == "sparsistency":
        grid = graphs.log_grid(config.lambda_grid)
        jobs = [(e, n, s) for e in config.eps for n in config.samples for s in config.seeds]
        results = graphs.parallel_map(
            lambda job: graphs.run_sparsistency_trial(
                g, job[0], grid, job[1], job[2], A_hat=_cost(g), solver_kw=solver_kw),
            jobs,
        )
        trials = [t for batch in results for t in batch]
        summary["min_support_errors"] = {
            repr(float(e)): min(t.support_errors for t in trials if t.eps == e)
            for e in config.eps
        }
    else:
        res = graphs.sample_complexity_sweep(g, config.eps[0], config.lam, config.samples,
                                             config.seeds, solver_kw)
        trials = res.trials
        summary.update(slope=res.slope, n_grid=res.n_grid, mean_errors=res.mean_errors)
    if all(t.status.startswith("error") for t in trials):
        raise NumericalError("every trial failed")
    _emit(args, _csv_text(TRIAL_FIELDS, [_trial_row(t) for t in trials]), summary)


def _limit_problem(config, identity):
    g = make_graph(config)
    return np.eye(g.n) if identity else _cost(g)


def limit_report(kind, A_hat, eps_grid, lambda0):
    """Certificate and solution gaps to the Lasso (large eps) or graphical-lasso
    (small eps) limit along ``eps_grid``."""
    d = A_hat.shape[0]
    if kind == "lasso":
        z_lim = limit_certificate_inf(np.eye(d), np.eye(d), A_hat).z
        A_lim = lasso_solve(LimitProblemSpec("lasso", A_hat, lambda0)).A
    else:
        z_lim = limit_certificate_zero(A_hat).z
        A_lim = glasso_solve(LimitProblemSpec("glasso", A_hat, lambda0)).A
    rows = []
    for eps in eps_grid:
        if kind == "lasso":
            z = gaussian_certificate(GaussianModel.identity(A_hat, eps)).z
            A_eps, _ = population_iot(GaussianModel.identity(A_hat, eps), lambda0 / eps)
        else:
            z = symmetric_certificate(A_hat, eps).z
            A_eps, _ = population_iot(GaussianModel.identity(A_hat, eps), lambda0 * eps,
                                      symmetric=True)
        rows.append({
            "eps": float(eps),
            "z_gap": float(np.abs(z - z_lim).max()),
            "A_gap": float(np.abs(A_eps - A_lim).max()),
        })
    return rows


def cmd_limits(args, config):
    A_hat = _limit_problem(config, args.identity)
    if args.kind == "glasso" and np.linalg.eigvalsh(0.5 * (A_hat + A_hat.T)).min() <= 0:
        raise UsageError("glasso branch needs a symmetric positive definite A_hat")
    if args.kind == "glasso" and not np.allclose(A_hat, A_hat.T):
        raise UsageError("glasso branch needs a symmetric A_hat")
    eps_grid = sorted(config.eps, reverse=args.kind == "glasso")
    out = {
        "kind": args.kind,
        "lambda0": config.lambda0,
        "rows": limit_report(args.kind, A_hat, eps_grid, config.lambda0),
        "config": config.to_dict(),
        "schema_version": SCHEMA_VERSION,
    }
    _emit(args, _json_text(out))


COMMANDS = {
    "certificate": cmd_certificate,
    "solve": cmd_solve,
    "experiment": cmd_experiment,
    "limits": cmd_limits,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
