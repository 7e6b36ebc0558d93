"""Graph-structured Gaussian experiments: certificates, support recovery, sample complexity.

Costs are shifted graph Laplacians ``A = delta I + D - Adj`` on identity
covariances. Experiment-level ``eps`` values are in the Gaussian convention of
:mod:`l1iot.gaussian`; the discrete solver is run at :func:`discrete_eps`.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .eot import SUPPORT_TOL, QuadraticBasis, center_features, rescale_features
from .errors import ConvergenceError, NumericalError
from .gaussian import (
    GaussianModel,
    discrete_eps,
    gaussian_certificate,
    joint_covariance,
    population_iot,
    unvec,
)
from .solver import SolverConfig, reg_path


@dataclass(frozen=True)
class Graph:
    adjacency: np.ndarray
    directed: bool = False

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.isin(adj, (0.0, 1.0)).all():
            raise ValueError("adjacency must be 0/1")
        if np.any(np.diag(adj)):
            raise ValueError("self-loops are not allowed")
        if not self.directed and not np.array_equal(adj, adj.T):
            raise ValueError("undirected graph needs a symmetric adjacency")
        object.__setattr__(self, "adjacency", adj)

    @property
    def n(self):
        return self.adjacency.shape[0]

    @property
    def n_edges(self):
        total = int(self.adjacency.sum())
        return total if self.directed else total // 2


def gen_circular(n):
    if n < 3:
        raise ValueError("a cycle needs n >= 3")
    adj = np.zeros((n, n))
    idx = np.arange(n)
    adj[idx, (idx + 1) % n] = adj[(idx + 1) % n, idx] = 1
    return Graph(adj)


def gen_grid_planar(rows, cols):
    """``rows x cols`` grid graph, vertices numbered row-major."""
    if rows < 1 or cols < 1 or rows * cols < 3:
        raise ValueError("grid needs at least 3 vertices")
    n = rows * cols
    adj = np.zeros((n, n))
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                adj[v, v + 1] = adj[v + 1, v] = 1
            if r + 1 < rows:
                adj[v, v + cols] = adj[v + cols, v] = 1
    return Graph(adj)


def gen_erdos_renyi(n, p, seed):
    if n < 3:
        raise ValueError("need n >= 3")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(float)
    return Graph(upper + upper.T)


def directed_lower(g):
    """Directed variant keeping only the edges ``i -> j`` with ``i > j``."""
    return Graph(np.tril(g.adjacency, k=-1), directed=True)


def shifted_laplacian_cost(g, shift_frac=0.1, delta=None):
    """``delta I + D - Adj`` with ``delta = shift_frac * lambda_max(D - Adj)``.

    ``D`` holds the row sums of the adjacency (out-degrees for directed graphs).
    """
    adj = g.adjacency
    lap = np.diag(adj.sum(axis=1)) - adj
    if delta is None:
        if not adj.any():
            raise ValueError("empty graph: pass an explicit delta")
        top = (np.linalg.eigvalsh(lap) if not g.directed else np.linalg.eigvals(lap).real).max()
        delta = shift_frac * top
    if not delta > 0:
        raise ValueError("delta must be positive")
    return delta * np.eye(g.n) + lap


def geodesic_distances(g):
    """Hop distances on the symmetrized graph; ``inf`` when unreachable."""
    sym = np.maximum(g.adjacency, g.adjacency.T)
    return shortest_path(sym, method="D", directed=False, unweighted=True)


def sample_coupling(model, n, seed):
    """``n`` iid pairs from the Gaussian optimal coupling of ``model``."""
    J = joint_covariance(model)
    w, Q = np.linalg.eigh(J)
    root = Q * np.sqrt(np.maximum(w, 0.0))
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, J.shape[0])) @ root.T
    return z[:, : model.d1], z[:, model.d1 :]


def log_grid(spec):
    """Descending log-spaced grid from ``"start:stop:count"``."""
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError as exc:
        raise ValueError(f"bad grid spec {spec!r}, expected start:stop:count") from exc
    if start <= 0 or stop <= 0 or count < 1:
        raise ValueError("grid bounds must be positive and count >= 1")
    grid = np.geomspace(start, stop, count)
    return np.sort(grid)[::-1]


@dataclass
class TrialResult:
    lam: float
    eps: float
    n_samples: int
    seed: int
    support_errors: int
    l2_error: float
    margin: float
    status: str = "ok"


def support_errors(A, A_hat, tol=SUPPORT_TOL):
    return int(np.sum((np.abs(A) > tol) != (np.abs(A_hat) > tol)))


def _margin(model):
    try:
        return gaussian_certificate(model).margin
    except NumericalError:
        return float("nan")


def _threads():
    try:
        return max(1, int(os.environ.get("IOT_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Ordered map over independent jobs, capped by ``IOT_THREADS``."""
    items = list(items)
    workers = min(_threads(), len(items)) or 1
    if workers == 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def fit_path(x, y, eps, lambdas, solver_kw=None, deadline=None):
    """Center and rescale samples, then run the l1-iOT path.

    ``lambdas`` and the returned matrices are in the units of the raw samples.
    """
    basis, scale = rescale_features(center_features(QuadraticBasis(x, y)))
    config = SolverConfig(lam=0.0, eps=discrete_eps(eps), **(solver_kw or {}))
    sols = reg_path(basis, np.asarray(lambdas) / scale, config, deadline)
    d1, d2 = x.shape[1], y.shape[1]
    out = []
    for sol in sols:
        if isinstance(sol, Exception):
            out.append(sol)
        else:
            out.append((unvec(sol.A / scale, d1, d2), sol))
    return out


def run_sparsistency_trial(g, eps, lambda_grid, n_samples, seed, A_hat=None, solver_kw=None,
                           deadline=None):
    """Sample, fit along ``lambda_grid`` and score support recovery.

    ``deadline`` is forwarded to :func:`reg_path`; fits it cuts off are
    recorded with an error status.
    """
    A_hat = shifted_laplacian_cost(g) if A_hat is None else A_hat
    model = GaussianModel.identity(A_hat, eps)
    margin = _margin(model)
    x, y = sample_coupling(model, n_samples, seed)
    lambdas = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    results = []
    for lam, fit in zip(lambdas, fit_path(x, y, eps, lambdas, solver_kw, deadline)):
        if isinstance(fit, Exception):
            results.append(TrialResult(lam, eps, n_samples, seed, A_hat.size,
                                       float("nan"), margin, f"error: {fit}"))
            continue
        A, sol = fit
        status = "ok" if sol.converged else "not converged"
        results.append(TrialResult(lam, eps, n_samples, seed, support_errors(A, A_hat),
                                   float(np.linalg.norm(A - A_hat)), margin, status))
    return results


def population_trial(A_hat, eps, lam):
    """Fit on exact Gaussian moments (the infinite-sample limit) and score it."""
    model = GaussianModel.identity(A_hat, eps)
    A, _ = population_iot(model, lam)
    return TrialResult(lam, eps, 0, 0, support_errors(A, A_hat),
                       float(np.linalg.norm(A - A_hat)), _margin(model))


def certificate_profile(g, eps_list, A_hat=None):
    """Rows ``(i, j, d_geod, eps, z, on_support)`` for every entry and eps.

    Also returns the certificate margin for each eps.
    """
    A_hat = shifted_laplacian_cost(g) if A_hat is None else A_hat
    dist = geodesic_distances(g)
    n = g.n
    rows, margins = [], {}
    for eps in eps_list:
        try:
            cert = gaussian_certificate(GaussianModel.identity(A_hat, eps))
        except NumericalError as exc:
            raise NumericalError(f"eps={eps:g}: {exc}") from exc
        Z = unvec(cert.z, n, n)
        margins[float(eps)] = cert.margin
        for i in range(n):
            for j in range(n):
                rows.append((i, j, dist[i, j], float(eps), Z[i, j], bool(abs(A_hat[i, j]) > SUPPORT_TOL)))
    return rows, margins


@dataclass
class ComplexityResult:
    slope: float
    n_grid: list
    mean_errors: list
    trials: list  # TrialResult rows; l2_error is measured against A_inf


def sample_complexity_sweep(g, eps, lam, n_grid, seeds, solver_kw=None):
    """Mean ``|A_n - A_inf|_F`` over seeds per ``n`` and its log-log slope.

    ``A_inf`` solves the same penalized problem on exact moments.
    """
    A_hat = shifted_laplacian_cost(g)
    model = GaussianModel.identity(A_hat, eps)
    margin = _margin(model)
    A_inf, info = population_iot(model, lam)
    if not info["converged"]:
        raise ConvergenceError("population problem did not converge", info["residual"])

    def job(args):
        n, seed = args
        x, y = sample_coupling(model, n, seed)
        fit = fit_path(x, y, eps, [lam], solver_kw)[0]
        if isinstance(fit, Exception):
            return TrialResult(lam, eps, n, seed, A_hat.size, float("nan"), margin,
                               f"error: {fit}")
        A, sol = fit
        return TrialResult(lam, eps, n, seed, support_errors(A, A_hat),
                           float(np.linalg.norm(A - A_inf)), margin,
                           "ok" if sol.converged else "not converged")

    trials = parallel_map(job, [(n, s) for n in n_grid for s in seeds])
    means = [float(np.nanmean([t.l2_error for t in trials if t.n_samples == n])) for n in n_grid]
    slope = float(np.polyfit(np.log(n_grid), np.log(means), 1)[0])
    return ComplexityResult(slope, list(n_grid), means, trials)
