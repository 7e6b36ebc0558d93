"""Finite-sample l1-iOT solver.

The potential ``G`` is eliminated in closed form from the finite Kantorovich
objective

    J(A, F, G) = -<F, a> - <G, b> - <A, m_hat> + (eps/2) sum_ij a_i b_j exp(2(F_i + G_j + C_ij)/eps),

with ``m_hat = Phi^* P_hat`` and uniform ``a, b``. The minimizer is
``G_j = -(eps/2) lse_j`` with ``lse_j = log sum_i a_i exp(2(F_i + C_ij)/eps)``,
which leaves the semi-dual

    S(A, F) = -<F, a> - <A, m_hat> + (eps/2) sum_j b_j lse_j + eps/2.

``min_F S(A, F) = loss(A) + eps/2``. The l1 penalty is handled by writing
``A = U * V`` and penalizing ``(lam/2)(|U|^2 + |V|^2)``, which has the same
global minima and is smooth, so plain L-BFGS applies.
"""

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .eot import QuadraticBasis, support
from .errors import NumericalError

# entries held in one (n_rows x chunk) block by the column-chunked kernels
BLOCK_ENTRIES = 1_000_000
# sup-norm slack allowed on |z_lambda| <= 1 before a solution counts as converged
KKT_TOL = 1e-6
# rounds of saddle escape or tolerance tightening after L-BFGS stops
MAX_RESTARTS = 20
# smallest gradient tolerance the KKT-driven tightening will ask for
GRAD_TOL_FLOOR = 1e-13
# columns whose shifted partition sum falls below this are recomputed exactly
_TINY = 1e-200


@dataclass(frozen=True)
class SolverConfig:
    lam: float
    eps: float
    grad_tol: float = 1e-8
    max_iter: int = 5000
    lbfgs_memory: int = 10
    init_scale: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.max_iter < 1 or self.lbfgs_memory < 1:
            raise ValueError("max_iter and lbfgs_memory must be positive")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


@dataclass
class IotSolution:
    A: np.ndarray
    F: np.ndarray
    G: np.ndarray
    z_lambda: np.ndarray
    objective: float
    kkt_sup: float
    converged: bool
    iterations: int
    grad_norm: float
    U: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    history: list = field(default_factory=list, repr=False)

    @property
    def support(self):
        return support(self.A)


def _semidual_core(F, A, basis, eps):
    """Value of ``S(A, F)``, its gradients, and ``lse`` (column log-partition)."""
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(A))):
        raise NumericalError("non-finite iterate in the semi-dual")
    if isinstance(basis, QuadraticBasis):
        lse, rowsum, grad_A = _quadratic_pass(F, A, basis, 2.0 / eps)
    else:
        lse, rowsum, grad_A = _dense_pass(F, A, basis, 2.0 / eps)
    m_hat = basis.diagonal_moment()
    value = -F.mean() - A @ m_hat + 0.5 * eps * lse.mean() + 0.5 * eps
    if not np.isfinite(value):
        raise NumericalError(f"semi-dual overflowed at eps={eps:g}")
    return value, rowsum - 1.0 / basis.n_rows, grad_A - m_hat, lse


def _dense_pass(F, A, basis, scale):
    n, m = basis.n_rows, basis.n_cols
    chunk = max(1, BLOCK_ENTRIES // n)
    rowsum = np.zeros(n)
    grad_A = np.zeros(basis.s)
    lse = np.empty(m)
    for start in range(0, m, chunk):
        cols = slice(start, min(start + chunk, m))
        K = basis.cost_columns(A, cols)
        K += F[:, None]
        K *= scale
        top = K.max(axis=0)
        K -= top
        np.exp(K, out=K)
        colsum = K.sum(axis=0)
        lse[cols] = top + np.log(colsum) - np.log(n)
        # K becomes the coupling block P_ij = b_j exp(K_ij - top_j) / colsum_j
        K *= 1.0 / (m * colsum)
        rowsum += K.sum(axis=1)
        grad_A += basis.adjoint_columns(K, cols)
    return lse, rowsum, grad_A


def _quadratic_pass(F, A, basis, scale):
    """Same as :func:`_dense_pass` for factored features, with fused products.

    Blocks are laid out column-index-major (``K[j, i]``) so reductions run
    along contiguous memory. The exponent block is one product
    ``[W; 1; -shift]^T [x, F, 1]^T``, using a Cauchy-Schwarz upper bound on
    each column maximum as the shift so no entry can overflow. Columns where
    the bound is too loose (the shifted sum underflows) are recomputed with
    their exact maximum. Row sums and ``P y`` come out of a single product
    with ``[y w, w]``.
    """
    x, y = basis.x, basis.y
    n, m = basis.n_rows, basis.n_cols
    chunk = max(1, BLOCK_ENTRIES // n)
    W = scale * (y @ basis.matrix(A).T)  # (m, d1)
    left = np.vstack([x.T, scale * F, np.ones(n)])  # (d1 + 2, n)
    bound = scale * F.max() + np.linalg.norm(x, axis=1).max() * np.linalg.norm(W, axis=1)
    acc = np.zeros((basis.d2 + 1, n))
    lse = np.empty(m)
    for start in range(0, m, chunk):
        rows = slice(start, min(start + chunk, m))
        width = rows.stop - rows.start
        shift = bound[rows]
        right = np.column_stack([W[rows], np.ones(width), -shift])
        K = right @ left
        np.exp(K, out=K)
        colsum = K.sum(axis=1)
        loose = np.flatnonzero(colsum < _TINY)
        if loose.size:
            exact = right[loose, :-1] @ left[:-1]
            top = exact.max(axis=1)
            exact = np.exp(exact - top[:, None])
            K[loose] = exact
            colsum[loose] = exact.sum(axis=1)
            shift = shift.copy()
            shift[loose] = top
        lse[rows] = shift + np.log(colsum) - np.log(n)
        w = 1.0 / (m * colsum)
        acc += np.vstack([(y[rows] * w[:, None]).T, w]) @ K
    grad_A = (x.T @ acc[:-1].T).ravel(order="F")
    return lse, acc[-1], grad_A


def semidual_objective(F, U, V, basis, eps, lam):
    """Smooth surrogate ``S(U*V, F) + (lam/2)(|U|^2 + |V|^2)`` and its gradients.

    Returns ``(value, grad_F, grad_U, grad_V)``.
    """
    F = np.asarray(F, dtype=float)
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    value, grad_F, grad_A, _ = _semidual_core(F, U * V, basis, eps)
    value += 0.5 * lam * (U @ U + V @ V)
    return value, grad_F, grad_A * V + lam * U, grad_A * U + lam * V


def kantorovich_objective(A, F, G, basis, eps, lam):
    """Finite Kantorovich objective ``J(A, F, G) + lam |A|_1`` evaluated directly."""
    n, m = basis.n_rows, basis.n_cols
    A = np.asarray(A, dtype=float)
    expo = 2.0 / eps * (F[:, None] + G[None, :] + basis.cost(A))
    value = -np.mean(F) - np.mean(G) - A @ basis.diagonal_moment()
    return float(value + 0.5 * eps * np.exp(expo).sum() / (n * m) + lam * np.abs(A).sum())


@dataclass
class _LbfgsResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    converged: bool
    history: list


def lbfgs(fun, x0, memory=10, grad_tol=1e-8, max_iter=5000, c1=1e-4):
    """Minimize a smooth ``fun(x) -> (f, g)`` with limited-memory BFGS.

    Two-loop recursion for the direction, backtracking Armijo line search
    (with an approximate-Wolfe test for steps whose decrease is below
    rounding), and curvature-safeguarded memory updates (pairs with ``s^T y <= 0`` are
    dropped). Stops when ``|g|_inf <= grad_tol``, when the line search cannot
    decrease ``f`` any further, or after ``max_iter`` iterations.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    history = [f]
    S, Y, rho = [], [], []
    it = 0
    while it < max_iter:
        if np.abs(g).max() <= grad_tol:
            return _LbfgsResult(x, f, g, it, True, history)
        q = g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            alpha = r * (s @ q)
            q -= alpha * y
            alphas.append(alpha)
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        else:
            q *= min(1.0, 1.0 / np.abs(g).max())
        for (s, y, r), alpha in zip(zip(S, Y, rho), reversed(alphas)):
            q += (alpha - r * (y @ q)) * s
        d = -q
        slope = g @ d
        if slope >= 0:
            # memory produced an ascent direction; fall back to steepest descent
            S, Y, rho = [], [], []
            d = -g * min(1.0, 1.0 / np.abs(g).max())
            slope = g @ d
        step = 1.0
        noise = 1e-12 * max(1.0, abs(f))
        for _ in range(60):
            x_new = x + step * d
            f_new, g_new = fun(x_new)
            if f_new <= f + c1 * step * slope:
                break
            # approximate Wolfe: once f changes sit at rounding level, judge
            # the step by the directional derivative at the trial point
            if f_new <= f + noise and g_new @ d <= (1 - 2 * c1) * -slope:
                break
            step *= 0.5
        else:
            return _LbfgsResult(x, f, g, it, bool(np.abs(g).max() <= grad_tol), history)
        it += 1
        s_vec, y_vec = x_new - x, g_new - g
        sy = s_vec @ y_vec
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            S.append(s_vec)
            Y.append(y_vec)
            rho.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), rho.pop(0)
        stalled = f - f_new <= 1e-16 * max(1.0, abs(f)) and step < 1e-6
        x, f, g = x_new, f_new, g_new
        history.append(f)
        if stalled:
            break
    return _LbfgsResult(x, f, g, it, bool(np.abs(g).max() <= grad_tol), history)


def _initial_factors(s, config, warm=None):
    rng = np.random.default_rng(config.seed)
    u = rng.uniform(-config.init_scale, config.init_scale, s)
    v = rng.uniform(-config.init_scale, config.init_scale, s)
    if warm is not None:
        # keep warm-start entries but reseed those sitting at the zero saddle
        u = np.where(np.abs(warm[0]) >= config.init_scale, warm[0], u)
        v = np.where(np.abs(warm[1]) >= config.init_scale, warm[1], v)
    return u, v


def _factor_scales(basis):
    """Per-coordinate scales ``r`` with ``U = r u``, ``V = r v``.

    ``r_k^4 = 1 / E[C_k^2]`` makes the curvature of ``A = r^2 u v`` in the
    ``(u, v)`` coordinates comparable across features and to the ``phi``
    block, which is what a scalar-initialized L-BFGS needs.
    """
    g = np.diag(basis.gram()).copy()
    g[g <= 0] = 1.0
    return g ** -0.25


def solve(basis, config, warm=None):
    """Minimize ``lam |A|_1 + loss(A)`` on a centered square basis.

    ``warm`` is an optional ``(U, V, F)`` triple from a previous solve.
    Non-convergence is reported through ``converged`` rather than raised;
    ``grad_tol`` applies to the gradient in the solver's internal
    coordinates ``(phi, u, v)`` with ``F = sqrt(n) phi``, ``U = r u``,
    ``V = r v`` (see :func:`_factor_scales`). When the gradient target is met
    but ``|z_lambda|`` still exceeds ``1 + KKT_TOL``, the target is divided by
    100 (down to ``GRAD_TOL_FLOOR``) and L-BFGS resumes.
    """
    basis._require_square()
    n, s, eps, lam = basis.n_rows, basis.s, config.eps, config.lam
    if lam == 0 and np.linalg.matrix_rank(basis.gram()) < s:
        warnings.warn("lambda = 0 with rank-deficient features: the minimizer is not unique",
                      stacklevel=2)
    r = _factor_scales(basis)
    if warm is not None:
        warm = (warm[0] / r, warm[1] / r, warm[2])
    u, v = _initial_factors(s, config, warm)
    F = np.zeros(n) if warm is None else np.asarray(warm[2], dtype=float)
    # F = sqrt(n) * phi balances the curvature of the F and (u, v) blocks
    root = np.sqrt(n)

    def fun(x):
        phi, uu, vv = x[:n], x[n:n + s], x[n + s:]
        value, gF, gU, gV = semidual_objective(root * phi, r * uu, r * vv, basis, eps, lam)
        return value, np.concatenate([root * gF, r * gU, r * gV])

    x = np.concatenate([F / root, u, v])
    iterations, history = 0, []
    grad_tol = config.grad_tol
    for _ in range(MAX_RESTARTS + 1):
        res = lbfgs(fun, x, config.lbfgs_memory, grad_tol, config.max_iter - iterations)
        iterations += res.iterations
        history += res.history
        x = res.x
        if lam == 0 or iterations >= config.max_iter:
            break
        kicked = _escape_saddle(x[n:n + s], x[n + s:], r, basis, eps, lam, root * x[:n],
                                config.init_scale)
        if kicked is not None:
            x = np.concatenate([x[:n], *kicked])
            continue
        # |z| - 1 on the support shrinks like grad / lam: tighten until it fits
        if not res.converged or grad_tol <= GRAD_TOL_FLOOR or _kkt_ok(x, n, s, r, basis, eps, lam, root):
            break
        grad_tol = max(grad_tol / 100, GRAD_TOL_FLOOR)
    F = root * x[:n]
    U, V = r * x[n:n + s], r * x[n + s:]
    A = U * V
    value, _, grad_A, lse = _semidual_core(F, A, basis, eps)
    G = -0.5 * eps * lse
    shift = G.mean()
    F, G = F + shift, G - shift
    if lam > 0:
        z = -grad_A / lam
        kkt = float(np.abs(z).max())
    else:
        z = np.full(s, np.nan)
        kkt = float("nan")
    converged = res.converged and not kkt > 1 + KKT_TOL
    objective = value - 0.5 * eps + lam * np.abs(A).sum()
    return IotSolution(
        A=A, F=F, G=G, z_lambda=z, objective=float(objective), kkt_sup=kkt,
        converged=converged, iterations=iterations,
        grad_norm=float(np.abs(res.g).max()), U=U, V=V, history=history,
    )


def _kkt_ok(x, n, s, r, basis, eps, lam, root):
    A = r * x[n:n + s] * r * x[n + s:]
    _, _, grad_A, _ = _semidual_core(root * x[:n], A, basis, eps)
    return np.abs(grad_A).max() <= lam * (1 + KKT_TOL)


def _escape_saddle(u, v, r, basis, eps, lam, F, init_scale):
    """Move coordinates stuck at the ``u = v = 0`` saddle, or return ``None``.

    A coordinate with ``A_k ~ 0`` but ``|grad_k| > lam`` is a saddle of the
    surrogate that L-BFGS cannot see once the gradient is tiny. It is set to
    a diagonal Newton step ``A_k = -sign(g_k) (|g_k| - lam) / h_k`` with
    ``h_k = (2/eps) E[C_k^2]``, split evenly between ``u`` and ``v``.
    """
    w = r**2
    A = w * u * v
    _, _, grad_A, _ = _semidual_core(F, A, basis, eps)
    uv = np.abs(u * v)
    tiny = uv <= max(1e-6 * uv.max(), init_scale**2)
    stuck = tiny & (np.abs(grad_A) > lam * (1 + KKT_TOL))
    if not stuck.any():
        return None
    h = 2.0 / eps / w**2  # E[C_k^2] = r_k^-4 = w_k^-2
    step = (np.abs(grad_A[stuck]) - lam) / h[stuck]
    u, v = u.copy(), v.copy()
    u[stuck] = np.sqrt(step / w[stuck])
    v[stuck] = -np.sign(grad_A[stuck]) * u[stuck]
    return u, v


def null_threshold(basis):
    """Smallest lambda for which ``A = 0`` is optimal: ``|Phi^* P_hat|_inf``."""
    return float(np.abs(basis.diagonal_moment()).max())


def reg_path(basis, lambdas, config, deadline=None):
    """Solve along a strictly descending lambda grid with warm starts.

    Returns one entry per lambda; an entry is the exception instance if that
    solve raised, and the path continues from the last good solution. With a
    ``deadline`` (a ``time.monotonic()`` value), entries not started in time
    are ``TimeoutError`` instances.
    """
    lambdas = [float(v) for v in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be strictly descending")
    out, warm = [], None
    for lam in lambdas:
        if deadline is not None and time.monotonic() >= deadline:
            out.append(TimeoutError(f"time budget exhausted before lambda={lam:g}"))
            continue
        try:
            sol = solve(basis, replace(config, lam=lam), warm=warm)
        except (NumericalError, FloatingPointError) as exc:
            out.append(exc)
            continue
        out.append(sol)
        warm = (sol.U, sol.V, sol.F)
    return out

