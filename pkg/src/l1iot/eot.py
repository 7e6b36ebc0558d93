"""Discrete entropic optimal transport and the inverse-OT loss.

Conventions used throughout the package: the forward problem *maximizes*

    <C, P> - (eps / 2) * KL(P | a x b),    KL(P|Q) = sum P log(P/Q) - sum P + sum Q,

over couplings with marginals ``a`` and ``b``. The optimal coupling is

    P = a_i b_j exp(2 (F_i + G_j + C_ij) / eps)

and the potentials are gauged so that ``sum_j G_j = 0``.  For costs that are
linear in a parameter vector ``A`` (``C = sum_k A_k C_k``) the negative
log-likelihood of an empirical coupling ``P_hat = Id / n`` is

    loss(A) = -<C_A, P_hat> + W(A),    W(A) = max_P <C_A, P> - (eps/2) KL(P | a x b).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .errors import ConvergenceError, NumericalError

SUPPORT_TOL = 1e-8


class CostBasis:
    """Dense linear cost parameterization ``A -> sum_k A_k C_k``.

    Parameters
    ----------
    features : array, shape (s, n_rows, n_cols)
        The discretized feature matrices ``C_k``.
    """

    def __init__(self, features):
        features = np.asarray(features, dtype=float)
        if features.ndim != 3:
            raise ValueError("features must have shape (s, n_rows, n_cols)")
        self._features = features

    @property
    def features(self):
        return self._features

    @property
    def s(self):
        return self.features.shape[0]

    @property
    def n_rows(self):
        return self.features.shape[1]

    @property
    def n_cols(self):
        return self.features.shape[2]

    def cost(self, A):
        return np.tensordot(np.asarray(A, float), self.features, axes=1)

    def cost_columns(self, A, cols):
        return np.tensordot(np.asarray(A, float), self.features[:, :, cols], axes=1)

    def adjoint(self, P):
        """``Phi^* P = (<C_k, P>)_k``."""
        return np.tensordot(self.features, P, axes=([1, 2], [0, 1]))

    def adjoint_columns(self, P_block, cols):
        return np.tensordot(self.features[:, :, cols], P_block, axes=([1, 2], [0, 1]))

    def diagonal_moment(self):
        """``Phi^* P_hat`` for the paired empirical coupling ``P_hat = Id / n``."""
        self._require_square()
        n = self.n_rows
        return self.features[:, np.arange(n), np.arange(n)].mean(axis=1)

    def gram(self):
        """``E_{a x b}[C C^T]`` under uniform marginals."""
        F = self.features.reshape(self.s, -1)
        return F @ F.T / F.shape[1]

    def permuted(self, perm):
        """Basis for the same paired data with samples reordered by ``perm``."""
        perm = np.asarray(perm)
        return CostBasis(self.features[:, perm][:, :, perm])

    def _require_square(self):
        if self.n_rows != self.n_cols:
            raise ValueError("paired-sample loss needs a square basis")


class QuadraticBasis(CostBasis):
    """Quadratic features ``C_(i,j)(x, y) = x_i y_j`` kept in factored form.

    The parameter vector is the column-major vectorization of a ``d1 x d2``
    matrix, ``k = i + d1 * j``, so that Kronecker identities such as
    ``vec(S_a M S_b) = (S_b kron S_a) vec(M)`` apply directly. Costs and
    adjoints are evaluated as ``X A Y^T`` and ``X^T P Y``; the dense feature
    tensor is only materialized on request.
    """

    def __init__(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if x.ndim != 2 or y.ndim != 2:
            raise ValueError("x and y must be 2-D sample arrays")
        self.x = x
        self.y = y

    @property
    def d1(self):
        return self.x.shape[1]

    @property
    def d2(self):
        return self.y.shape[1]

    @property
    def s(self):
        return self.d1 * self.d2

    @property
    def n_rows(self):
        return self.x.shape[0]

    @property
    def n_cols(self):
        return self.y.shape[0]

    @property
    def features(self):
        f = np.einsum("pi,qj->jipq", self.x, self.y)
        return f.reshape(self.s, self.n_rows, self.n_cols)

    def matrix(self, A):
        return np.asarray(A, float).reshape(self.d1, self.d2, order="F")

    def cost(self, A):
        return self.x @ self.matrix(A) @ self.y.T

    def cost_columns(self, A, cols):
        return self.x @ (self.matrix(A) @ self.y[cols].T)

    def adjoint(self, P):
        return (self.x.T @ (P @ self.y)).ravel(order="F")

    def adjoint_columns(self, P_block, cols):
        return (self.x.T @ (P_block @ self.y[cols])).ravel(order="F")

    def diagonal_moment(self):
        self._require_square()
        return (self.x.T @ self.y / self.n_rows).ravel(order="F")

    def gram(self):
        sxx = self.x.T @ self.x / self.n_rows
        syy = self.y.T @ self.y / self.n_cols
        return np.kron(syy, sxx)

    def permuted(self, perm):
        return QuadraticBasis(self.x[perm], self.y[perm])


def center_features(raw):
    """Double-center every feature so all its row and column sums vanish.

    ``C_k <- C_k - rowmean - colmean + grandmean``. For a
    :class:`QuadraticBasis` this is exactly recentering the samples.
    """
    if isinstance(raw, QuadraticBasis):
        if not (np.all(np.isfinite(raw.x)) and np.all(np.isfinite(raw.y))):
            raise ValueError("samples must be finite")
        return QuadraticBasis(raw.x - raw.x.mean(0), raw.y - raw.y.mean(0))
    f = raw.features
    if not np.all(np.isfinite(f)):
        raise ValueError("features must be finite")
    centered = (
        f
        - f.mean(axis=2, keepdims=True)
        - f.mean(axis=1, keepdims=True)
        + f.mean(axis=(1, 2), keepdims=True)
    )
    return CostBasis(centered)


def rescale_features(basis):
    """Scale features so that ``||C(x_i, y_j)|| <= 1`` everywhere.

    Returns ``(scaled_basis, scale)``; a parameter ``A`` for the original basis
    corresponds to ``scale * A`` for the scaled one.
    """
    if isinstance(basis, QuadraticBasis):
        sx = np.linalg.norm(basis.x, axis=1).max()
        sy = np.linalg.norm(basis.y, axis=1).max()
        sx = sx if sx > 0 else 1.0
        sy = sy if sy > 0 else 1.0
        return QuadraticBasis(basis.x / sx, basis.y / sy), float(sx * sy)
    norms = np.sqrt((basis.features**2).sum(axis=0))
    scale = float(norms.max()) if norms.max() > 0 else 1.0
    return CostBasis(basis.features / scale), scale


def support(A, tol=SUPPORT_TOL):
    return np.flatnonzero(np.abs(np.asarray(A)) > tol)


@dataclass
class EotSolution:
    coupling: np.ndarray
    F: np.ndarray
    G: np.ndarray
    value: float
    iterations: int
    marginal_residual: float


def sinkhorn(cost, a, b, eps, tol=1e-9, max_iter=100_000):
    """Log-domain Sinkhorn for the entropic problem described in the module doc.

    Stops once the L1 marginal residual ``|P1 - a|_1 + |P^T 1 - b|_1`` is at
    most ``tol``; raises :class:`ConvergenceError` otherwise.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    cost = np.asarray(cost, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if cost.shape != (a.size, b.size):
        raise ValueError("cost shape does not match marginals")
    la, lb = np.log(a), np.log(b)
    K = 2.0 * cost / eps
    # f, g are potentials in units of eps/2
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    residual = np.inf
    it = 0
    while it < max_iter:
        it += 1
        g_new = -logsumexp(K + (la + f)[:, None], axis=0)
        # column sums of the previous iterate; rows are exact after the f step
        residual = np.sum(b * np.abs(np.expm1(g - g_new))) if it > 1 else np.inf
        g = g_new
        f = -logsumexp(K + (lb + g)[None, :], axis=1)
        if residual <= tol:
            break
    logP = K + (la + f)[:, None] + (lb + g)[None, :]
    P = np.exp(logP)
    residual = np.abs(P.sum(1) - a).sum() + np.abs(P.sum(0) - b).sum()
    if residual > tol:
        raise ConvergenceError(
            f"sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
            f"(residual {residual:.3e})",
            residual=residual,
            iterations=it,
        )
    F = 0.5 * eps * f
    G = 0.5 * eps * g
    shift = G.mean()
    F, G = F + shift, G - shift
    value = -F @ a - G @ b + 0.5 * eps * (P.sum() - 1.0)
    return EotSolution(P, F, G, float(value), it, float(residual))


def _uniform(n):
    return np.full(n, 1.0 / n)


def solve_forward(A, basis, eps, tol=1e-9, max_iter=100_000):
    """Sinkhorn at cost ``Phi A`` with the uniform empirical marginals."""
    return sinkhorn(
        basis.cost(A), _uniform(basis.n_rows), _uniform(basis.n_cols), eps, tol, max_iter
    )


def loss(A, basis, eps, **sinkhorn_kw):
    """``-<Phi A, P_hat> + W(A)`` with ``P_hat = Id / n``."""
    A = np.asarray(A, dtype=float)
    sol = solve_forward(A, basis, eps, **sinkhorn_kw)
    return float(sol.value - A @ basis.diagonal_moment())


def grad_W(A, basis, eps, **sinkhorn_kw):
    """Gradient of ``W``: ``Phi^* P_A``."""
    sol = solve_forward(A, basis, eps, **sinkhorn_kw)
    return basis.adjoint(sol.coupling)


def grad_loss(A, basis, eps, **sinkhorn_kw):
    return grad_W(A, basis, eps, **sinkhorn_kw) - basis.diagonal_moment()


def hessian_W(A, basis, eps, symmetrize=True, **sinkhorn_kw):
    """Hessian of ``W`` by implicit differentiation of the Sinkhorn fixed point.

    Differentiating the marginal constraints of ``P = a b exp(2(F+G+C)/eps)``
    along ``C_k`` gives, for ``(dF, dG)``,

        a_i dF_i + (P dG)_i   = -(P o C_k) 1
        (P^T dF)_j + b_j dG_j = -(P o C_k)^T 1

    solved through the Schur complement in ``dG`` with the gauge
    ``sum_j b_j dG_j = 0`` added as a rank-one term. Then
    ``dP/dA_k = (2/eps) P o (dF + dG + C_k)`` and ``H_jk = <C_j, dP/dA_k>``.
    Cost is cubic in the number of samples.
    """
    sol = solve_forward(A, basis, eps, **sinkhorn_kw)
    P = sol.coupling
    if P.min() <= 1e-300:
        raise NumericalError(
            f"coupling underflows at eps={eps:g}; the implicit system is singular, "
            "use a larger eps"
        )
    a = P.sum(1)
    b = P.sum(0)
    C = basis.features
    PC = P[None] * C
    r1 = -PC.sum(axis=2).T  # (n_rows, s)
    r2 = -PC.sum(axis=1).T  # (n_cols, s)
    schur = np.diag(b) - P.T @ (P / a[:, None]) + np.outer(b, b)
    rhs = r2 - P.T @ (r1 / a[:, None])
    try:
        factor = scipy.linalg.cho_factor(schur)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"implicit-differentiation system is singular at eps={eps:g}; "
            "use a larger eps"
        ) from exc
    dG = scipy.linalg.cho_solve(factor, rhs)
    dF = (r1 - P @ dG) / a[:, None]
    # H_jk = (2/eps) [<C_j o C_k, P> + <C_j o P, dF_k + dG_k>]
    Cf = C.reshape(basis.s, -1)
    H = (Cf * P.ravel()) @ Cf.T
    H += np.einsum("jpq,pk->jk", PC, dF) + np.einsum("jpq,qk->jk", PC, dG)
    H *= 2.0 / eps
    if symmetrize:
        H = 0.5 * (H + H.T)
    return H


def kl(P, Q):
    """``sum P log(P/Q) - sum P + sum Q`` with ``0 log 0 = 0``."""
    P = np.asarray(P, float)
    Q = np.asarray(Q, float)
    mask = P > 0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])) - P.sum() + Q.sum())


def bilevel_gap(A, basis, eps, **sinkhorn_kw):
    """``loss(A) - (eps/2) KL(P_hat | P_A)``; independent of ``A`` for fixed data."""
    A = np.asarray(A, dtype=float)
    basis._require_square()
    n = basis.n_rows
    sol = solve_forward(A, basis, eps, **sinkhorn_kw)
    diag = np.diag(sol.coupling)
    if diag.min() < 1e-300:
        raise NumericalError("P_A underflows on the observed pairs; KL is infinite")
    P_hat = np.eye(n) / n
    value = sol.value - A @ basis.diagonal_moment()
    return float(value - 0.5 * eps * kl(P_hat, sol.coupling))
