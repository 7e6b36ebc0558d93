"""Closed-form entropic OT between centered Gaussians with cost ``x^T A y``.

Here ``W(A) = sup_S <A, S> + (eps/2) log det(Sb - S^T Sa^{-1} S)`` over
cross-covariances ``S``. This log-det weight is ``eps/2`` while the entropic
term of a Gaussian coupling is ``(eps_ot/2) KL = -(eps_ot/4) log det(...)``,
so a model at ``eps`` is the coupling a discrete solver produces at
``eps_ot = 2 * eps`` (see :func:`discrete_eps`).

All matrices are vectorized column-major (``k = i + d1 * j``) so that
``vec(Sa M Sb) = (Sb kron Sa) vec(M)``.
"""

from dataclasses import dataclass

import numpy as np

from .certificates import certificate_from_inverse_hessian, vanilla_certificate
from .eot import SUPPORT_TOL
from .errors import NumericalError

SVD_RTOL = 1e-12
EIG_FLOOR = 1e-14


def discrete_eps(eps):
    """Entropic weight of the discrete problem matching a Gaussian model at ``eps``."""
    return 2.0 * eps


def _check_spd(M, name):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12, rtol=0):
        raise ValueError(f"{name} must be a symmetric matrix")
    if np.linalg.eigvalsh(M).min() <= 1e-12:
        raise ValueError(f"{name} must be positive definite")
    return M


def sqrtm_spd(M):
    w, V = np.linalg.eigh(M)
    return (V * np.sqrt(np.maximum(w, EIG_FLOOR))) @ V.T


def vec(M):
    return np.asarray(M).ravel(order="F")


def unvec(v, d1, d2):
    return np.asarray(v).reshape(d1, d2, order="F")


def transposition(d1, d2):
    """Permutation ``T`` with ``T vec(X) = vec(X^T)`` for ``X`` of shape (d1, d2)."""
    T = np.zeros((d1 * d2, d1 * d2))
    for i in range(d1):
        for j in range(d2):
            # X[i, j] sits at i + d1 j in vec(X) and at j + d2 i in vec(X^T)
            T[j + d2 * i, i + d1 * j] = 1.0
    return T


@dataclass
class GaussianModel:
    sigma_alpha: np.ndarray
    sigma_beta: np.ndarray
    A: np.ndarray
    eps: float

    def __post_init__(self):
        self.sigma_alpha = _check_spd(self.sigma_alpha, "sigma_alpha")
        self.sigma_beta = _check_spd(self.sigma_beta, "sigma_beta")
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.shape != (self.d1, self.d2):
            raise ValueError(f"A must have shape {(self.d1, self.d2)}, got {self.A.shape}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def d1(self):
        return self.sigma_alpha.shape[0]

    @property
    def d2(self):
        return self.sigma_beta.shape[0]

    @classmethod
    def identity(cls, A, eps):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls(np.eye(A.shape[0]), np.eye(A.shape[1]), A, eps)

    def with_A(self, A):
        return GaussianModel(self.sigma_alpha, self.sigma_beta, A, self.eps)


def shrink_singular_values(d, eps):
    """``sqrt(1 + eps^2 / (4 d^2)) - eps / (2 d)``, written without cancellation."""
    d = np.asarray(d, dtype=float)
    return 2.0 * d / (eps + np.sqrt(eps**2 + 4.0 * d**2))


def _whitened(model):
    ra = sqrtm_spd(model.sigma_alpha)
    rb = sqrtm_spd(model.sigma_beta)
    return ra, rb, ra @ model.A @ rb


def _whitened_cross_covariance(X, eps):
    U, d, Vt = np.linalg.svd(X, full_matrices=False)
    d = np.where(d > SVD_RTOL * max(d.max(initial=0.0), 1e-300), d, 0.0)
    return (U * shrink_singular_values(d, eps)) @ Vt


def cross_covariance(model):
    """Cross-covariance of the optimal coupling, which is also ``grad W(A)``.

    Whitening ``X = Sa^{1/2} A Sb^{1/2}`` reduces the problem to identity
    covariances; there the maximizer shares the singular vectors of ``X`` with
    singular values shrunk by :func:`shrink_singular_values`.
    """
    ra, rb, X = _whitened(model)
    return ra @ _whitened_cross_covariance(X, model.eps) @ rb


def _objective(model, S):
    schur = model.sigma_beta - S.T @ np.linalg.solve(model.sigma_alpha, S)
    sign, logdet = np.linalg.slogdet(schur)
    if sign <= 0:
        raise NumericalError("log det of a non positive definite matrix")
    return float(np.sum(model.A * S) + 0.5 * model.eps * logdet)


def gaussian_objective(model, S):
    """``<A, S> + (eps/2) log det(Sb - S^T Sa^{-1} S)`` at an arbitrary ``S``."""
    return _objective(model, np.atleast_2d(np.asarray(S, float)))


def gaussian_W(model):
    return _objective(model, cross_covariance(model))


def gaussian_hessian(model, max_cond=1e12):
    """Hessian of ``W`` as an ``s x s`` matrix, ``s = d1 d2``.

    For identity covariances, with ``S`` the optimal cross-covariance,

        H = eps (eps^2 (I - S^T S)^{-1} kron (I - S S^T)^{-1} + (A^T kron A) T)^{-1},

    and general covariances follow by the whitening change of variable,
    ``H = (Sb^{1/2} kron Sa^{1/2}) H_white (Sb^{1/2} kron Sa^{1/2})``.
    """
    ra, rb, X = _whitened(model)
    d1, d2 = model.d1, model.d2
    eps = model.eps
    S = _whitened_cross_covariance(X, eps)
    left = np.linalg.inv(np.eye(d2) - S.T @ S)
    right = np.linalg.inv(np.eye(d1) - S @ S.T)
    inner = eps**2 * np.kron(left, right) + np.kron(X.T, X) @ transposition(d1, d2)
    cond = np.linalg.cond(inner)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericalError(
            f"Hessian inner matrix is ill-conditioned (cond={cond:.2e}) at eps={eps:g}"
        )
    H_white = eps * np.linalg.inv(inner)
    R = np.kron(rb, ra)
    H = R @ H_white @ R
    return 0.5 * (H + H.T)


def symmetric_restricted_inverse_hessian(A, eps):
    """Inverse Hessian (identity covariances, SPD ``A``) on symmetric matrices.

    Returns a callable ``M -> (1/eps) A (S^{-1} M S^{-1} + M) A``, i.e. the
    operator ``(1/eps) (A kron A)(S^{-1} kron S^{-1} + I)``; the full inverse
    Hessian has the transposition ``T`` in place of ``I``, and ``T = I`` on
    symmetric matrices. This stays bounded as ``eps -> 0`` (``S -> I``),
    whereas the full Hessian does not.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if not np.allclose(A, A.T, atol=1e-12, rtol=0):
        raise ValueError("A must be symmetric")
    w, U = np.linalg.eigh(A)
    if w.min() <= 0:
        raise ValueError("A must be positive definite")
    s_inv = (U / shrink_singular_values(w, eps)) @ U.T

    def apply(M):
        M = np.asarray(M, dtype=float)
        if not np.allclose(M, M.T, atol=1e-10 * max(1.0, np.abs(M).max()), rtol=0):
            raise ValueError("operator is restricted to symmetric matrices")
        return A @ (s_inv @ M @ s_inv + M) @ A / eps

    apply.matrix = np.kron(A, A) @ (np.kron(s_inv, s_inv) + np.eye(A.size)) / eps
    return apply


def joint_covariance(model):
    """Block covariance ``[[Sa, S], [S^T, Sb]]`` of the optimal coupling."""
    S = cross_covariance(model)
    J = np.block([[model.sigma_alpha, S], [S.T, model.sigma_beta]])
    J = 0.5 * (J + J.T)
    if np.linalg.eigvalsh(J).min() < -1e-10:
        raise AssertionError("joint covariance is not PSD; cross_covariance is broken")
    return J


def population_iot(model_hat, lam, symmetric=False, A0=None, tol=1e-12, max_iter=100_000):
    """l1-iOT on exact Gaussian moments (infinitely many samples).

    Minimizes ``lam |A|_1 + W(A) - <A, S_hat>`` where ``S_hat`` is the
    cross-covariance generated by ``model_hat`` and ``W`` uses its covariances
    and ``eps``. Accelerated proximal gradient with adaptive restarts.
    ``symmetric=True``
    restricts the search to symmetric matrices, which keeps the small-eps
    problem well conditioned.

    Returns ``(A, info)`` with ``info`` holding the prox-gradient residual and
    iteration count.
    """
    S_hat = cross_covariance(model_hat)
    d1, d2 = model_hat.d1, model_hat.d2
    A = np.zeros((d1, d2)) if A0 is None else np.array(A0, dtype=float)

    def grad(M):
        G = cross_covariance(model_hat.with_A(M)) - S_hat
        return 0.5 * (G + G.T) if symmetric else G

    def prox(M, t):
        return np.sign(M) * np.maximum(np.abs(M) - t * lam, 0.0)

    # grad W is (|Sa| |Sb| / eps)-Lipschitz, so 1 / L_global is always a safe
    # step; backtracking only shortens larger local steps, down to that floor.
    # The test is on secant curvature: objective values lose too many digits
    # at extreme eps to drive an Armijo test.
    step_min = model_hat.eps / (
        np.linalg.eigvalsh(model_hat.sigma_alpha).max()
        * np.linalg.eigvalsh(model_hat.sigma_beta).max()
    )
    step = max(step_min, 1.0 / np.linalg.eigvalsh(gaussian_hessian(model_hat.with_A(A))).max())
    Y, A_prev, theta = A.copy(), A.copy(), 1.0
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        gy = grad(Y)
        while True:
            A_new = prox(Y - step * gy, step)
            ga = grad(A_new)
            D = A_new - Y
            if step <= step_min or np.sum((ga - gy) * D) <= np.sum(D**2) / step:
                break
            step = max(0.5 * step, step_min)
        residual = np.abs(A_new - prox(A_new - step * ga, step)).max() / step
        if residual <= tol:
            A = A_new
            break
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta**2))
        momentum = (theta - 1) / theta_new
        if np.sum((Y - A_new) * (A_new - A_prev)) > 0:  # restart
            theta_new, momentum = 1.0, 0.0
        Y = A_new + momentum * (A_new - A_prev)
        A_prev, A, theta = A_new, A_new, theta_new
        step *= 1.25
    if symmetric:
        A = 0.5 * (A + A.T)
    return A, {"residual": float(residual), "iterations": it, "converged": residual <= tol}


def gaussian_certificate(model, tol=SUPPORT_TOL):
    """Vanilla certificate of ``model.A`` from the closed-form Hessian."""
    return vanilla_certificate(gaussian_hessian(model), vec(model.A), tol=tol)


def symmetric_certificate(A_hat, eps, tol=SUPPORT_TOL):
    """Certificate of a symmetric SPD ``A_hat`` (identity covariances) via the
    inverse Hessian restricted to symmetric matrices.

    The certificate of a symmetric sign pattern is itself symmetric, so it
    only sees the inverse Hessian on symmetric matrices. The antisymmetric
    block, which degenerates as ``eps -> 0``, is replaced by the identity.
    """
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    d = A_hat.shape[0]
    op = symmetric_restricted_inverse_hessian(A_hat, eps)
    T = transposition(d, d)
    sym = 0.5 * (np.eye(d * d) + T)
    K = sym @ op.matrix @ sym + (np.eye(d * d) - sym)
    return certificate_from_inverse_hessian(K, vec(A_hat), tol=tol)


def limit_certificate_inf(sigma_alpha, sigma_beta, A_hat, tol=SUPPORT_TOL):
    """Large-eps limit: the Lasso certificate with Gram ``Sb kron Sa``."""
    sa = _check_spd(sigma_alpha, "sigma_alpha")
    sb = _check_spd(sigma_beta, "sigma_beta")
    return vanilla_certificate(np.kron(sb, sa), vec(np.atleast_2d(A_hat)), tol=tol)


def limit_certificate_zero(A_hat, tol=SUPPORT_TOL):
    """Small-eps limit for symmetric SPD ``A_hat``: the graphical-lasso
    certificate with ``H = A_hat^{-1} kron A_hat^{-1}``."""
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    if not np.allclose(A_hat, A_hat.T, atol=1e-12, rtol=0):
        raise ValueError("A_hat must be symmetric")
    if np.linalg.eigvalsh(A_hat).min() <= 0:
        raise ValueError("A_hat must be positive definite")
    inv = np.linalg.inv(A_hat)
    return vanilla_certificate(np.kron(inv, inv), vec(A_hat), tol=tol)
