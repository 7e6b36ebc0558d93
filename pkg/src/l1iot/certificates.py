"""Sparsistency certificates built from a Hessian of ``W``.

The vanilla certificate of a parameter ``A_hat`` with support ``I`` is

    z = H[:, I] H[I, I]^{-1} sign(A_hat)[I],

and it is non-degenerate when ``max_{i not in I} |z_i| < 1``. The
minimal-norm certificate is the element of the l1 subdifferential at
``A_hat`` with the smallest ``H^{-1}``-norm; the two coincide whenever the
vanilla one is non-degenerate.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .eot import SUPPORT_TOL
from .errors import ConvergenceError, NumericalError


@dataclass
class Certificate:
    z: np.ndarray
    support: np.ndarray
    margin: float
    degenerate: bool


def nondegeneracy_margin(z, support):
    """``1 - max_{i not in support} |z_i|``; ``+1`` when the support is everything."""
    z = np.asarray(z, dtype=float)
    off = np.ones(z.size, dtype=bool)
    off[np.asarray(support, dtype=int)] = False
    if not off.any():
        return 1.0
    return float(1.0 - np.abs(z[off]).max())


def _make(z, I):
    margin = nondegeneracy_margin(z, I)
    return Certificate(z, I, margin, margin <= 0)


def _support_signs(A_hat, tol):
    a = np.asarray(A_hat, dtype=float).ravel(order="F")
    I = np.flatnonzero(np.abs(a) > tol)
    if I.size == 0:
        raise ValueError("A_hat has empty support")
    return a, I, np.sign(a[I])


def vanilla_certificate(H, A_hat, tol=SUPPORT_TOL, max_cond=1e12):
    """Certificate ``H[:, I] H[I, I]^{-1} sign(A_hat)_I``.

    ``A_hat`` may be a vector or a matrix (vectorized column-major, matching
    the Kronecker conventions of :mod:`l1iot.gaussian`).
    """
    H = np.asarray(H, dtype=float)
    _, I, s = _support_signs(A_hat, tol)
    HII = H[np.ix_(I, I)]
    cond = np.linalg.cond(HII)
    if not np.isfinite(cond) or cond > max_cond:
        raise NumericalError(
            f"H restricted to the support {I.tolist()} is singular (cond={cond:.2e})"
        )
    z = H[:, I] @ np.linalg.solve(HII, s)
    z[I] = s
    return _make(z, I)


def certificate_from_inverse_hessian(K, A_hat, tol=SUPPORT_TOL):
    """Vanilla certificate computed from ``K = H^{-1}`` instead of ``H``.

    ``z`` minimizes ``z^T K z`` subject to ``z_I = sign(A_hat)_I``, hence
    ``z_{I^c} = -K_{cc}^{-1} K_{cI} s``. Useful when ``K`` is well behaved but
    ``H`` is not (small-eps Gaussian limit).
    """
    K = np.asarray(K, dtype=float)
    a, I, s = _support_signs(A_hat, tol)
    c = np.setdiff1d(np.arange(a.size), I)
    z = np.zeros(a.size)
    z[I] = s
    if c.size:
        z[c] = -np.linalg.solve(K[np.ix_(c, c)], K[np.ix_(c, I)] @ s)
    return _make(z, I)


def min_norm_certificate(H, A_hat, tol=1e-9, max_iter=1_000_000, support_tol=SUPPORT_TOL):
    """Minimal ``H^{-1}``-norm element of the subdifferential of ``|.|_1`` at ``A_hat``.

    Solves ``min 1/2 z^T H^{-1} z`` with ``z_I = sign(A_hat)_I`` and
    ``|z_i| <= 1`` off the support by accelerated projected gradient (step
    ``1/L``, ``L = lambda_max(H^{-1})``), started from the clipped vanilla
    certificate. Stops when the projected-gradient residual is below ``tol``.
    """
    H = np.asarray(H, dtype=float)
    a, I, s = _support_signs(A_hat, support_tol)
    vanilla = vanilla_certificate(H, A_hat, tol=support_tol)
    c = np.setdiff1d(np.arange(a.size), I)
    if c.size == 0:
        return vanilla
    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("H is not positive definite") from exc
    K = scipy.linalg.cho_solve(factor, np.eye(a.size))
    K = 0.5 * (K + K.T)
    Kcc = K[np.ix_(c, c)]
    lin = K[np.ix_(c, I)] @ s
    L = np.linalg.eigvalsh(Kcc).max()

    w = np.clip(vanilla.z[c], -1.0, 1.0)
    y, theta = w.copy(), 1.0
    residual = np.inf
    for _ in range(max_iter):
        grad_w = Kcc @ w + lin
        residual = np.abs(w - np.clip(w - grad_w / L, -1.0, 1.0)).max() * L
        if residual <= tol:
            break
        w_new = np.clip(y - (Kcc @ y + lin) / L, -1.0, 1.0)
        theta_new = 0.5 * (1 + np.sqrt(1 + 4 * theta**2))
        momentum = (theta - 1) / theta_new
        if np.dot(y - w_new, w_new - w) > 0:
            theta_new, momentum = 1.0, 0.0
        y = w_new + momentum * (w_new - w)
        w, theta = w_new, theta_new
    else:
        raise ConvergenceError(
            f"min-norm certificate did not converge (residual {residual:.2e})",
            residual=residual,
            iterations=max_iter,
        )
    z = np.zeros(a.size)
    z[I] = s
    z[c] = w
    return _make(z, I)


def qp_objective(H, z):
    """``1/2 z^T H^{-1} z``, the quantity minimized by the min-norm certificate."""
    return 0.5 * float(z @ np.linalg.solve(H, z))
