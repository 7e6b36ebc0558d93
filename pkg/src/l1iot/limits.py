"""Reference solvers for the two limits of Gaussian l1-iOT.

Large eps: the Lasso

    lambda0 |A|_1 + 1/2 |(Sb^{1/2} kron Sa^{1/2}) vec(A - A_hat)|^2.

Small eps (symmetric SPD costs): the graphical lasso in the form

    lambda0 |A|_1 - 1/2 log det A + 1/2 <A, A_hat^{-1}>,

whose 1/2 factors differ from the textbook version on purpose.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError
from .gaussian import _check_spd, unvec, vec

PD_FLOOR = 1e-10


@dataclass(frozen=True)
class LimitProblemSpec:
    kind: str
    A_hat: np.ndarray
    lambda0: float
    sigma_alpha: np.ndarray | None = None
    sigma_beta: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("lasso", "glasso"):
            raise ValueError(f"kind must be 'lasso' or 'glasso', got {self.kind!r}")
        if not self.lambda0 >= 0:
            raise ValueError("lambda0 must be non-negative")
        A = np.atleast_2d(np.asarray(self.A_hat, dtype=float))
        object.__setattr__(self, "A_hat", A)
        if self.kind == "glasso":
            if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12, rtol=0):
                raise ValueError("glasso requires a symmetric A_hat")
            if np.linalg.eigvalsh(A).min() <= 0:
                raise ValueError("glasso requires a positive definite A_hat")
        else:
            d1, d2 = A.shape
            sa = np.eye(d1) if self.sigma_alpha is None else self.sigma_alpha
            sb = np.eye(d2) if self.sigma_beta is None else self.sigma_beta
            object.__setattr__(self, "sigma_alpha", _check_spd(sa, "sigma_alpha"))
            object.__setattr__(self, "sigma_beta", _check_spd(sb, "sigma_beta"))
            if self.sigma_alpha.shape[0] != d1 or self.sigma_beta.shape[0] != d2:
                raise ValueError("covariance sizes do not match A_hat")


@dataclass
class LimitSolution:
    A: np.ndarray
    residual: float
    iterations: int
    converged: bool


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def lasso_objective(spec, A):
    diff = vec(np.asarray(A, dtype=float) - spec.A_hat)
    Q = np.kron(spec.sigma_beta, spec.sigma_alpha)
    return spec.lambda0 * np.abs(A).sum() + 0.5 * diff @ Q @ diff


def lasso_solve(spec, tol=1e-12, max_iter=100_000):
    """Cyclic coordinate descent, stopped on the duality gap.

    With ``Q = Sb kron Sa`` and ``r = A_hat - A`` the primal is
    ``lambda0 |A|_1 + 1/2 r^T Q r``; the dual point is ``r`` scaled so that
    ``|Q r|_inf <= lambda0``.
    """
    if spec.kind != "lasso":
        raise ValueError("lasso_solve needs a lasso spec")
    lam = spec.lambda0
    Q = np.kron(spec.sigma_beta, spec.sigma_alpha)
    a_hat = vec(spec.A_hat)
    b = Q @ a_hat
    a = np.zeros_like(a_hat)
    Qa = np.zeros_like(a_hat)
    diag = np.diag(Q)
    ya = a_hat @ b

    def gap():
        r = a_hat - a
        Qr = b - Qa
        rQr = r @ Qr
        primal = lam * np.abs(a).sum() + 0.5 * rQr
        top = np.abs(Qr).max()
        scale = 1.0 if top <= lam else lam / top
        # D(s r) = 1/2 |y|^2 - 1/2 |y - s r|^2 with y = Q^{1/2} a_hat
        dual = scale * (a_hat @ Qr) - 0.5 * scale**2 * rQr
        return primal - dual, primal

    g, _ = gap()
    for it in range(1, max_iter + 1):
        for k in range(a.size):
            old = a[k]
            rho = b[k] - Qa[k] + diag[k] * old
            new = _soft(rho, lam) / diag[k]
            if new != old:
                Qa += Q[:, k] * (new - old)
                a[k] = new
        g, primal = gap()
        if g <= tol * max(1.0, abs(primal)):
            return LimitSolution(unvec(a, *spec.A_hat.shape), g, it, True)
    return LimitSolution(unvec(a, *spec.A_hat.shape), g, max_iter, False)


def glasso_objective(spec, A):
    A = np.asarray(A, dtype=float)
    sign, logdet = np.linalg.slogdet(A)
    if sign <= 0:
        return np.inf
    return (spec.lambda0 * np.abs(A).sum() - 0.5 * logdet
            + 0.5 * np.sum(A * np.linalg.inv(spec.A_hat)))


def glasso_solve(spec, tol=1e-10, max_iter=100_000):
    """Proximal gradient on the SPD cone, started at ``A_hat``.

    The smooth part has gradient ``(A_hat^{-1} - A^{-1}) / 2``. Steps are
    backtracked until the prox point keeps its smallest eigenvalue above
    ``PD_FLOOR`` and satisfies the quadratic upper bound. The residual is the
    sup-norm of the prox-gradient map.
    """
    if spec.kind != "glasso":
        raise ValueError("glasso_solve needs a glasso spec")
    lam = spec.lambda0
    inv_hat = np.linalg.inv(spec.A_hat)
    inv_hat = 0.5 * (inv_hat + inv_hat.T)

    def smooth(A):
        return -0.5 * np.linalg.slogdet(A)[1] + 0.5 * np.sum(A * inv_hat)

    A = spec.A_hat.copy()
    step = 2.0 * np.linalg.eigvalsh(A).min() ** 2
    residual = np.inf
    for it in range(1, max_iter + 1):
        inv = np.linalg.inv(A)
        grad = 0.5 * (inv_hat - 0.5 * (inv + inv.T))
        f = smooth(A)
        for _ in range(60):
            cand = _soft(A - step * grad, step * lam)
            cand = 0.5 * (cand + cand.T)
            if np.linalg.eigvalsh(cand).min() > PD_FLOOR:
                D = cand - A
                if smooth(cand) <= f + np.sum(grad * D) + np.sum(D * D) / (2 * step) + 1e-15 * abs(f):
                    break
            step *= 0.5
        else:
            raise ConvergenceError("glasso iterate cannot stay in the SPD cone", iterations=it)
        residual = np.abs(cand - A).max() / step
        A = cand
        if residual <= tol:
            return LimitSolution(A, residual, it, True)
        step *= 1.5
    raise ConvergenceError(
        f"glasso did not reach tol {tol:.1e} (residual {residual:.2e})",
        residual=residual,
        iterations=max_iter,
    )
