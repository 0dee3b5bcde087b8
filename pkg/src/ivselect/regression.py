"""Least squares, reduced-form and probit fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .data import Dataset
from .errors import DimensionMismatch, NotConverged, OneClassOnly, RankDeficient

COND_LIMIT = 1e12
EIG_FLOOR = 1e-12


def check_rank(design: np.ndarray, what: str = "design") -> None:
    """Raise RankDeficient when the column-equilibrated Gram matrix is ill conditioned."""
    norms = np.linalg.norm(design, axis=0)
    if np.any(norms == 0):
        raise RankDeficient(f"{what} has an all-zero column")
    scaled = design / norms
    cond = np.linalg.cond(scaled.T @ scaled)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise RankDeficient(f"{what} is rank deficient (condition number {cond:.3g})")


def sym_psd(a: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Symmetrize and clip eigenvalues from below."""
    a = (a + a.T) / 2
    w, v = np.linalg.eigh(a)
    if w.min() >= floor:
        return a
    return (v * np.maximum(w, floor)) @ v.T


@dataclass(frozen=True)
class OlsFit:
    coef: np.ndarray
    residuals: np.ndarray
    xtx_inv: np.ndarray  # ((1/n) X'X)^{-1}
    robust_cov: np.ndarray  # covariance of sqrt(n)(coef - truth), HC0 or classical
    sigma2: float  # RSS / (n - p)

    @property
    def classical_cov(self) -> np.ndarray:
        return self.sigma2 * self.xtx_inv


def ols_fit(design, y, robust: bool = True) -> OlsFit:
    """Ordinary least squares.

    ``robust_cov`` is the HC0 sandwich ``n (X'X)^{-1} (sum r_i^2 x_i x_i') (X'X)^{-1}``
    when ``robust``, otherwise ``sigma2 * n (X'X)^{-1}``. Both are scaled for
    ``sqrt(n)(coef - truth)``; divide by ``n`` for the covariance of ``coef``.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or y.ndim != 1 or design.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {design.shape} and response {y.shape} do not conform")
    n, p = design.shape
    if n <= p:
        raise DimensionMismatch(f"need n > p, got n={n}, p={p}")
    check_rank(design)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    xtx_inv = np.linalg.inv(design.T @ design / n)
    sigma2 = float(resid @ resid / (n - p))
    if robust:
        meat = (design * resid[:, None] ** 2).T @ design / n
        cov = xtx_inv @ meat @ xtx_inv
        cov = (cov + cov.T) / 2
    else:
        cov = sigma2 * xtx_inv
    return OlsFit(coef, resid, xtx_inv, cov, sigma2)


@dataclass(frozen=True)
class ReducedForm:
    """Z-coefficients of the reduced-form regressions of Y and D on W = (Z, X, 1).

    ``V_Gamma``, ``V_gamma`` and ``C`` are asymptotic covariances of
    ``sqrt(n)(Gamma_hat, gamma_hat)``; divide by ``n`` for finite-sample use.
    """

    Gamma_hat: np.ndarray
    gamma_hat: np.ndarray
    V_Gamma: np.ndarray
    V_gamma: np.ndarray
    C: np.ndarray
    n: int
    Sigma_W: np.ndarray
    xi_hat: np.ndarray
    delta_hat: np.ndarray

    @property
    def p_z(self) -> int:
        return self.Gamma_hat.shape[0]

    def joint_cov(self) -> np.ndarray:
        """[[V_Gamma, C], [C', V_gamma]], symmetrized with eigenvalues clipped at 1e-12."""
        full = np.block([[self.V_Gamma, self.C], [self.C.T, self.V_gamma]])
        return sym_psd(full)


def reduced_form_fit(ds: Dataset) -> ReducedForm:
    w = ds.design()
    n = ds.n
    fit_y = ols_fit(w, ds.y)
    fit_d = ols_fit(w, ds.d)
    xtx_inv = fit_y.xtx_inv
    cross = (w * (fit_y.residuals * fit_d.residuals)[:, None]).T @ w / n
    c_full = xtx_inv @ cross @ xtx_inv
    z = slice(0, ds.p_z)
    return ReducedForm(
        Gamma_hat=fit_y.coef[z],
        gamma_hat=fit_d.coef[z],
        V_Gamma=fit_y.robust_cov[z, z],
        V_gamma=fit_d.robust_cov[z, z],
        C=((c_full + c_full.T) / 2)[z, z],
        n=n,
        Sigma_W=w.T @ w / n,
        xi_hat=fit_y.residuals,
        delta_hat=fit_d.residuals,
    )


@dataclass(frozen=True)
class ProbitFit:
    coef: np.ndarray
    cov: np.ndarray  # inverse negative Hessian, covariance of coef itself
    loglik: float
    iterations: int
    converged: bool


def _probit_parts(design, y, coef, hessian=True):
    eta = design @ coef
    q = 2.0 * y - 1.0
    qe = q * eta
    log_cdf = special.log_ndtr(qe)
    loglik = float(log_cdf.sum())
    # lam = q * phi(q eta) / Phi(q eta), computed in log space
    lam = q * np.exp(-0.5 * qe**2 - 0.5 * np.log(2 * np.pi) - log_cdf)
    grad = design.T @ lam
    if not hessian:
        return loglik, grad, None
    weight = lam * (lam + eta)
    hess = -(design * weight[:, None]).T @ design
    return loglik, grad, hess


def probit_loglik(design, y, coef) -> float:
    return _probit_parts(np.asarray(design, float), np.asarray(y, float), coef, hessian=False)[0]


def probit_score(design, y, coef) -> np.ndarray:
    return _probit_parts(np.asarray(design, float), np.asarray(y, float), coef, hessian=False)[1]


def probit_hessian(design, y, coef) -> np.ndarray:
    return _probit_parts(np.asarray(design, float), np.asarray(y, float), coef)[2]


def probit_fit(design, y, max_iter: int = 100, tol: float = 1e-8) -> ProbitFit:
    """Probit maximum likelihood by Newton-Raphson with step halving, started at zero.

    Raises OneClassOnly when y is constant and NotConverged when the iteration
    limit or step halving is exhausted, or when the fitted index separates the
    two classes perfectly (the MLE does not exist).
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2 or y.ndim != 1 or design.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {design.shape} and response {y.shape} do not conform")
    n, p = design.shape
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("probit response must be 0/1")
    if y.min() == y.max():
        raise OneClassOnly("probit response has a single class")
    if n <= p:
        raise DimensionMismatch(f"need n > p, got n={n}, p={p}")
    check_rank(design)

    coef = np.zeros(p)
    loglik, grad, hess = _probit_parts(design, y, coef)
    for it in range(1, max_iter + 1):
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            raise NotConverged("singular Hessian; possible separation") from None
        t = 1.0
        for _ in range(60):
            trial = coef + t * step
            new_ll, new_grad, new_hess = _probit_parts(design, y, trial)
            if np.isfinite(new_ll) and new_ll >= loglik - 1e-12 * abs(loglik):
                break
            t /= 2
        else:
            raise NotConverged("step halving exhausted; possible separation")
        coef, loglik, grad, hess = trial, new_ll, new_grad, new_hess
        if np.linalg.norm(grad) <= tol:
            break
    else:
        raise NotConverged(f"no convergence in {max_iter} iterations; possible separation")

    if np.all((design @ coef > 0) == (y == 1)):
        raise NotConverged("the classes are perfectly separated; the MLE does not exist")
    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        raise NotConverged("singular information matrix at the optimum") from None
    return ProbitFit(coef, (cov + cov.T) / 2, loglik, it, True)
