"""Control function, TSLS and the Hausman pretest for polynomial outcome models.

The control-function (CF) estimator regresses Y on G(D), X and the
first-stage residual v_hat. By Frisch-Waugh it equals TSLS of Y on (1, G(D), X)
with the augmented instrument set (1, D_hat, G(D) - proj_v G(D), X): the
regressors with v_hat partialled out. Both routes are computed and compared.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import Dataset, EffectEstimate
from .errors import RankDeficient, UnderIdentified
from .regression import OlsFit, check_rank, ols_fit

CF_TSLS_RTOL = 1e-8


def _check_powers(powers, what):
    powers = [int(p) for p in powers]
    if not powers or powers[0] != 1 or any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValueError(f"{what} must be nonempty, start at 1 and increase strictly: {powers}")
    return tuple(powers)


@dataclass(frozen=True)
class BasisSpec:
    d_powers: tuple[int, ...] = (1, 2)
    z_powers: tuple[int, ...] = (1, 2)
    x_powers: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "d_powers", _check_powers(self.d_powers, "d_powers"))
        object.__setattr__(self, "z_powers", _check_powers(self.z_powers, "z_powers"))
        object.__setattr__(self, "x_powers", _check_powers(self.x_powers, "x_powers"))


@dataclass(frozen=True)
class Bases:
    G: np.ndarray
    H: np.ndarray
    X: np.ndarray
    g_names: tuple[str, ...]
    h_names: tuple[str, ...]
    x_names: tuple[str, ...]
    d_powers: tuple[int, ...]  # powers actually kept in G
    dropped: tuple[str, ...] = ()


def _power_name(name, p):
    return name if p == 1 else f"{name}^{p}"


def _expand(cols: np.ndarray, names, powers):
    """Columns first, then each higher power of every column; exact duplicates dropped."""
    out, out_names, kept_powers, dropped = [], [], [], []
    for p in powers:
        for j, name in enumerate(names):
            col = cols[:, j] ** p
            nm = _power_name(name, p)
            if any(np.array_equal(col, prev) for prev in out):
                dropped.append(nm)
                continue
            out.append(col)
            out_names.append(nm)
            kept_powers.append(p)
    mat = np.column_stack(out) if out else np.empty((cols.shape[0], 0))
    return mat, tuple(out_names), tuple(kept_powers), dropped


def build_bases(ds: Dataset, spec: BasisSpec | None = None) -> Bases:
    """Polynomial bases G(D), H(Z) and the expanded covariates.

    Power columns that duplicate an existing column (a binary variable
    squared, for example) are dropped with a warning.
    """
    spec = spec or BasisSpec()
    G, g_names, g_pows, drop_g = _expand(ds.d[:, None], [ds.treatment_name], spec.d_powers)
    H, h_names, _, drop_h = _expand(ds.z, ds.z_names, spec.z_powers)
    X, x_names, _, drop_x = _expand(ds.x, ds.x_names, spec.x_powers)
    dropped = tuple(drop_g + drop_h + drop_x)
    if dropped:
        warnings.warn(f"dropped duplicate basis columns: {', '.join(dropped)}")
    return Bases(G, H, X, g_names, h_names, x_names, g_pows, dropped)


def _g_row(d: float, powers) -> np.ndarray:
    return np.array([d**p for p in powers], dtype=float)


@dataclass(frozen=True)
class CfFit:
    """Coefficient order: intercept, G(D) terms, X terms, v_hat."""

    coef: np.ndarray
    cov: np.ndarray
    names: tuple[str, ...]
    v_hat: np.ndarray
    first_stage: OlsFit
    augmented_tsls_check: float
    d_powers: tuple[int, ...]
    sigma2: float
    n: int

    @property
    def g_slice(self) -> slice:
        return slice(1, 1 + len(self.d_powers))

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class TslsFit:
    """Coefficient order: intercept, G(D) terms, X terms."""

    coef: np.ndarray
    cov: np.ndarray
    names: tuple[str, ...]
    residuals: np.ndarray
    d_powers: tuple[int, ...]
    sigma2: float
    n: int

    @property
    def g_slice(self) -> slice:
        return slice(1, 1 + len(self.d_powers))

    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


def tsls(regressors: np.ndarray, instruments: np.ndarray, y: np.ndarray):
    """TSLS with homoscedastic covariance sigma2 (Xh'Xh)^{-1}, sigma2 = RSS/(n - k)."""
    n, k = regressors.shape
    if instruments.shape[1] < k:
        raise UnderIdentified(f"{instruments.shape[1]} instruments for {k} regressors")
    check_rank(instruments, "instrument matrix")
    proj, *_ = np.linalg.lstsq(instruments, regressors, rcond=None)
    xh = instruments @ proj
    try:
        check_rank(xh, "projected regressors")
    except RankDeficient:
        raise UnderIdentified("instruments do not identify every regressor") from None
    coef = np.linalg.solve(xh.T @ regressors, xh.T @ y)
    resid = y - regressors @ coef
    sigma2 = float(resid @ resid / (n - k))
    cov = sigma2 * np.linalg.inv(xh.T @ xh)
    return coef, (cov + cov.T) / 2, resid, sigma2


def _structural(ds: Dataset, b: Bases) -> tuple[np.ndarray, tuple[str, ...]]:
    design = np.column_stack([np.ones(ds.n), b.G, b.X])
    return design, ("(Intercept)", *b.g_names, *b.x_names)


def cf_fit(ds: Dataset, spec: BasisSpec | None = None) -> CfFit:
    """Two-stage control function fit with the augmented-IV TSLS cross-check.

    The covariance is sigma2 (R'R)^{-1} for R = (1, G, X, v_hat) with sigma2
    from the control-function residuals; on the structural block this equals
    the TSLS covariance of the augmented-instrument representation.
    """
    b = build_bases(ds, spec)
    n = ds.n
    first = ols_fit(np.column_stack([np.ones(n), b.H, b.X]), ds.d, robust=False)
    v = first.residuals

    structural, names = _structural(ds, b)
    design = np.column_stack([structural, v])
    second = ols_fit(design, ds.y, robust=False)
    coef = second.coef

    # augmented instruments: structural regressors with v_hat partialled out
    aug = structural - np.outer(v, v @ structural) / (v @ v)
    coef_aug = np.linalg.solve(aug.T @ structural, aug.T @ ds.y)
    k = structural.shape[1]
    scale = np.maximum(np.abs(coef[:k]), 1.0)
    check = float(np.max(np.abs(coef_aug - coef[:k]) / scale))
    if check > CF_TSLS_RTOL:
        raise RankDeficient(f"control function and augmented TSLS disagree ({check:.2e})")

    cov = second.classical_cov / n
    return CfFit(
        coef=coef,
        cov=(cov + cov.T) / 2,
        names=(*names, "v_hat"),
        v_hat=v,
        first_stage=first,
        augmented_tsls_check=check,
        d_powers=b.d_powers,
        sigma2=second.sigma2,
        n=n,
    )


def tsls_fit(ds: Dataset, spec: BasisSpec | None = None) -> TslsFit:
    """TSLS of Y on (1, G(D), X) instrumented by (1, H(Z), X)."""
    b = build_bases(ds, spec)
    structural, names = _structural(ds, b)
    if b.H.shape[1] < b.G.shape[1]:
        raise UnderIdentified(f"{b.H.shape[1]} excluded instruments for {b.G.shape[1]} endogenous terms")
    instruments = np.column_stack([np.ones(ds.n), b.H, b.X])
    coef, cov, resid, sigma2 = tsls(structural, instruments, ds.y)
    return TslsFit(coef, cov, names, resid, b.d_powers, sigma2, ds.n)


@dataclass(frozen=True)
class PretestResult:
    hausman_stat: float
    p_value: float
    chosen: str  # "CF" or "TSLS"
    cf: CfFit
    tsls: TslsFit
    alpha: float
    df: int = field(default=1)

    @property
    def selected(self) -> CfFit | TslsFit:
        return self.cf if self.chosen == "CF" else self.tsls


def hausman_pretest(ds: Dataset, spec: BasisSpec | None = None, alpha: float = 0.05) -> PretestResult:
    """Hausman comparison of the G(D) coefficients of CF and TSLS.

    The covariance difference is symmetrized and pseudo-inverted with
    eigenvalues at or below 1e-10 times the largest treated as zero (negative
    directions drop out, so the statistic is never negative). The p-value
    uses one degree of freedom.
    """
    cf = cf_fit(ds, spec)
    ts = tsls_fit(ds, spec)
    diff = cf.coef[cf.g_slice] - ts.coef[ts.g_slice]
    dcov = ts.cov[ts.g_slice, ts.g_slice] - cf.cov[cf.g_slice, cf.g_slice]
    dcov = (dcov + dcov.T) / 2
    w, vecs = np.linalg.eigh(dcov)
    cutoff = 1e-10 * max(np.abs(w).max(), np.finfo(float).tiny)
    inv_w = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    pinv = (vecs * inv_w) @ vecs.T
    h = float(max(diff @ pinv @ diff, 0.0))
    p = float(stats.chi2.sf(h, df=1))
    return PretestResult(h, p, "TSLS" if p < alpha else "CF", cf, ts, alpha)


def causal_effect(fit: CfFit | TslsFit, d1: float, d2: float, alpha: float = 0.05) -> EffectEstimate:
    """Effect of moving the treatment from d2 to d1: (G(d1) - G(d2))' beta with a normal CI."""
    delta = _g_row(d1, fit.d_powers) - _g_row(d2, fit.d_powers)
    sl = fit.g_slice
    est = float(delta @ fit.coef[sl])
    var = float(delta @ fit.cov[sl, sl] @ delta)
    method = "CF" if isinstance(fit, CfFit) else "TSLS"
    return EffectEstimate.normal(est, np.sqrt(max(var, 0.0)), alpha, method)
