"""Probit control function for a binary outcome with possibly invalid instruments.

Model: Y = 1(D beta + W'kappa + u > 0), D = W'gamma + v with W = (Z, X, 1).
A probit of Y on (W, v_hat) identifies Gamma = beta gamma + kappa (up to
scale), so beta is recovered as the median of Gamma_j / gamma_j over the
relevant instruments, which is robust while fewer than half are invalid.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import AnalysisOptions, Dataset
from .errors import IVError, NoRelevantIV, TooManyFailures
from .regression import OlsFit, ProbitFit, ols_fit, probit_fit

MAX_FAILURE_SHARE = 0.10
MIN_BOOTSTRAP = 100


@dataclass(frozen=True)
class ProbitCfFit:
    """Coefficient vectors run over W = (Z, X, 1)."""

    gamma_hat: np.ndarray
    v_hat: np.ndarray
    sigma_v_hat: float
    S_hat: tuple[int, ...]
    Gamma_hat: np.ndarray
    rho_hat: float
    beta_hat: float
    kappa_hat: np.ndarray
    invalid_detected: tuple[int, ...]
    kappa_se: np.ndarray
    z_names: tuple[str, ...]
    x_names: tuple[str, ...]
    invalid: bool
    first_stage: OlsFit = field(repr=False)
    probit: ProbitFit = field(repr=False)

    @property
    def p_z(self) -> int:
        return len(self.z_names)

    @property
    def v_coef(self) -> float:
        """Coefficient of v_hat once D is back in the index: rho_hat - beta_hat."""
        return self.rho_hat - self.beta_hat

    @property
    def relevant(self) -> list[str]:
        return [self.z_names[j] for j in self.S_hat]

    @property
    def invalid_names(self) -> list[str]:
        return [self.z_names[j] for j in self.invalid_detected]


@dataclass(frozen=True)
class CateResult:
    estimate: float
    se: float
    ci: tuple[float, float]
    d1: float
    d2: float
    w0: tuple[float, ...]
    B: int
    alpha: float
    beta_hat: float
    beta_se: float
    n_failed: int
    fit: ProbitCfFit = field(repr=False)


def probit_select(gamma_hat, Sigma_hat, sigma_v_hat: float, n: int, p_z: int | None = None) -> tuple[int, ...]:
    """Relevant instruments: |gamma_j| >= sigma_v sqrt(2 {Sigma^-1}_jj log n / n).

    ``gamma_hat`` may cover all of W; only its first ``p_z`` entries (default
    all of them) are screened.
    """
    gamma_hat = np.asarray(gamma_hat, dtype=float)
    p_z = gamma_hat.shape[0] if p_z is None else p_z
    prec = np.diag(np.linalg.inv(np.asarray(Sigma_hat, dtype=float)))[:p_z]
    thr = sigma_v_hat * np.sqrt(2 * prec * math.log(n) / n)
    keep = np.nonzero(np.abs(gamma_hat[:p_z]) >= thr)[0]
    if keep.size == 0:
        raise NoRelevantIV("no instrument passed the first-stage threshold")
    return tuple(int(j) for j in keep)


def probit_cf_fit(ds: Dataset, invalid: bool = True, opts: AnalysisOptions | None = None) -> ProbitCfFit:
    """Fit the probit control function.

    The median of ratios over S_hat estimates beta in both modes. With
    ``invalid`` the instruments in S_hat whose studentized kappa_hat exceeds
    the Bonferroni normal quantile are reported as invalid; without it every
    relevant instrument is taken as valid and nothing is flagged.
    """
    opts = opts or AnalysisOptions()
    if not np.isin(ds.y, (0.0, 1.0)).all():
        raise ValueError("probit control function needs a 0/1 outcome")
    w = ds.design()
    n = ds.n
    first = ols_fit(w, ds.d)
    v = first.residuals
    sigma_v = math.sqrt(first.sigma2)
    S = probit_select(first.coef, w.T @ w / n, sigma_v, n, ds.p_z)

    pfit = probit_fit(np.column_stack([w, v]), ds.y)
    Gamma, rho = pfit.coef[:-1], float(pfit.coef[-1])
    g = first.coef
    idx = np.asarray(S)
    beta = float(np.median(Gamma[idx] / g[idx]))
    kappa = Gamma - g * beta

    var = np.diag(pfit.cov)[:-1] + beta**2 * np.diag(first.robust_cov) / n
    kappa_se = np.sqrt(np.maximum(var, 0.0))
    flagged: tuple[int, ...] = ()
    if invalid:
        q = stats.norm.ppf(1 - opts.alpha / (2 * len(S)))
        flagged = tuple(j for j in S if abs(kappa[j]) > q * kappa_se[j])

    return ProbitCfFit(
        gamma_hat=g,
        v_hat=v,
        sigma_v_hat=sigma_v,
        S_hat=S,
        Gamma_hat=Gamma,
        rho_hat=rho,
        beta_hat=beta,
        kappa_hat=kappa,
        invalid_detected=flagged,
        kappa_se=kappa_se,
        z_names=ds.z_names,
        x_names=ds.x_names,
        invalid=invalid,
        first_stage=first,
        probit=pfit,
    )


def _w_full(fit: ProbitCfFit, w0) -> np.ndarray:
    w0 = np.asarray(w0, dtype=float).ravel()
    expected = fit.kappa_hat.shape[0] - 1
    if w0.shape[0] != expected:
        raise ValueError(f"w0 needs {expected} entries (instruments then covariates), got {w0.shape[0]}")
    return np.append(w0, 1.0)


def cate(fit: ProbitCfFit, d1: float, d2: float, w0) -> float:
    """Partial-mean CATE: average over v_hat of Phi(d beta + w0'kappa + v_hat (rho - beta)), d1 minus d2."""
    base = _w_full(fit, w0) @ fit.kappa_hat + fit.v_hat * fit.v_coef
    p1 = stats.norm.cdf(d1 * fit.beta_hat + base)
    p2 = stats.norm.cdf(d2 * fit.beta_hat + base)
    return float(np.mean(p1 - p2))


def default_w0(ds: Dataset) -> np.ndarray:
    return np.concatenate([ds.z.mean(axis=0), ds.x.mean(axis=0)])


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("ROBUSTIV_THREADS", "1") or 1)
    return max(1, int(threads))


def cate_ci(
    ds: Dataset,
    d1: float,
    d2: float,
    w0=None,
    B: int = 500,
    seed: int = 0,
    opts: AnalysisOptions | None = None,
    invalid: bool = True,
    threads: int | None = None,
) -> CateResult:
    """Pairs-bootstrap SE and percentile CI for the CATE (and an SE for beta_hat).

    Every replicate reruns the whole fit, instrument screening included.
    Replicate b draws its rows from the b-th child of ``SeedSequence(seed)``,
    so results do not depend on ``threads``. Raises TooManyFailures when more
    than 10% of replicates fail.
    """
    if B < MIN_BOOTSTRAP:
        raise ValueError(f"B must be at least {MIN_BOOTSTRAP}")
    opts = opts or AnalysisOptions()
    w0 = default_w0(ds) if w0 is None else np.asarray(w0, dtype=float)
    fit = probit_cf_fit(ds, invalid, opts)
    est = cate(fit, d1, d2, w0)

    def one(child):
        rows = np.random.Generator(np.random.PCG64(child)).integers(0, ds.n, ds.n)
        try:
            f = probit_cf_fit(ds.take(rows), invalid, opts)
        except IVError:
            return None
        return cate(f, d1, d2, w0), f.beta_hat

    children = np.random.SeedSequence(seed).spawn(B)
    workers = resolve_threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            reps = list(pool.map(one, children))
    else:
        reps = [one(c) for c in children]

    ok = np.array([r for r in reps if r is not None])
    failed = B - ok.shape[0]
    if failed > MAX_FAILURE_SHARE * B:
        raise TooManyFailures(f"{failed} of {B} bootstrap replicates failed")
    a = opts.alpha
    lo, hi = np.quantile(ok[:, 0], [a / 2, 1 - a / 2])
    # keep the point estimate inside the reported interval
    lo, hi = max(-1.0, min(float(lo), est)), min(1.0, max(float(hi), est))
    return CateResult(
        estimate=est,
        se=float(ok[:, 0].std(ddof=1)),
        ci=(lo, hi),
        d1=float(d1),
        d2=float(d2),
        w0=tuple(float(v) for v in w0),
        B=B,
        alpha=a,
        beta_hat=fit.beta_hat,
        beta_se=float(ok[:, 1].std(ddof=1)),
        n_failed=failed,
        fit=fit,
    )
