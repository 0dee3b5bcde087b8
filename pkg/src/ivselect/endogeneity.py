"""Endogeneity test (H0: sigma12 = 0) that tolerates invalid instruments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .data import AnalysisOptions, Dataset
from .regression import ReducedForm, reduced_form_fit
from .tsht import select_instruments, select_relevant


@dataclass(frozen=True)
class EndoTestResult:
    sigma12_hat: float
    se: float
    z_stat: float
    p_value: float
    rejected: bool
    alpha: float
    valid_set: tuple[str, ...]
    invalid: tuple[str, ...]
    beta_hat: float
    Theta11: float
    Theta22: float
    Theta12: float
    se_method: str


def _ratio_beta(rf: ReducedForm, V) -> float:
    g, G = rf.gamma_hat[V], rf.Gamma_hat[V]
    return float(g @ G / (g @ g))


def _sigma12(rf: ReducedForm, V) -> tuple[float, float, float, float, float]:
    beta = _ratio_beta(rf, V)
    xi, delta = rf.xi_hat, rf.delta_hat
    t11 = float(np.mean(xi**2))
    t22 = float(np.mean(delta**2))
    t12 = float(np.mean(xi * delta))
    return t12 - beta * t22, beta, t11, t22, t12


def _influence_se(ds: Dataset, rf: ReducedForm, V, beta: float, sigma12: float, t22: float) -> float:
    xi, delta = rf.xi_hat, rf.delta_hat
    psi = xi * delta - beta * delta**2 - sigma12
    # first-order effect of estimating beta: beta_hat - beta = g'(Gamma_hat - beta gamma_hat)/g'g,
    # and Gamma_hat - beta gamma_hat are Z-coefficients of a regression with residual xi - beta delta
    g = rf.gamma_hat[V]
    lev = np.linalg.solve(rf.Sigma_W, ds.design().T)[V]  # rows of Sigma^{-1} W_i for j in V
    psi_beta = (g @ lev) * (xi - beta * delta) / (g @ g)
    psi = psi - t22 * psi_beta
    return float(np.sqrt(np.mean(psi**2) / ds.n))


def endo_test(
    ds: Dataset,
    invalid: bool = True,
    opts: AnalysisOptions | None = None,
    bootstrap: bool = False,
    B: int = 500,
) -> EndoTestResult:
    """Test for zero covariance between the structural and first-stage errors.

    With ``invalid`` the valid set comes from the TSHT voting rule in ``opts``
    (first valid set when several maximum cliques tie); otherwise every
    relevant instrument is treated as valid. The SE is the plug-in influence
    estimate, including the first-order contribution of the ratio estimate
    of beta, or a pairs bootstrap with the valid set held fixed.
    """
    opts = opts or AnalysisOptions()
    rf = reduced_form_fit(ds)
    lam1, lam2 = opts.thresholds(ds.n)
    if invalid:
        sel = select_instruments(rf, lam1, lam2, opts.voting)
        S, V = sel.S_hat, sel.V_hats[0]
    else:
        S = V = select_relevant(rf, lam1)
    V = list(V)
    sigma12, beta, t11, t22, t12 = _sigma12(rf, V)

    if bootstrap:
        children = np.random.SeedSequence(opts.seed).spawn(B)
        reps = np.empty(B)
        for b, child in enumerate(children):
            rows = np.random.Generator(np.random.PCG64(child)).integers(0, ds.n, ds.n)
            reps[b] = _sigma12(reduced_form_fit(ds.take(rows)), V)[0]
        se = float(reps.std(ddof=1))
        method = "bootstrap"
    else:
        se = _influence_se(ds, rf, V, beta, sigma12, t22)
        method = "influence"

    z = sigma12 / se if se > 0 else np.inf * np.sign(sigma12) if sigma12 else 0.0
    p = float(2 * stats.norm.sf(abs(z)))
    names = ds.z_names
    return EndoTestResult(
        sigma12_hat=sigma12,
        se=se,
        z_stat=float(z),
        p_value=p,
        rejected=p < opts.alpha,
        alpha=opts.alpha,
        valid_set=tuple(names[j] for j in V),
        invalid=tuple(names[j] for j in S if j not in V),
        beta_hat=beta,
        Theta11=t11,
        Theta22=t22,
        Theta12=t12,
        se_method=method,
    )
