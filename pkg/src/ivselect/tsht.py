"""Two-stage hard thresholding: relevant-IV screening, validity voting and estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cliques import VoteGraph, max_cliques
from .data import AnalysisOptions, Dataset, EffectEstimate
from .errors import DivisionGuard, NoRelevantIV, SingularWeight
from .regression import ReducedForm, reduced_form_fit


@dataclass(frozen=True)
class SelectionResult:
    """Indices refer to instrument columns; ``Pi_*`` and ``VM`` are ordered like ``S_hat``."""

    S_hat: tuple[int, ...]
    Pi_tilde: np.ndarray
    Pi_hat: np.ndarray
    VM: np.ndarray
    V_hats: tuple[tuple[int, ...], ...]
    majority_ok: bool


def select_relevant(rf: ReducedForm, lambda1: float) -> tuple[int, ...]:
    """Instruments whose first-stage coefficient passes the studentized threshold."""
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    se = np.sqrt(np.diag(rf.V_gamma) / rf.n)
    keep = np.nonzero(np.abs(rf.gamma_hat) >= lambda1 * se)[0]
    if keep.size == 0:
        raise NoRelevantIV("no instrument passed the first-stage threshold")
    return tuple(int(j) for j in keep)


def pi_hat_se(rf: ReducedForm, S_hat) -> tuple[np.ndarray, np.ndarray]:
    """pi^[j]_k = Gamma_k - (Gamma_j/gamma_j) gamma_k and delta-method SEs, for j, k in S_hat.

    Row j holds the estimates computed under the hypothesis that IV j is valid.
    """
    S = np.asarray(S_hat, dtype=int)
    G, g = rf.Gamma_hat[S], rf.gamma_hat[S]
    if np.any(np.abs(g) < 1e-12):
        raise DivisionGuard("a selected instrument has a vanishing first-stage coefficient")
    p = rf.p_z
    omega = rf.joint_cov() / rf.n
    iG, ig = S, S + p  # positions of Gamma_k and gamma_k in the joint vector
    b = G / g  # beta^[j]
    pi = G[None, :] - b[:, None] * g[None, :]

    m = S.size
    kk, jj = np.meshgrid(np.arange(m), np.arange(m))  # row j, column k
    # joint-vector positions of (Gamma_k, gamma_k, Gamma_j, gamma_j)
    pos = np.stack([iG[kk], ig[kk], iG[jj], ig[jj]], axis=-1)
    sub = omega[pos[..., :, None], pos[..., None, :]]
    grad = np.stack(
        [np.ones_like(pi), -b[jj], -g[kk] / g[jj], b[jj] * g[kk] / g[jj]],
        axis=-1,
    )
    var = np.einsum("jka,jkab,jkb->jk", grad, sub, grad)
    return pi, np.sqrt(np.maximum(var, 0.0))


def vote_matrix(rf: ReducedForm, S_hat, lambda2: float) -> tuple[np.ndarray, np.ndarray]:
    """Raw and symmetrized (elementwise min) voting matrices over S_hat."""
    if not lambda2 > 0:
        raise ValueError("lambda2 must be positive")
    pi, se = pi_hat_se(rf, S_hat)
    pi_tilde = np.abs(pi) <= lambda2 * se
    np.fill_diagonal(pi_tilde, True)
    return pi_tilde, pi_tilde & pi_tilde.T


def vote_counts(Pi_hat) -> np.ndarray:
    return np.asarray(Pi_hat, dtype=int).sum(axis=0)


def select_valid_mp(Pi_hat) -> tuple[int, ...]:
    """Majority-and-plurality rule; positions refer to rows of ``Pi_hat``."""
    vm = vote_counts(Pi_hat)
    m = vm.shape[0]
    keep = (vm > m / 2) | (vm == vm.max())
    return tuple(int(k) for k in np.nonzero(keep)[0])


def select_valid_mc(Pi_hat, labels=None) -> list[tuple[int, ...]]:
    return max_cliques(VoteGraph.from_matrix(Pi_hat, labels))


def tsht_estimate(rf: ReducedForm, V_hat, alpha: float = 0.05, names=None) -> EffectEstimate:
    """One-step efficient estimate and normal CI from the instruments in ``V_hat``.

    ``V_hat`` holds instrument column indices. The initial weight is the
    residual second-moment matrix of the V_hat columns of W after partialling
    out every other column of W (remaining instruments, covariates, intercept).
    """
    V = np.asarray(sorted(V_hat), dtype=int)
    if V.size == 0:
        raise ValueError("V_hat must be nonempty")
    n = rf.n
    sig = rf.Sigma_W
    rest = np.setdiff1d(np.arange(sig.shape[0]), V)
    a_tilde = sig[np.ix_(V, V)] - sig[np.ix_(V, rest)] @ np.linalg.solve(
        sig[np.ix_(rest, rest)], sig[np.ix_(rest, V)]
    )
    G, g = rf.Gamma_hat[V], rf.gamma_hat[V]
    b_init = (g @ a_tilde @ G) / (g @ a_tilde @ g)

    def middle(b):
        return (rf.V_Gamma - 2 * b * rf.C + b**2 * rf.V_gamma)[np.ix_(V, V)]

    try:
        a_hat = np.linalg.inv(middle(b_init))
    except np.linalg.LinAlgError:
        raise SingularWeight("weight matrix for the one-step estimator is singular") from None
    if not np.isfinite(a_hat).all():
        raise SingularWeight("weight matrix for the one-step estimator is singular")
    denom = g @ a_hat @ g
    beta = (g @ a_hat @ G) / denom
    var = (g @ a_hat @ middle(beta) @ a_hat @ g) / (n * denom**2)
    labels = [names[j] for j in V] if names is not None else [f"Z{j + 1}" for j in V]
    return EffectEstimate.normal(beta, np.sqrt(max(var, 0.0)), alpha, "TSHT", labels)


@dataclass(frozen=True)
class TshtReport:
    selection: SelectionResult
    estimates: tuple[EffectEstimate, ...]
    z_names: tuple[str, ...]
    voting: str
    lambda1: float
    lambda2: float

    def names(self, idx) -> list[str]:
        return [self.z_names[j] for j in idx]

    @property
    def relevant(self) -> list[str]:
        return self.names(self.selection.S_hat)

    @property
    def invalid(self) -> list[list[str]]:
        """Detected invalid IVs (S_hat minus V_hat), one list per valid set."""
        S = self.selection.S_hat
        return [self.names([j for j in S if j not in set(V)]) for V in self.selection.V_hats]

    @property
    def weak(self) -> list[str]:
        return [nm for j, nm in enumerate(self.z_names) if j not in self.selection.S_hat]


def select_instruments(rf: ReducedForm, lambda1: float, lambda2: float, voting: str) -> SelectionResult:
    S = select_relevant(rf, lambda1)
    pi_tilde, pi_hat = vote_matrix(rf, S, lambda2)
    if voting == "MP":
        picks = [select_valid_mp(pi_hat)]
    else:
        picks = select_valid_mc(pi_hat)
    V_hats = tuple(tuple(S[k] for k in pick) for pick in picks)
    return SelectionResult(
        S_hat=S,
        Pi_tilde=pi_tilde,
        Pi_hat=pi_hat,
        VM=vote_counts(pi_hat),
        V_hats=V_hats,
        majority_ok=len(V_hats[0]) > len(S) / 2,
    )


def tsht(ds: Dataset, opts: AnalysisOptions | None = None, rf: ReducedForm | None = None) -> TshtReport:
    """Full pipeline: reduced form, screening, voting, one estimate per valid set."""
    opts = opts or AnalysisOptions()
    rf = rf if rf is not None else reduced_form_fit(ds)
    lam1, lam2 = opts.thresholds(ds.n)
    sel = select_instruments(rf, lam1, lam2, opts.voting)
    estimates = tuple(tsht_estimate(rf, V, opts.alpha, ds.z_names) for V in sel.V_hats)
    return TshtReport(sel, estimates, ds.z_names, opts.voting, lam1, lam2)
