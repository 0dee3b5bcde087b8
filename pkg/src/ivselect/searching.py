"""Searching and sampling confidence intervals (majority rule).

Both intervals stay valid when the valid instruments are not perfectly
separated from the invalid ones in finite samples.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import EmptySearchSet
from .regression import ReducedForm

DEFAULT_POINTS = 4001
MIN_POINTS = 101
LAMBDA_SCALE = 0.5  # constant in front of the (log n / M)^(1/(2|S|)) rate


@dataclass(frozen=True)
class Grid:
    lo: float
    hi: float
    n_points: int = DEFAULT_POINTS

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("grid needs lo < hi")
        if self.n_points < MIN_POINTS:
            raise ValueError(f"grid needs at least {MIN_POINTS} points")

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_points)


@dataclass(frozen=True)
class IntervalResult:
    lower: float
    upper: float
    method: str  # "Searching" or "Sampling"
    grid: Grid
    accepted: np.ndarray  # grid mask (searching) or union of per-draw masks (sampling)
    M: int | None = None
    lam: float | None = None
    nonempty_count: int | None = None
    fallback: bool = False

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, beta: float) -> bool:
        return self.lower <= beta <= self.upper


def _rho(rf: ReducedForm, S, betas, alpha):
    """Bonferroni threshold rho_j(beta, alpha) on a (grid, |S|) array."""
    vG = np.diag(rf.V_Gamma)[S]
    vg = np.diag(rf.V_gamma)[S]
    c = np.diag(rf.C)[S]
    b = np.asarray(betas, dtype=float)[:, None]
    var = (vG - 2 * b * c + b**2 * vg) / rf.n
    q = stats.norm.ppf(1 - alpha / (2 * len(S)))
    return q * np.sqrt(np.maximum(var, 0.0))


def pi_threshold(rf: ReducedForm, S_hat, beta: float, alpha: float, lam: float = 1.0) -> np.ndarray:
    """Hard-thresholded direct-effect estimates pi_S(beta) for the instruments in S_hat."""
    if not lam > 0:
        raise ValueError("lam must be positive")
    S = np.asarray(S_hat, dtype=int)
    diff = rf.Gamma_hat[S] - beta * rf.gamma_hat[S]
    rho = _rho(rf, S, [beta], alpha)[0]
    return np.where(np.abs(diff) >= lam * rho, diff, 0.0)


def _accept(Gam, gam, betas, thr, s_size):
    """Grid mask where fewer than half of the instruments look invalid.

    ``Gam``/``gam`` are (..., |S|); returns (..., grid).
    """
    diff = Gam[..., None, :] - betas[:, None] * gam[..., None, :]
    invalid = (np.abs(diff) >= thr) & (diff != 0)
    return invalid.sum(axis=-1) < s_size / 2


def default_grid(rf: ReducedForm, S_hat, n_points: int = DEFAULT_POINTS) -> Grid:
    """Per-IV ratio estimates padded by five times the largest ratio SE."""
    S = np.asarray(S_hat, dtype=int)
    G, g = rf.Gamma_hat[S], rf.gamma_hat[S]
    ratios = G / g
    var = (
        np.diag(rf.V_Gamma)[S] - 2 * ratios * np.diag(rf.C)[S] + ratios**2 * np.diag(rf.V_gamma)[S]
    ) / (rf.n * g**2)
    pad = 5 * float(np.sqrt(np.maximum(var, 0.0)).max())
    lo, hi = float(ratios.min()) - pad, float(ratios.max()) + pad
    if not lo < hi:
        lo, hi = lo - 1.0, hi + 1.0
    return Grid(lo, hi, n_points)


def _hull(betas, mask):
    idx = np.nonzero(mask)[0]
    return float(betas[idx[0]]), float(betas[idx[-1]])


def searching_ci(rf: ReducedForm, S_hat, alpha: float = 0.05, grid: Grid | None = None) -> IntervalResult:
    """Hull of the grid points at which a strict majority of S_hat passes the threshold test.

    Raises EmptySearchSet (carrying the grid) when no grid point is accepted.
    """
    S = np.asarray(S_hat, dtype=int)
    if S.size == 0:
        raise ValueError("S_hat must be nonempty")
    grid = grid or default_grid(rf, S)
    betas = grid.points()
    thr = _rho(rf, S, betas, alpha)
    mask = _accept(rf.Gamma_hat[S], rf.gamma_hat[S], betas, thr, S.size)
    if not mask.any():
        raise EmptySearchSet(
            f"no grid point in [{grid.lo:.4g}, {grid.hi:.4g}] ({grid.n_points} points) "
            "is supported by a majority of instruments",
            grid=grid,
        )
    lo, hi = _hull(betas, mask)
    return IntervalResult(lo, hi, "Searching", grid, mask)


def default_lambda(n: int, M: int, s_size: int) -> float:
    return LAMBDA_SCALE * (math.log(n) / M) ** (1 / (2 * s_size))


def sampling_ci(
    rf: ReducedForm,
    S_hat,
    alpha: float = 0.05,
    M: int = 1000,
    lam: float | None = None,
    seed: int = 0,
    grid: Grid | None = None,
    cov_scale: float = 1.0,
    chunk: int = 64,
) -> IntervalResult:
    """Sampling CI: union hull of searching intervals over perturbed reduced forms.

    Draws ``M`` joint normal copies of (Gamma_hat, gamma_hat) with covariance
    ``cov_scale/n`` times the clipped joint covariance (``cov_scale=0`` turns
    sampling off, for testing). Thresholds use the original covariance,
    shrunk by ``lam`` (default ``0.5 (log n / M)^(1/(2|S|))``). When every draw
    yields an empty set the searching interval is returned with
    ``fallback=True`` and a warning.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    S = np.asarray(S_hat, dtype=int)
    s = S.size
    grid = grid or default_grid(rf, S)
    lam = default_lambda(rf.n, M, s) if lam is None else float(lam)
    if not lam > 0:
        raise ValueError("lam must be positive")
    betas = grid.points()
    thr = lam * _rho(rf, S, betas, alpha)

    p = rf.p_z
    sel = np.concatenate([S, S + p])
    cov = rf.joint_cov()[np.ix_(sel, sel)] * (cov_scale / rf.n)
    chol = np.linalg.cholesky(cov) if cov_scale > 0 else np.zeros_like(cov)
    center = np.concatenate([rf.Gamma_hat[S], rf.gamma_hat[S]])
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = center + rng.standard_normal((M, 2 * s)) @ chol.T

    lower, upper = math.inf, -math.inf
    nonempty = 0
    union = np.zeros(betas.shape, dtype=bool)
    for start in range(0, M, chunk):
        block = draws[start : start + chunk]
        masks = _accept(block[:, :s], block[:, s:], betas, thr, s)
        hit = masks.any(axis=1)
        if not hit.any():
            continue
        nonempty += int(hit.sum())
        masks = masks[hit]
        first = masks.argmax(axis=1)
        last = betas.size - 1 - masks[:, ::-1].argmax(axis=1)
        lower = min(lower, float(betas[first.min()]))
        upper = max(upper, float(betas[last.max()]))
        union |= masks.any(axis=0)

    if nonempty == 0:
        warnings.warn("every sampled searching set was empty; falling back to the searching CI")
        res = searching_ci(rf, S, alpha, grid)
        return IntervalResult(res.lower, res.upper, "Sampling", grid, res.accepted, M, lam, 0, True)
    return IntervalResult(lower, upper, "Sampling", grid, union, M, lam, nonempty)
