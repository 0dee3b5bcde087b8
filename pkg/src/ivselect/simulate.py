"""Seeded synthetic designs for linear and probit outcome models.

All draws come from ``numpy.random.Generator(PCG64(seed))`` in a fixed order,
so a seed reproduces the same dataset bit for bit under a given numpy release.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats

from .data import Dataset

D_INTERCEPT = 0.5
Y_INTERCEPT = -0.5


def _vec(v, size):
    v = np.broadcast_to(np.asarray(v, dtype=float), (size,)).copy()
    return v


@dataclass
class LinearSimConfig:
    n: int = 2000
    p_z: int = 10
    p_x: int = 0
    beta: float = 1.0
    gamma: np.ndarray | float = 1.0
    pi: np.ndarray | float = 0.0
    phi: np.ndarray | float = 0.5
    psi: np.ndarray | float = 1.0
    err_corr: float = 0.8
    heteroscedastic: bool = False
    seed: int = 0

    def __post_init__(self):
        if not abs(self.err_corr) < 1:
            raise ValueError("err_corr must lie in (-1, 1)")
        self.gamma = _vec(self.gamma, self.p_z)
        self.pi = _vec(self.pi, self.p_z)
        self.phi = _vec(self.phi, self.p_x)
        self.psi = _vec(self.psi, self.p_x)

    @classmethod
    def majority(cls, n=2000, p_z=10, n_invalid=3, invalid_effect=1.0, **kw) -> LinearSimConfig:
        """First ``n_invalid`` instruments carry a direct effect ``invalid_effect``."""
        pi = np.zeros(p_z)
        pi[:n_invalid] = invalid_effect
        return cls(n=n, p_z=p_z, pi=pi, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("gamma", "pi", "phi", "psi"):
            out[k] = [float(v) for v in out[k]]
        return out


@dataclass
class LinearTruth:
    beta: float
    gamma: list[float]
    pi: list[float]
    valid: list[int]
    relevant: list[int]
    sigma12: float
    config: dict = field(default_factory=dict)


def gen_linear_iv(cfg: LinearSimConfig) -> tuple[Dataset, LinearTruth]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.n
    z = rng.standard_normal((n, cfg.p_z))
    x = rng.standard_normal((n, cfg.p_x))
    cov = np.array([[1.0, cfg.err_corr], [cfg.err_corr, 1.0]])
    err = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    eps, delta = err[:, 0], err[:, 1]
    if cfg.heteroscedastic:
        eps = eps * np.sqrt((1 + z[:, 0] ** 2) / 2)
    d = D_INTERCEPT + z @ cfg.gamma + x @ cfg.psi + delta
    y = Y_INTERCEPT + d * cfg.beta + z @ cfg.pi + x @ cfg.phi + eps
    ds = Dataset.from_arrays(y, d, z, x)
    relevant = [j for j in range(cfg.p_z) if cfg.gamma[j] != 0]
    truth = LinearTruth(
        beta=cfg.beta,
        gamma=[float(v) for v in cfg.gamma],
        pi=[float(v) for v in cfg.pi],
        valid=[j for j in relevant if cfg.pi[j] == 0],
        relevant=relevant,
        sigma12=float(cfg.err_corr),
        config=cfg.to_dict(),
    )
    return ds, truth


@dataclass
class ProbitSimConfig:
    """Binary outcome 1(D beta + W'kappa + u > 0) with D = W'gamma + v.

    (u, v) is bivariate normal with standard deviations ``sigma_u``,
    ``sigma_v`` and correlation ``err_corr``; W = (Z, X, 1).
    """

    n: int = 1000
    p_z: int = 5
    p_x: int = 1
    beta: float = 0.5
    gamma: np.ndarray | float = 0.8
    gamma_x: np.ndarray | float = 0.3
    kappa_z: np.ndarray | float = 0.0
    kappa_x: np.ndarray | float = 0.2
    gamma0: float = 0.5
    kappa0: float = -0.25
    sigma_u: float = 1.0
    sigma_v: float = 1.0
    err_corr: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not abs(self.err_corr) < 1:
            raise ValueError("err_corr must lie in (-1, 1)")
        self.gamma = _vec(self.gamma, self.p_z)
        self.gamma_x = _vec(self.gamma_x, self.p_x)
        self.kappa_z = _vec(self.kappa_z, self.p_z)
        self.kappa_x = _vec(self.kappa_x, self.p_x)

    @property
    def sigma_e(self) -> float:
        return self.sigma_u * np.sqrt(1 - self.err_corr**2)

    @property
    def rho(self) -> float:
        """Slope of u on v."""
        return self.err_corr * self.sigma_u / self.sigma_v

    @property
    def kappa(self) -> np.ndarray:
        return np.concatenate([self.kappa_z, self.kappa_x, [self.kappa0]])

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("gamma", "gamma_x", "kappa_z", "kappa_x"):
            out[k] = [float(v) for v in out[k]]
        return out


@dataclass
class ProbitTruth:
    beta_star: float
    kappa_star: list[float]
    valid: list[int]
    config: dict = field(default_factory=dict)


def gen_probit_iv(cfg: ProbitSimConfig) -> tuple[Dataset, ProbitTruth]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n = cfg.n
    z = rng.standard_normal((n, cfg.p_z))
    x = rng.standard_normal((n, cfg.p_x))
    su, sv, r = cfg.sigma_u, cfg.sigma_v, cfg.err_corr
    cov = np.array([[su**2, r * su * sv], [r * su * sv, sv**2]])
    err = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    u, v = err[:, 0], err[:, 1]
    d = cfg.gamma0 + z @ cfg.gamma + x @ cfg.gamma_x + v
    latent = d * cfg.beta + cfg.kappa0 + z @ cfg.kappa_z + x @ cfg.kappa_x + u
    y = (latent > 0).astype(float)
    ds = Dataset.from_arrays(y, d, z, x)
    truth = ProbitTruth(
        beta_star=cfg.beta / cfg.sigma_e,
        kappa_star=[float(k) for k in cfg.kappa / cfg.sigma_e],
        valid=[j for j in range(cfg.p_z) if cfg.kappa_z[j] == 0],
        config=cfg.to_dict(),
    )
    return ds, truth


def true_cate(cfg: ProbitSimConfig, d1: float, d2: float, w0, nodes: int = 64) -> float:
    """Partial-mean CATE, integrating the control-function error over its normal law.

    ``w0`` is (Z, X) without the intercept. Uses Gauss-Hermite quadrature of
    E_v[Phi((d beta + w'kappa + rho v) / sigma_e)] with v ~ N(0, sigma_v^2).
    """
    w = np.append(np.asarray(w0, dtype=float), 1.0)
    t, wt = hermegauss(nodes)
    wt = wt / wt.sum()
    v = cfg.sigma_v * t

    def mean_response(d):
        return float(wt @ stats.norm.cdf((d * cfg.beta + w @ cfg.kappa + cfg.rho * v) / cfg.sigma_e))

    return mean_response(d1) - mean_response(d2)
