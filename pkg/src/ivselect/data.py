"""Shared data model: datasets, analysis options and effect estimates."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import (
    ConstantColumn,
    DimensionMismatch,
    MissingColumn,
    NonFiniteValue,
    SampleTooSmall,
)

VOTING_RULES = ("MaxClique", "MP")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatment, candidate instruments and covariates for ``n`` units.

    Arrays are read-only. ``x`` may have zero columns. The intercept is never
    stored here; estimators append it to the design themselves.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    x: np.ndarray
    z_names: tuple[str, ...]
    x_names: tuple[str, ...]
    outcome_name: str = "Y"
    treatment_name: str = "D"
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    def design(self) -> np.ndarray:
        """W = (Z, X, 1), the reduced-form design."""
        return np.column_stack([self.z, self.x, np.ones(self.n)])

    def to_table(self) -> dict[str, np.ndarray]:
        table = {self.outcome_name: self.y, self.treatment_name: self.d}
        table.update({name: self.z[:, j] for j, name in enumerate(self.z_names)})
        table.update({name: self.x[:, j] for j, name in enumerate(self.x_names)})
        return table

    def take(self, rows) -> Dataset:
        """Row subset (used by the pairs bootstrap); skips re-validation."""
        return Dataset(
            y=_frozen(self.y[rows]),
            d=_frozen(self.d[rows]),
            z=_frozen(self.z[rows]),
            x=_frozen(self.x[rows]),
            z_names=self.z_names,
            x_names=self.x_names,
            outcome_name=self.outcome_name,
            treatment_name=self.treatment_name,
        )

    def with_outcome(self, y, name: str | None = None) -> Dataset:
        return Dataset(
            y=_frozen(y),
            d=self.d,
            z=self.z,
            x=self.x,
            z_names=self.z_names,
            x_names=self.x_names,
            outcome_name=name or self.outcome_name,
            treatment_name=self.treatment_name,
            n_dropped=self.n_dropped,
        )

    @classmethod
    def from_arrays(cls, y, d, z, x=None, z_names=None, x_names=None, drop_na=False) -> Dataset:
        """Build and validate a dataset from arrays, naming unnamed columns Z1.., X1.."""
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        x = np.empty((z.shape[0], 0)) if x is None else np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        z_names = list(z_names) if z_names is not None else [f"Z{j + 1}" for j in range(z.shape[1])]
        x_names = list(x_names) if x_names is not None else [f"X{j + 1}" for j in range(x.shape[1])]
        if len(z_names) != z.shape[1] or len(x_names) != x.shape[1]:
            raise DimensionMismatch("column names do not match matrix widths")
        table = {"Y": y, "D": d}
        table.update({name: z[:, j] for j, name in enumerate(z_names)})
        table.update({name: x[:, j] for j, name in enumerate(x_names)})
        return validate_dataset(table, "Y", "D", z_names, x_names, drop_na=drop_na)


def validate_dataset(
    raw: Mapping | Dataset,
    outcome: str | None = None,
    treatment: str | None = None,
    instruments: Sequence[str] | None = None,
    covariates: Sequence[str] = (),
    drop_na: bool = True,
) -> Dataset:
    """Select columns from a column-oriented table and check them.

    ``raw`` maps column names to equal-length sequences (a dict, a pandas
    DataFrame, or another :class:`Dataset`, in which case the column spec
    defaults to the dataset's own). Missing values are NaN or None; rows with
    any missing value in a selected column are dropped when ``drop_na`` is set.

    Raises MissingColumn, SampleTooSmall, ConstantColumn, NonFiniteValue or
    DimensionMismatch.
    """
    if isinstance(raw, Dataset):
        outcome = outcome or raw.outcome_name
        treatment = treatment or raw.treatment_name
        instruments = raw.z_names if instruments is None else instruments
        covariates = covariates or raw.x_names
        raw = raw.to_table()
    if outcome is None or treatment is None or not instruments:
        raise MissingColumn("outcome, treatment and at least one instrument are required")
    instruments = list(instruments)
    covariates = list(covariates)
    names = [outcome, treatment, *instruments, *covariates]
    if len(set(names)) != len(names):
        raise DimensionMismatch(f"a column is selected more than once: {names}")

    cols = []
    for name in names:
        try:
            col = raw[name]
        except (KeyError, IndexError):
            raise MissingColumn(f"column {name!r} not found") from None
        col = np.asarray(col, dtype=float)  # None -> nan
        if col.ndim != 1:
            raise DimensionMismatch(f"column {name!r} is not one-dimensional")
        cols.append(col)
    lengths = {c.shape[0] for c in cols}
    if len(lengths) != 1:
        raise DimensionMismatch(f"columns have unequal lengths {sorted(lengths)}")
    mat = np.column_stack(cols)

    missing = np.isnan(mat).any(axis=1)
    n_dropped = 0
    if drop_na and missing.any():
        mat = mat[~missing]
        n_dropped = int(missing.sum())
    if not np.isfinite(mat).all():
        bad = names[int(np.nonzero(~np.isfinite(mat).all(axis=0))[0][0])]
        raise NonFiniteValue(f"column {bad!r} contains non-finite values")

    n = mat.shape[0]
    p_z, p_x = len(instruments), len(covariates)
    if n <= p_z + p_x + 1:
        raise SampleTooSmall(f"n={n} must exceed p_z + p_x + 1 = {p_z + p_x + 1}")
    for j, name in enumerate(names[2:], start=2):
        if np.ptp(mat[:, j]) == 0.0:
            raise ConstantColumn(f"column {name!r} is constant")

    return Dataset(
        y=_frozen(mat[:, 0]),
        d=_frozen(mat[:, 1]),
        z=_frozen(mat[:, 2 : 2 + p_z]),
        x=_frozen(mat[:, 2 + p_z :].reshape(n, p_x)),
        z_names=tuple(instruments),
        x_names=tuple(covariates),
        outcome_name=outcome,
        treatment_name=treatment,
        n_dropped=n_dropped,
    )


@dataclass(frozen=True)
class AnalysisOptions:
    """Tuning shared by the linear-model procedures.

    ``tuning_1st`` and ``tuning_2nd`` default to sqrt(log n), resolved once the
    sample size is known via :meth:`thresholds`.
    """

    alpha: float = 0.05
    tuning_1st: float | None = None
    tuning_2nd: float | None = None
    voting: str = "MaxClique"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for lam in (self.tuning_1st, self.tuning_2nd):
            if lam is not None and not lam > 0:
                raise ValueError(f"tuning parameters must be positive, got {lam}")
        if self.voting not in VOTING_RULES:
            raise ValueError(f"voting must be one of {VOTING_RULES}, got {self.voting!r}")

    def thresholds(self, n: int) -> tuple[float, float]:
        default = math.sqrt(math.log(n))
        return (
            default if self.tuning_1st is None else self.tuning_1st,
            default if self.tuning_2nd is None else self.tuning_2nd,
        )


@dataclass(frozen=True)
class EffectEstimate:
    beta_hat: float
    se: float
    ci: tuple[float, float]
    alpha: float
    method: str
    valid_set: tuple[str, ...] = field(default_factory=tuple)

    @classmethod
    def normal(cls, beta_hat, se, alpha, method, valid_set=()) -> EffectEstimate:
        q = stats.norm.ppf(1 - alpha / 2)
        beta_hat, se = float(beta_hat), float(se)
        ci = (float(beta_hat - q * se), float(beta_hat + q * se))
        return cls(beta_hat, se, ci, alpha, method, tuple(valid_set))
