"""Causal effect estimation with possibly invalid instrumental variables."""

__version__ = "0.1.0"

from .control_function import BasisSpec, causal_effect, cf_fit, hausman_pretest, tsls_fit
from .data import AnalysisOptions, Dataset, EffectEstimate, validate_dataset
from .endogeneity import endo_test
from .probit_cf import cate, cate_ci, probit_cf_fit, probit_select
from .regression import ols_fit, probit_fit, reduced_form_fit
from .searching import Grid, sampling_ci, searching_ci
from .simulate import LinearSimConfig, ProbitSimConfig, gen_linear_iv, gen_probit_iv, true_cate
from .tsht import tsht

__all__ = [
    "AnalysisOptions",
    "BasisSpec",
    "Dataset",
    "EffectEstimate",
    "Grid",
    "LinearSimConfig",
    "ProbitSimConfig",
    "cate",
    "cate_ci",
    "causal_effect",
    "cf_fit",
    "endo_test",
    "gen_linear_iv",
    "gen_probit_iv",
    "hausman_pretest",
    "ols_fit",
    "probit_cf_fit",
    "probit_fit",
    "probit_select",
    "reduced_form_fit",
    "sampling_ci",
    "searching_ci",
    "true_cate",
    "tsht",
    "tsls_fit",
    "validate_dataset",
]
