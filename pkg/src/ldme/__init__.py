"""List-decodable mean estimation via soft filtering and Ky Fan matrix multiplicative weights."""

from .core_stats import CovOperator, Dataset, Truth, WeightVector, weighted_cov, weighted_mean
from .datagen import InstanceSpec, check_assumption, eval_list, gen_instance
from .errors import LdmeError
from .estimates import Candidate, Decomposition, EstimateList
from .sift import SiftConfig, run_sift

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CovOperator",
    "Dataset",
    "Decomposition",
    "EstimateList",
    "InstanceSpec",
    "LdmeError",
    "SiftConfig",
    "Truth",
    "WeightVector",
    "check_assumption",
    "eval_list",
    "gen_instance",
    "run_sift",
    "weighted_cov",
    "weighted_mean",
]
