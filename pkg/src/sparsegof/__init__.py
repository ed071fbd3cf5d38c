"""Goodness-of-fit testing with divisible statistics for sparse binned Poisson counts."""

from .measure import (
    BinnedCounts,
    Grid,
    LinearKernel,
    MeasureContext,
    NumericError,
    StatisticKernel,
    c_function,
    evaluate_statistic,
    expect,
    inner_product,
    norm2,
)
from .models import AltSpec, MeanModel, alt_means, make_direction, parse_model, project_hhat, sample_counts
from .statistics import decompose, is_c_homogeneous, make_kernel, parse_kernel
from .estimation import EstimatorSpec, FitResult, fit_batch, orthonormal_score, score_kernel, solve
from .projection import Projector, build_projector, gaussian_test, no_power_check, shift
from .gofprocess import BootstrapPlan, ScanningFamily, bootstrap_pvalue, ks_statistic, partial_sums
from .dfree import RBasis, UnitaryChain, build_chain, dfree_test, kolmogorov_cdf, limit_cdf

__version__ = "0.1.0"
