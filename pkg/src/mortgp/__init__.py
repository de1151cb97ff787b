"""Joint mortality-surface modeling across populations with multi-output GPs."""

__version__ = "0.1.0"

from .datastore import (
    FactorSchema,
    MortalityCell,
    StackedDataset,
    parse_csv,
    write_csv,
)
from .kernels import (
    ICMKernel,
    KernelSpec,
    MaternParams,
    MultiLevelICMKernel,
    NoiseParams,
    SLFMKernel,
    SOGPKernel,
    assemble_covariance,
    cross_correlation,
    kernel_param_count,
    matern52,
)
from .gp_core import (
    FittedModel,
    PredictiveDistribution,
    TrendBasis,
    build_model,
    log_marginal_likelihood,
    predict,
    sample_joint,
)
from .inference import (
    FitReport,
    OptimizerConfig,
    ParameterLayout,
    bic,
    numerical_gradient,
    optimize,
    select_rank,
)
from .analytics import (
    AggregateForecast,
    BacktestModelConfig,
    MetricReport,
    adjust_trend,
    aggregate_forecast,
    ape,
    backtest,
    crps_gaussian,
    model_improvement,
    observed_improvement,
    population_groups,
)
from .artifacts import load_model, save_model

__all__ = [
    "FactorSchema",
    "MortalityCell",
    "StackedDataset",
    "parse_csv",
    "write_csv",
    "ICMKernel",
    "KernelSpec",
    "MaternParams",
    "MultiLevelICMKernel",
    "NoiseParams",
    "SLFMKernel",
    "SOGPKernel",
    "assemble_covariance",
    "cross_correlation",
    "kernel_param_count",
    "matern52",
    "FittedModel",
    "PredictiveDistribution",
    "TrendBasis",
    "build_model",
    "log_marginal_likelihood",
    "predict",
    "sample_joint",
    "FitReport",
    "OptimizerConfig",
    "ParameterLayout",
    "bic",
    "numerical_gradient",
    "optimize",
    "select_rank",
    "AggregateForecast",
    "BacktestModelConfig",
    "MetricReport",
    "adjust_trend",
    "aggregate_forecast",
    "ape",
    "backtest",
    "crps_gaussian",
    "model_improvement",
    "observed_improvement",
    "population_groups",
    "load_model",
    "save_model",
]
