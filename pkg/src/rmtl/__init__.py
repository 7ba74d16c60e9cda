"""Restricted mean time lost (RMTL) inference for competing risks in factorial designs."""

from .contrasts import ContrastSpec, builtin, dunnett, expand, factorial_2x2, tukey, validate
from .estimators import (
    GroupFit,
    GroupSample,
    RiskTable,
    RmtlSummary,
    aalen_johansen,
    build_risk_table,
    fit_all,
    fit_group,
    group_covariance,
    kaplan_meier,
    nelson_aalen,
    rmtl,
)
from .exceptions import (
    ContrastError,
    DegenerateTestError,
    DomainError,
    InputError,
    NotPSDError,
    NumericalError,
    RmtlError,
)
from .inference import (
    GlobalTestResult,
    MultipleTestResult,
    asymptotic_global_test,
    bonferroni_multiple,
    local_level,
    multiple_asymptotic_test,
    permutation_ci,
    permutation_global_test,
    wald_statistic,
)
from .numerics import RngStream, StepFunction

__version__ = "0.1.0"
