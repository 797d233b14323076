"""Confidence intervals and symmetry tests from the coefficient CLT.

The CLT covariance is approximated by the plug-in sandwich built from
the unnormalised design matrices and the residual variance/covariance
estimates; the sample-size factors cancel between the CLT scaling and
the unnormalised matrices, so the sandwich diagonal is already the
coefficient variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import NumericalError, ValidationError
from .estimation import ThetaEstimate
from .limits import LimitMatrices

_CONTRASTS = {
    "pair": np.array([[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, -1.0]]),
    "intercept": np.array([[1.0, 0.0, -1.0, 0.0]]),
    "slope": np.array([[0.0, 1.0, 0.0, -1.0]]),
}

_COEFF_NAMES = ("a", "b", "c", "d")


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    low: float
    high: float
    level: float

    def __post_init__(self):
        if not self.low <= self.point <= self.high:
            raise ValidationError("confidence interval must bracket its point")

    @property
    def width(self) -> float:
        return self.high - self.low

    def covers(self, value: float) -> bool:
        return self.low <= value <= self.high


@dataclass(frozen=True)
class WaldTest:
    name: str
    statistic: float
    df: int
    p_value: float


def _check_level(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValidationError(f"confidence level must be in (0, 1), got {level}")
    return level


def plug_in_covariance(est: ThetaEstimate) -> tuple[np.ndarray, bool]:
    """Sandwich covariance of the coefficient estimate.

    Returns the 4x4 matrix and a flag saying whether an absent
    sister-covariance estimate was replaced by zero.
    """
    rho_missing = est.rho_hat is None
    rho = 0.0 if rho_missing else est.rho_hat
    sigma = est.design.sigma()
    gamma = est.design.gamma(est.sigma2_hat, rho)
    inv = np.linalg.inv(sigma)
    cov = inv @ gamma @ inv
    return 0.5 * (cov + cov.T), rho_missing


def theta_cis(est: ThetaEstimate, level: float = 0.95):
    """Per-coefficient normal confidence intervals.

    Returns ``(intervals, warnings)`` where ``intervals`` maps the
    coefficient names ``a, b, c, d`` to intervals.
    """
    _check_level(level)
    cov, rho_missing = plug_in_covariance(est)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    out: dict[str, ConfidenceInterval] = {}
    for j, name in enumerate(_COEFF_NAMES):
        var = max(float(cov[j, j]), 0.0)
        half = z * math.sqrt(var)
        point = float(est.theta_hat[j])
        out[name] = ConfidenceInterval(point, point - half, point + half, level)
    warnings = []
    if rho_missing:
        warnings.append(
            "sister covariance not estimable (no observed pairs); plug-in used rho = 0"
        )
    return out, warnings


def wald_test(est: ThetaEstimate, which: str) -> WaldTest:
    """Symmetry test of the null ``R theta = 0`` for the chosen contrast.

    ``which`` is ``"pair"`` (both coefficients equal across daughter
    types), ``"intercept"`` or ``"slope"``.  A contrast whose estimate
    is exactly zero is reported as statistic 0 with p-value 1 even when
    the restricted covariance is singular.
    """
    if which not in _CONTRASTS:
        raise ValidationError(f"unknown contrast {which!r}; pick from {sorted(_CONTRASTS)}")
    r = _CONTRASTS[which]
    df = r.shape[0]
    gap = r @ est.theta_hat
    if not gap.any():
        return WaldTest(which, 0.0, df, 1.0)
    cov, _ = plug_in_covariance(est)
    restricted = r @ cov @ r.T
    try:
        solved = np.linalg.solve(restricted, gap)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"degenerate restricted covariance in {which} test") from exc
    statistic = float(gap @ solved)
    if statistic < 0.0 or not math.isfinite(statistic):
        raise NumericalError(f"degenerate restricted covariance in {which} test")
    return WaldTest(which, statistic, df, float(stats.chi2.sf(statistic, df)))


def all_wald_tests(est: ThetaEstimate) -> dict[str, WaldTest]:
    return {name: wald_test(est, name) for name in ("pair", "intercept", "slope")}


def sigma_rho_cis(
    est: ThetaEstimate,
    level: float = 0.95,
    limits: LimitMatrices | None = None,
):
    """Confidence intervals for the noise variance and sister covariance.

    In plug-in mode (the default) the CLT variances are built from the
    residual fourth moments, the ratio growth-rate estimate and the
    observed pair fraction; passing ``limits`` switches to the
    theoretical variance constants evaluated at the model parameters.
    Negative plug-in variances are clipped to zero with a warning.

    Returns ``(sigma2_ci, rho_ci, warnings)``; ``rho_ci`` is ``None``
    when no pair was observed.
    """
    _check_level(level)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    warnings: list[str] = []

    if limits is not None:
        var_sigma = limits.sigma2_clt_var
        var_rho = limits.rho_clt_var
    else:
        s4 = est.sigma2_hat**2
        pi = est.pi_hat
        var_sigma = (pi * (est.tau4_hat - s4) + 2.0 * est.pbar_hat * ((est.nu2_tau4_hat or 0.0) - s4)) / pi
        var_rho = None
        if est.rho_hat is not None:
            var_rho = (est.nu2_tau4_hat or 0.0) - est.rho_hat**2

    if var_sigma < 0.0:
        warnings.append("negative plug-in variance for sigma2 clipped to 0")
        var_sigma = 0.0
    half = z * math.sqrt(var_sigma / est.t_star)
    sigma_ci = ConfidenceInterval(est.sigma2_hat, est.sigma2_hat - half, est.sigma2_hat + half, level)

    rho_ci = None
    if est.rho_hat is not None:
        if var_rho is None:
            var_rho = 0.0
        if var_rho < 0.0:
            warnings.append("negative plug-in variance for rho clipped to 0")
            var_rho = 0.0
        half = z * math.sqrt(var_rho / est.pair_parents)
        rho_ci = ConfidenceInterval(est.rho_hat, est.rho_hat - half, est.rho_hat + half, level)
    else:
        warnings.append("sister covariance not estimable (no observed pairs)")
    return sigma_ci, rho_ci, warnings
