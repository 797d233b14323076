"""Closed-form limits of the normalised design and score matrices.

Every quantity the limit theorems mention is computable from the model
parameters: the per-type limits of the observed value sums solve small
linear systems driven by the mean matrix, and these assemble into the
limiting design matrices, the sandwich covariance of the coefficient
CLT, the variance constants of the noise-estimator CLTs and the
quadratic-strong-law constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bar import BarParams, NoiseParams, noise_moments
from .errors import DegenerateModelError, NumericalError, ValidationError
from .gw import GWSpectral

_DET_TOL = 1e-12


def _require_supercritical(spectrum: GWSpectral) -> None:
    if not spectrum.supercritical:
        raise ValidationError(
            f"limits require a supercritical observation process, growth rate {spectrum.growth_rate}"
        )


def _solve2_checked(m: np.ndarray, v: np.ndarray, what: str) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if abs(det) <= _DET_TOL:
        raise NumericalError(f"singular system while computing {what}")
    return np.array(
        [
            (m[1, 1] * v[0] - m[0, 1] * v[1]) / det,
            (m[0, 0] * v[1] - m[1, 0] * v[0]) / det,
        ]
    )


def first_moment_limits(bar: BarParams, spectrum: GWSpectral) -> np.ndarray:
    """Per-type limits of the normalised observed-value sums."""
    _require_supercritical(spectrum)
    pi = spectrum.growth_rate
    pt = spectrum.mean_matrix.T
    z = spectrum.left_eigenvector
    shrink = pt @ np.diag([bar.b, bar.d]) / pi
    rhs = pt @ np.array([bar.a * z[0], bar.c * z[1]])
    return _solve2_checked(np.eye(2) - shrink, rhs, "first-moment limits")


def second_moment_limits(
    bar: BarParams, noise: NoiseParams, spectrum: GWSpectral, h: np.ndarray
) -> np.ndarray:
    """Per-type limits of the normalised squared observed-value sums."""
    _require_supercritical(spectrum)
    pi = spectrum.growth_rate
    pt = spectrum.mean_matrix.T
    z = spectrum.left_eigenvector
    s2 = noise.sigma2
    shrink = pt @ np.diag([bar.b**2, bar.d**2]) / pi
    rhs = pt @ np.array(
        [
            (bar.a**2 + s2) * z[0] + 2.0 * bar.a * bar.b * h[0] / pi,
            (bar.c**2 + s2) * z[1] + 2.0 * bar.c * bar.d * h[1] / pi,
        ]
    )
    return _solve2_checked(np.eye(2) - shrink, rhs, "second-moment limits")


def pair_limits(
    bar: BarParams,
    noise: NoiseParams,
    spectrum: GWSpectral,
    h: np.ndarray,
    k: np.ndarray,
) -> tuple[float, float, float]:
    """Limits of the both-daughters sums: count, value and squared-value."""
    pi = spectrum.growth_rate
    z = spectrum.left_eigenvector
    p0 = spectrum.law.both_children_probability(0)
    p1 = spectrum.law.both_children_probability(1)
    pbar = p0 * z[0] + p1 * z[1]
    h01 = p0 * (bar.a * z[0] + bar.b * h[0] / pi) + p1 * (bar.c * z[1] + bar.d * h[1] / pi)
    k01 = (
        p0 * (bar.a**2 * z[0] + bar.b**2 * k[0] / pi + 2.0 * bar.a * bar.b * h[0] / pi)
        + p1 * (bar.c**2 * z[1] + bar.d**2 * k[1] / pi + 2.0 * bar.c * bar.d * h[1] / pi)
        + noise.sigma2 * pbar
    )
    return float(pbar), float(h01), float(k01)


def design_limits(
    bar: BarParams, noise: NoiseParams, spectrum: GWSpectral
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three limiting 2x2 design matrices (even, odd, both-daughters).

    No positive-definiteness gate: degenerate (singular but PSD) limits
    are legitimate for zero-noise fixtures.
    """
    h = first_moment_limits(bar, spectrum)
    k = second_moment_limits(bar, noise, spectrum, h)
    pbar, h01, k01 = pair_limits(bar, noise, spectrum, h, k)
    pi, z = spectrum.growth_rate, spectrum.left_eigenvector
    l0 = np.array([[pi * z[0], h[0]], [h[0], k[0]]])
    l1 = np.array([[pi * z[1], h[1]], [h[1], k[1]]])
    l01 = np.array([[pbar, h01], [h01, k01]])
    return l0, l1, l01


def _assert_pd(m: np.ndarray, name: str) -> None:
    scale = 1.0 + m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    if m[0, 0] <= _DET_TOL * scale or m[1, 1] <= _DET_TOL * scale or det <= _DET_TOL * scale * scale:
        raise DegenerateModelError(f"{name} is not positive definite: parameter pathology")


def _inv2(m: np.ndarray) -> np.ndarray:
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return np.array([[m[1, 1], -m[0, 1]], [-m[0, 1], m[0, 0]]]) / det


def _inv_sqrt2(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    return vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class LimitMatrices:
    """All limit objects of the asymptotic theory at one parameter point."""

    growth_rate: float
    left_eigenvector: np.ndarray
    x_limit: np.ndarray      # per-type limit of observed-value sums
    x2_limit: np.ndarray     # per-type limit of squared sums
    pair_fraction: float
    pair_x_limit: float
    pair_x2_limit: float
    design0: np.ndarray      # limiting even-daughter design (2x2)
    design1: np.ndarray      # limiting odd-daughter design (2x2)
    design_pair: np.ndarray  # limiting both-daughters design (2x2)
    design_block: np.ndarray  # block-diagonal 4x4 design limit
    score_block: np.ndarray   # 4x4 score-covariance limit
    theta_cov: np.ndarray     # sandwich covariance of the coefficient CLT
    sigma2_clt_var: float
    rho_clt_var: float
    qsl_constant: float
    rho_bias_half_power: float  # trace constant with inverse square roots
    rho_bias_full: float        # trace constant with full inverses


def limit_matrices(bar: BarParams, noise: NoiseParams, spectrum: GWSpectral) -> LimitMatrices:
    """Assemble every limit object; rejects non-positive-definite designs."""
    _require_supercritical(spectrum)
    l0, l1, l01 = design_limits(bar, noise, spectrum)
    _assert_pd(l0, "even-daughter design limit")
    _assert_pd(l1, "odd-daughter design limit")

    pi = spectrum.growth_rate
    h = first_moment_limits(bar, spectrum)
    k = second_moment_limits(bar, noise, spectrum, h)
    pbar, h01, k01 = pair_limits(bar, noise, spectrum, h, k)

    sigma = np.zeros((4, 4))
    sigma[:2, :2], sigma[2:, 2:] = l0, l1
    gamma = np.zeros((4, 4))
    gamma[:2, :2], gamma[2:, 2:] = noise.sigma2 * l0, noise.sigma2 * l1
    gamma[:2, 2:] = gamma[2:, :2] = noise.rho * l01

    sigma_inv = np.zeros((4, 4))
    sigma_inv[:2, :2], sigma_inv[2:, 2:] = _inv2(l0), _inv2(l1)
    theta_cov = sigma_inv @ gamma @ sigma_inv
    theta_cov = 0.5 * (theta_cov + theta_cov.T)

    m = noise_moments(noise)
    s4 = noise.sigma2**2
    nu2tau4 = m.nu2 * m.tau4
    sigma2_var = (pi * (m.tau4 - s4) + 2.0 * pbar * (nu2tau4 - s4)) / pi
    rho_var = nu2tau4 - noise.rho**2

    half = _inv_sqrt2(l1) @ l01 @ _inv_sqrt2(l0)
    full = _inv2(l1) @ l01 @ l01 @ _inv2(l0)
    return LimitMatrices(
        growth_rate=pi,
        left_eigenvector=spectrum.left_eigenvector,
        x_limit=h,
        x2_limit=k,
        pair_fraction=pbar,
        pair_x_limit=h01,
        pair_x2_limit=k01,
        design0=l0,
        design1=l1,
        design_pair=l01,
        design_block=sigma,
        score_block=gamma,
        theta_cov=theta_cov,
        sigma2_clt_var=float(sigma2_var),
        rho_clt_var=float(rho_var),
        qsl_constant=4.0 * noise.sigma2 * (pi - 1.0) / pi,
        rho_bias_half_power=4.0 * noise.rho * (pi - 1.0) / pi * float(np.trace(half)),
        rho_bias_full=noise.rho * (pi - 1.0) / pbar * float(np.trace(full)),
    )
