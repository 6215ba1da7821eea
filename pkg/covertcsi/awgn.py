"""
Closed forms for the Gaussian channel with additive interference
Y = X + S + N_Y (unit noise), Z = X + S + N_Z (noise variance sigma2), S ~ N(0, T)
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Dict, Tuple

import numpy as np

logger = logging.getLogger(__name__)


def _half_log2(x: float) -> float:
    return 0.5 * math.log2(x)


@dataclass(frozen=True)
class AwgnSpec:
    P: float
    T: float
    sigma2: float = 1.0

    def __post_init__(self):
        if not self.P >= 0:
            raise ValueError(f"power P must be non-negative, got {self.P}")
        if not self.T > 0:
            raise ValueError(f"interference power T must be positive, got {self.T}")
        if not self.sigma2 > 0:
            raise ValueError(f"warden noise variance sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class DpcAuxiliary:
    """U = X* + u_s * S and X = X* + x_s * S, with X* ~ N(0, P*) independent of S"""
    alpha: float
    u_s: float
    x_s: float
    input_power: float
    power_identity_holds: bool


@dataclass(frozen=True)
class GaussianInformation:
    """Mutual informations (bits) of the Gaussian schemes"""
    i_xstar_y: float
    i_xstar_z: float
    i_u_y: float
    i_u_s: float
    i_u_z: float


@dataclass(frozen=True)
class AwgnResult:
    gamma_star: float
    T_star: float
    P_star: float
    rate_causal_lb_bits: float
    rate_noncausal_bits: float
    converse_rate_bits: float
    key_threshold_causal_bits: float
    key_threshold_noncausal_bits: float
    dpc_alpha: float

    @property
    def no_key_needed_causal(self) -> bool:
        return self.key_threshold_causal_bits <= 0

    @property
    def no_key_needed_noncausal(self) -> bool:
        return self.key_threshold_noncausal_bits <= 0

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['no_key_needed_causal'] = self.no_key_needed_causal
        data['no_key_needed_noncausal'] = self.no_key_needed_noncausal
        return data


def derived_params(spec: AwgnSpec) -> Tuple[float, float, float]:
    """
    gamma* = min(1, P/2T), T* = (1-gamma*)^2 T, P* = T - T*.

    The interference is partially cancelled with X = X* - gamma* S, which
    uses power P* + gamma*^2 T = 2 gamma* T <= P.
    """
    gamma = min(1.0, spec.P / (2.0 * spec.T))
    t_star = (1.0 - gamma) ** 2 * spec.T
    # T - T*, without the cancellation when gamma is small
    p_star = gamma * (2.0 - gamma) * spec.T
    power = p_star + gamma ** 2 * spec.T
    if power > spec.P + 1e-12 * max(spec.P, spec.T):
        raise ArithmeticError(f"power identity violated: {power} > {spec.P}")
    return gamma, t_star, max(p_star, 0.0)


def rate_noncausal(spec: AwgnSpec) -> float:
    _, _, p_star = derived_params(spec)
    return _half_log2(1.0 + p_star)


def rate_causal_lb(spec: AwgnSpec) -> float:
    """Achievable rate with causal CSI (a lower bound, no matching converse)."""
    _, t_star, p_star = derived_params(spec)
    return _half_log2(1.0 + p_star / (t_star + 1.0))


def converse_rate(spec: AwgnSpec) -> float:
    """Upper bound 1/2 log(1 + m - m^2/4T), m = min(P, 2T); equals the noncausal rate."""
    m = min(spec.P, 2.0 * spec.T)
    return _half_log2(1.0 + m - m * m / (4.0 * spec.T))


def _dpc_information(p_star: float, t_star: float, noise: float) -> float:
    if p_star <= 0:
        return 0.0
    alpha = p_star / (p_star + 1.0)
    cov = p_star + alpha * t_star
    var_u = p_star + alpha ** 2 * t_star
    denominator = var_u * (p_star + t_star + noise) - cov ** 2
    return _half_log2(1.0 + cov ** 2 / denominator)


def key_thresholds(spec: AwgnSpec) -> Tuple[float, float]:
    """
    Key rates beyond which the schemes stay covert.

    Returns:
        (causal, noncausal) thresholds in bits; a non-positive value means
        no key is needed
    """
    _, t_star, p_star = derived_params(spec)
    causal = (_half_log2(1.0 + p_star / (t_star + spec.sigma2))
              - _half_log2(1.0 + p_star / (t_star + 1.0)))
    noncausal = _dpc_information(p_star, t_star, spec.sigma2) - _dpc_information(p_star, t_star, 1.0)
    return causal, noncausal


def dpc_auxiliary(spec: AwgnSpec) -> DpcAuxiliary:
    """Dirty-paper auxiliary U = X* + alpha (1-gamma*) S with alpha = P*/(P*+1)."""
    gamma, _, p_star = derived_params(spec)
    alpha = p_star / (p_star + 1.0)
    power = p_star + gamma ** 2 * spec.T
    return DpcAuxiliary(
        alpha=alpha,
        u_s=alpha * (1.0 - gamma),
        x_s=-gamma,
        input_power=power,
        power_identity_holds=bool(math.isclose(power, 2.0 * gamma * spec.T, rel_tol=1e-12, abs_tol=1e-15)),
    )


def gaussian_aux_information(spec: AwgnSpec) -> GaussianInformation:
    """Mutual informations computed from the joint Gaussian covariances."""
    gamma, _, p_star = derived_params(spec)
    if p_star <= 0:
        return GaussianInformation(0.0, 0.0, 0.0, 0.0, 0.0)
    u_s = dpc_auxiliary(spec).u_s

    # coefficients on (X*, S, noise); the receivers see the residual interference (1-gamma) S
    x_star = np.array([1.0, 0.0, 0.0])
    u = np.array([1.0, u_s, 0.0])
    s = np.array([0.0, 1.0, 0.0])
    out = np.array([1.0, 1.0 - gamma, 1.0])

    def information(a: np.ndarray, b: np.ndarray, noise: float = 1.0) -> float:
        basis = np.diag([p_star, spec.T, noise])
        cov = np.array([[a @ basis @ a, a @ basis @ b], [a @ basis @ b, b @ basis @ b]])
        return _half_log2(cov[0, 0] * cov[1, 1] / np.linalg.det(cov))

    return GaussianInformation(
        i_xstar_y=information(x_star, out),
        i_xstar_z=information(x_star, out, spec.sigma2),
        i_u_y=information(u, out),
        i_u_s=information(u, s),
        i_u_z=information(u, out, spec.sigma2),
    )


def evaluate(spec: AwgnSpec) -> AwgnResult:
    gamma, t_star, p_star = derived_params(spec)
    causal_key, noncausal_key = key_thresholds(spec)
    result = AwgnResult(
        gamma_star=gamma,
        T_star=t_star,
        P_star=p_star,
        rate_causal_lb_bits=rate_causal_lb(spec),
        rate_noncausal_bits=rate_noncausal(spec),
        converse_rate_bits=converse_rate(spec),
        key_threshold_causal_bits=causal_key,
        key_threshold_noncausal_bits=noncausal_key,
        dpc_alpha=p_star / (p_star + 1.0),
    )
    logger.info(f"AWGN P={spec.P:g} T={spec.T:g} sigma2={spec.sigma2:g}: "
                f"C_nc={result.rate_noncausal_bits:.6f} bits")
    return result
