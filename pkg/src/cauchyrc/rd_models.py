"""Frame-level rate and distortion prediction.

Predicted bits follow R(Q) = phi*H(Q) + psi, with the slope phi calibrated
from the previously coded frame at the same temporal level and psi equal to
its header bits.  Predicted distortion rescales the model D(Q) by the
previous frame's measured non-SKIP distortion and mixes in the SKIP share.
Hyperbolic (power-law) surrogates fitted to sampled (Q, R) and (Q, D) points
supply the derivatives that turn the two curves into a Lagrange multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .coeff_model import CompositeCauchyModel
from .quant import QuantizerConfig, distortion, entropy

TAU_WEIGHTS = (5.0, 3.0, 1.0)


@dataclass(frozen=True)
class FrameCalibration:
    """Statistics of the previously coded frame at the same temporal level.

    Rates are bits per pixel, distortions are MSE.  ``d_prev_ref`` is the
    distortion of that frame's own prediction reference (used by dependency
    bookkeeping, not by the predictors themselves).
    """

    r_prev: float
    header_prev: float
    q_prev: float
    d_prev_nonskip: float
    skip_ratio_prev: float
    d_prev_skip: float
    d_prev_ref: float = 0.0

    def __post_init__(self) -> None:
        if self.r_prev < self.header_prev or self.header_prev < 0.0:
            raise ValueError("need r_prev >= header_prev >= 0")
        if not 0.0 <= self.skip_ratio_prev <= 1.0:
            raise ValueError("skip_ratio_prev must lie in [0, 1]")
        if self.q_prev <= 0.0:
            raise ValueError("q_prev must be positive")


@dataclass(frozen=True)
class HyperbolicFit:
    """Power-law surrogate y(Q) = coeff * Q^(-exponent)."""

    coeff: float
    exponent: float

    def __post_init__(self) -> None:
        if self.coeff <= 0.0:
            raise ValueError("coeff must be positive")

    def value(self, q: float) -> float:
        return self.coeff * q ** (-self.exponent)

    def derivative(self, q: float) -> float:
        return -self.coeff * self.exponent * q ** (-self.exponent - 1.0)


@dataclass
class LambdaState:
    """Up to three (Q, lambda) pairs of previous same-level frames, newest first."""

    history: list[tuple[float, float]] = field(default_factory=list)

    def record(self, q: float, lam: float) -> None:
        if lam <= 0.0:
            raise ValueError("lambda must be positive")
        self.history.insert(0, (q, lam))
        del self.history[len(TAU_WEIGHTS):]


def estimate_rate(model: CompositeCauchyModel, cfg: QuantizerConfig,
                  cal: FrameCalibration, method: str = "integral") -> float:
    """Predicted bits per pixel at cfg.q_step, anchored to the previous frame.

    phi = (R_p - r_p^h) / H(Q_p) and psi = r_p^h; the result is floored at
    psi (header bits are always paid).
    """
    h_q = entropy(model, cfg, method=method).entropy_bits
    cfg_prev = QuantizerConfig(q_step=cal.q_prev, gamma=cfg.gamma, l_max=cfg.l_max)
    h_qp = entropy(model, cfg_prev, method=method).entropy_bits
    if h_qp <= 0.0:
        raise ValueError("calibration degenerate")
    # r_prev*(h/h_p) + psi*(1 - h/h_p) is algebraically phi*h + psi but
    # reproduces r_prev exactly (in floating point) at Q = Q_p.
    ratio = h_q / h_qp
    r_hat = cal.r_prev * ratio + cal.header_prev * (1.0 - ratio)
    return max(r_hat, cal.header_prev)


def estimate_distortion(model: CompositeCauchyModel, cfg: QuantizerConfig,
                        cal: FrameCalibration) -> float:
    """Predicted MSE at cfg.q_step.

    D_hat(Q) = (D_p^ns / D(Q_p)) * D(Q) * (1 - P_p^s) + P_p^s * D_p^s.
    """
    d_q = distortion(model, cfg).total
    cfg_prev = QuantizerConfig(q_step=cal.q_prev, gamma=cfg.gamma, l_max=cfg.l_max)
    d_qp = distortion(model, cfg_prev).total
    if d_qp <= 0.0:
        raise ValueError("calibration degenerate")
    ps = cal.skip_ratio_prev
    return cal.d_prev_nonskip * (d_q / d_qp) * (1.0 - ps) + ps * cal.d_prev_skip


def fit_hyperbolic(points: Sequence[tuple[float, float]]) -> HyperbolicFit:
    """Least-squares fit of ln y = ln a - b*ln Q; non-positive y points are dropped."""
    qs = np.asarray([q for q, y in points if y > 0.0], dtype=np.float64)
    ys = np.asarray([y for _, y in points if y > 0.0], dtype=np.float64)
    if qs.size < 2 or np.unique(qs).size < 2:
        raise ValueError("insufficient fit data")
    slope, intercept = np.polyfit(np.log(qs), np.log(ys), 1)
    return HyperbolicFit(coeff=float(math.exp(intercept)), exponent=float(-slope))


def lambda_at(q: float, r_fit: HyperbolicFit, d_fit: HyperbolicFit) -> float:
    """lambda = -D'(Q)/R'(Q) from the surrogate derivatives."""
    r_prime = r_fit.derivative(q)
    if r_prime == 0.0:
        raise ValueError("flat rate model")
    return -d_fit.derivative(q) / r_prime


def stabilize_lambda(lambda_raw: float, state: LambdaState,
                     r_fit: HyperbolicFit, d_fit: HyperbolicFit) -> float:
    """Scale lambda by the tau-weighted mean of Gamma_m = lambda_p^m / lambda(Q_p^m).

    Gamma close to one means the current Q-lambda relationship matches what
    previous same-level frames actually used.  Missing history entries just
    shorten the weighted mean; an empty history returns lambda_raw as is.
    """
    if not state.history:
        return lambda_raw
    num = 0.0
    den = 0.0
    for (q_m, lam_m), tau in zip(state.history, TAU_WEIGHTS):
        gamma_m = lam_m / lambda_at(q_m, r_fit, d_fit)
        num += tau * gamma_m
        den += tau
    return num / den * lambda_raw
