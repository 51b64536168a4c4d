"""Hard-decision quantization and model-based entropy/distortion.

Quantization maps a coefficient ``c`` to the level ``floor(|c|/Q + gamma)``
with the sign restored afterwards, so positive and negative coefficients are
treated symmetrically.  Given a composite Cauchy coefficient model, the
probability of each quantization level, the level entropy ``H(Q)`` (bits per
coefficient) and the expected reconstruction distortion ``D(Q)`` (level^2
units) are evaluated either by exact summation over integer levels or by the
closed-form integral approximations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coeff_model import TAIL_CUTOFF, CompositeCauchyModel

GAMMA_I_SLICE = 1.0 / 3.0
GAMMA_B_SLICE = 1.0 / 6.0
L_MAX_DEFAULT = 255

# QP = a*ln(lambda) + b, the standard lambda-to-QP line.
_QP_LAMBDA_SLOPE = 4.2005
_QP_LAMBDA_OFFSET = 13.7122


@dataclass(frozen=True)
class QuantizerConfig:
    """Quantizer: step size, rounding offset and maximum level."""

    q_step: float
    gamma: float
    l_max: int = L_MAX_DEFAULT

    def __post_init__(self) -> None:
        if self.q_step <= 0.0:
            raise ValueError("q_step must be positive")
        if not 0.0 <= self.gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")

    @classmethod
    def for_slice(cls, q_step: float, slice_type: str, l_max: int = L_MAX_DEFAULT) -> "QuantizerConfig":
        """Rounding offset 1/3 for I-slices, 1/6 for B/P-slices."""
        if slice_type == "I":
            gamma = GAMMA_I_SLICE
        elif slice_type in ("B", "P"):
            gamma = GAMMA_B_SLICE
        else:
            raise ValueError(f"unknown slice type: {slice_type}")
        return cls(q_step=q_step, gamma=gamma, l_max=l_max)


@dataclass(frozen=True)
class EntropyProfile:
    """Level probabilities P_N for N in [-l_max, l_max] and their entropy."""

    level_probs: np.ndarray
    entropy_bits: float

    @property
    def l_max(self) -> int:
        return (len(self.level_probs) - 1) // 2

    def prob(self, n: int) -> float:
        return float(self.level_probs[n + self.l_max])


@dataclass(frozen=True)
class DistortionProfile:
    """Per-level distortions D_N for N in [0, l_max]; total = D_0 + 2*sum D_N."""

    level_distortions: np.ndarray
    total: float


def quantize_hard(c, cfg: QuantizerConfig):
    """sign(c) * floor(|c|/Q + gamma), clamped to [-l_max, l_max].

    Accepts scalars or numpy arrays.
    """
    arr = np.asarray(c, dtype=np.float64)
    mag = np.floor(np.abs(arr) / cfg.q_step + cfg.gamma)
    mag = np.minimum(mag, cfg.l_max)
    lev = (np.sign(arr) * mag).astype(np.int64)
    if np.isscalar(c) or arr.ndim == 0:
        return int(lev)
    return lev


def _level_lower_edge(n_level: int, cfg: QuantizerConfig) -> int:
    """Smallest positive integer coefficient that quantizes to >= n_level.

    Starts from ceil((N - gamma) * Q) and nudges by one step to agree
    exactly with quantize_hard under floating-point rounding.
    """
    cand = int(math.ceil((n_level - cfg.gamma) * cfg.q_step))
    cand = max(cand, 1)

    def lvl(n: int) -> int:
        return int(math.floor(n / cfg.q_step + cfg.gamma))

    while cand > 1 and lvl(cand - 1) >= n_level:
        cand -= 1
    while lvl(cand) < n_level:
        cand += 1
    return cand


def _mass_from(model: CompositeCauchyModel, start: int, prefix: np.ndarray) -> float:
    """Model mass of [start, infinity) on the positive axis.

    ``prefix[k]`` holds the exact pmf sum over 1..k up to the tail cutoff;
    beyond the cutoff the integral tail takes over.
    """
    if start <= TAIL_CUTOFF:
        head = prefix[TAIL_CUTOFF] - prefix[start - 1]
        return float(head) + model.tail_mass(TAIL_CUTOFF)
    return model.tail_mass(start - 1)


def _pmf_prefix(model: CompositeCauchyModel) -> np.ndarray:
    n = np.arange(1, TAIL_CUTOFF + 1, dtype=np.float64)
    pmf = model.alpha / (n * n + model.beta)
    prefix = np.empty(TAIL_CUTOFF + 1, dtype=np.float64)
    prefix[0] = 0.0
    np.cumsum(pmf, out=prefix[1:])
    return prefix


def level_probs_sum(model: CompositeCauchyModel, cfg: QuantizerConfig) -> np.ndarray:
    """Exact-sum probabilities for N = 0..l_max (symmetric in sign).

    Mass above level l_max is folded into level l_max so the full profile
    closes to one; P_0 is the complement of the non-zero levels.
    """
    prefix = _pmf_prefix(model)
    edges = [_level_lower_edge(n, cfg) for n in range(1, cfg.l_max + 1)]
    probs = np.zeros(cfg.l_max + 1, dtype=np.float64)
    masses = [_mass_from(model, e, prefix) for e in edges]
    for n in range(1, cfg.l_max):
        probs[n] = masses[n - 1] - masses[n]
    probs[cfg.l_max] = masses[cfg.l_max - 1]
    probs = np.maximum(probs, 0.0)
    probs[0] = max(1.0 - 2.0 * probs[1:].sum(), 0.0)
    return probs


def level_probs_integral(model: CompositeCauchyModel, cfg: QuantizerConfig) -> np.ndarray:
    """Integral-approximation probabilities for N = 0..l_max.

    P_N = (alpha/sqrt(beta)) * [arctan(((N+1)Q - gamma*Q)/sqrt(beta))
                                - arctan((N*Q - gamma*Q)/sqrt(beta))],
    with the outermost level extended to infinity and P_0 the complement.
    """
    sb = math.sqrt(model.beta)
    n = np.arange(1, cfg.l_max + 2, dtype=np.float64)
    angles = np.arctan((n - cfg.gamma) * cfg.q_step / sb)
    angles[-1] = math.pi / 2.0  # fold the tail into level l_max
    probs = np.zeros(cfg.l_max + 1, dtype=np.float64)
    probs[1:] = model.alpha / sb * np.diff(angles)
    probs[0] = max(1.0 - 2.0 * probs[1:].sum(), 0.0)
    return probs


def level_prob_sum(model: CompositeCauchyModel, cfg: QuantizerConfig, n_level: int) -> float:
    """Exact probability that a model coefficient quantizes to ``n_level``."""
    if abs(n_level) > cfg.l_max:
        raise ValueError(f"level {n_level} outside [-{cfg.l_max}, {cfg.l_max}]")
    probs = level_probs_sum(model, cfg)
    return float(probs[abs(n_level)])


def level_prob_integral(model: CompositeCauchyModel, cfg: QuantizerConfig, n_level: int) -> float:
    """Integral approximation of the probability of level ``n_level``."""
    if abs(n_level) > cfg.l_max:
        raise ValueError(f"level {n_level} outside [-{cfg.l_max}, {cfg.l_max}]")
    probs = level_probs_integral(model, cfg)
    return float(probs[abs(n_level)])


def _entropy_bits(probs_half: np.ndarray) -> float:
    """Entropy of the symmetric level distribution, in bits per coefficient."""
    p0 = probs_half[0]
    pn = probs_half[1:]
    h = 0.0
    if p0 > 0.0:
        h -= p0 * math.log2(p0)
    mask = pn > 0.0
    if np.any(mask):
        h -= 2.0 * float(np.sum(pn[mask] * np.log2(pn[mask])))
    return h


def entropy(model: CompositeCauchyModel, cfg: QuantizerConfig, method: str = "integral") -> EntropyProfile:
    """Level-probability profile and its entropy H(Q).

    ``method`` selects the integral approximation (default, fast) or the
    exact sum (oracle path).
    """
    if method == "integral":
        half = level_probs_integral(model, cfg)
    elif method == "sum":
        half = level_probs_sum(model, cfg)
    else:
        raise ValueError(f"unknown method: {method}")
    full = np.concatenate([half[:0:-1], half])
    return EntropyProfile(level_probs=full, entropy_bits=_entropy_bits(half))


def distortion(model: CompositeCauchyModel, cfg: QuantizerConfig) -> DistortionProfile:
    """Closed-form expected distortion D(Q) with level N reconstructed as N*Q.

    D_0 integrates x^2 * alpha/(x^2+beta) over the zero bin; for N >= 1

        D_N = alpha*Q + Psi1(Q, N) - Psi2(Q, N)

    where Psi1 carries the arctan term and Psi2 the log term of the
    antiderivative.  The explicit zero-level spike p0 contributes nothing.
    """
    a, b, q, g = model.alpha, model.beta, cfg.q_step, cfg.gamma
    sb = math.sqrt(b)

    d0 = 2.0 * a * (q - g * q) - 2.0 * a * sb * math.atan((q - g * q) / sb)

    n = np.arange(1, cfg.l_max + 1, dtype=np.float64)
    lo = (n - g) * q
    hi = (n + 1.0 - g) * q
    psi1 = (a * n * n * q * q - a * b) / sb * np.arctan(q * sb / (b + lo * hi))
    psi2 = a * n * q * np.log((hi * hi + b) / (lo * lo + b))
    dn = a * q + psi1 - psi2

    levels = np.concatenate([[d0], dn])
    total = float(d0 + 2.0 * dn.sum())
    return DistortionProfile(level_distortions=levels, total=total)


def qp_to_qstep(qp: int) -> float:
    """Q = 2^((qp-4)/6); strictly increasing over qp in [1, 51]."""
    if not 1 <= qp <= 51:
        raise ValueError(f"qp {qp} outside [1, 51]")
    return 2.0 ** ((qp - 4) / 6.0)


def qp_from_lambda(lam: float) -> float:
    """QP = 4.2005*ln(lambda) + 13.7122, unclamped."""
    if lam <= 0.0:
        raise ValueError("lambda must be positive")
    return _QP_LAMBDA_SLOPE * math.log(lam) + _QP_LAMBDA_OFFSET


def lambda_from_qp(qp: float) -> float:
    """Inverse of qp_from_lambda."""
    return math.exp((qp - _QP_LAMBDA_OFFSET) / _QP_LAMBDA_SLOPE)


def rd_curve_rows(model: CompositeCauchyModel, qps, slice_type: str = "B",
                  l_max: int = L_MAX_DEFAULT) -> list[tuple[int, float, float, float]]:
    """(qp, q_step, entropy_bits, distortion) rows for a list of QPs."""
    rows = []
    for qp in qps:
        cfg = QuantizerConfig.for_slice(qp_to_qstep(qp), slice_type, l_max=l_max)
        h = entropy(model, cfg).entropy_bits
        d = distortion(model, cfg).total
        rows.append((qp, cfg.q_step, h, d))
    return rows
