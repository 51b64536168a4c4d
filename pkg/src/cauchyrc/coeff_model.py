"""Coefficient histograms and heavy-tailed distribution fits.

Transform coefficients of predicted frames pile up at zero and decay
slowly away from it.  The composite model here keeps an explicit zero
probability ``p0`` and covers the non-zero integer levels with a discrete
Cauchy law ``alpha / (n^2 + beta)``.  Laplacian and plain Cauchy fits are
provided as comparison baselines, with KL divergence (base 2) as the
fitting-accuracy metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

# Levels beyond this cutoff are accounted for with the analytic integral
# tail; keeps normalization 1e-6-tight without unbounded sums.
TAIL_CUTOFF = 10_000

# Default search grid for the shape parameter: geometric sweep.
BETA_MIN_DEFAULT = 0.05
BETA_MAX_DEFAULT = 500.0
BETA_STEP_DEFAULT = 1.05

_LN2 = math.log(2.0)


@dataclass(frozen=True)
class CoefficientHistogram:
    """Multiset of integer coefficient levels, stored as level -> count."""

    counts: Mapping[int, int]
    total: int

    def __post_init__(self) -> None:
        if self.total != sum(self.counts.values()):
            raise ValueError("total does not match sum of counts")

    @property
    def p_zero(self) -> float:
        return self.counts.get(0, 0) / self.total

    def nonzero_levels(self) -> np.ndarray:
        """Sorted array of non-zero levels with positive count."""
        lv = sorted(n for n, c in self.counts.items() if n != 0 and c > 0)
        return np.asarray(lv, dtype=np.int64)

    def pmf(self) -> dict[int, float]:
        """Empirical probability of each observed level."""
        return {n: c / self.total for n, c in self.counts.items() if c > 0}


@dataclass(frozen=True)
class CompositeCauchyModel:
    """Zero spike ``p0`` plus discrete Cauchy mass ``alpha/(n^2+beta)`` elsewhere.

    ``alpha`` is always the closed-form normalizer

        alpha = (1-p0) * beta * tanh(sqrt(beta)*pi) / (sqrt(beta)*pi - tanh(sqrt(beta)*pi))

    so the pmf sums to one over the integers.
    """

    alpha: float
    beta: float
    p0: float

    def __post_init__(self) -> None:
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.p0 <= 1.0:
            raise ValueError("p0 must lie in [0, 1]")

    @classmethod
    def from_beta(cls, beta: float, p0: float) -> "CompositeCauchyModel":
        return cls(alpha=alpha_from_beta(beta, p0), beta=beta, p0=p0)

    def pmf(self, n: int) -> float:
        if n == 0:
            return self.p0
        return self.alpha / (n * n + self.beta)

    def pmf_array(self, levels: np.ndarray) -> np.ndarray:
        levels = np.asarray(levels, dtype=np.float64)
        out = self.alpha / (levels * levels + self.beta)
        return np.where(levels == 0, self.p0, out)

    def log2_pmf(self, n: int) -> float:
        """Exact log2 pmf; avoids underflow for far-tail levels."""
        if n == 0:
            if self.p0 <= 0.0:
                return -math.inf
            return math.log2(self.p0)
        if self.alpha <= 0.0:
            return -math.inf
        return math.log2(self.alpha) - math.log2(n * n + self.beta)

    def total_mass(self) -> float:
        """Sum of the pmf over all integers (analytic tail beyond the cutoff)."""
        n = np.arange(1, TAIL_CUTOFF + 1, dtype=np.float64)
        head = float(np.sum(self.alpha / (n * n + self.beta)))
        return self.p0 + 2.0 * (head + self.tail_mass(TAIL_CUTOFF))

    def tail_mass(self, n_from: float) -> float:
        """Integral approximation of ``sum_{n > n_from} pmf(n)`` (one side)."""
        sb = math.sqrt(self.beta)
        return self.alpha / sb * (math.pi / 2.0 - math.atan(n_from / sb))


@dataclass(frozen=True)
class BaselineModel:
    """Classical symmetric baseline over integer levels.

    kind "laplacian": pmf(n) = C * exp(-|n|/scale) with C chosen so the pmf
    sums to one over the integers.
    kind "cauchy": pmf(n) = a/(n^2 + scale) for all n, with the normalizer
    a = sqrt(scale)*tanh(pi*sqrt(scale))/pi.
    """

    kind: str
    scale: float

    def __post_init__(self) -> None:
        if self.kind not in ("laplacian", "cauchy"):
            raise ValueError(f"unknown baseline kind: {self.kind}")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    def pmf(self, n: int) -> float:
        return float(self.pmf_array(np.asarray([n])))

    def pmf_array(self, levels: np.ndarray) -> np.ndarray:
        levels = np.asarray(levels, dtype=np.float64)
        if self.kind == "laplacian":
            r = math.exp(-1.0 / self.scale)
            norm = (1.0 - r) / (1.0 + r)
            return norm * np.exp(-np.abs(levels) / self.scale)
        a = _cauchy_norm(self.scale)
        return a / (levels * levels + self.scale)

    def log2_pmf(self, n: int) -> float:
        if self.kind == "laplacian":
            r = math.exp(-1.0 / self.scale)
            norm = (1.0 - r) / (1.0 + r)
            return math.log2(norm) - abs(n) / (self.scale * _LN2)
        a = _cauchy_norm(self.scale)
        return math.log2(a) - math.log2(n * n + self.scale)


def _cauchy_norm(beta: float) -> float:
    # sum_{n in Z} 1/(n^2+beta) = pi*coth(pi*sqrt(beta))/sqrt(beta)
    sb = math.sqrt(beta)
    return sb * math.tanh(math.pi * sb) / math.pi


def build_histogram(levels: Iterable[int]) -> CoefficientHistogram:
    """Count exact multiplicities of integer coefficient levels."""
    arr = np.asarray(list(levels) if not isinstance(levels, np.ndarray) else levels)
    if arr.size == 0:
        raise ValueError("no coefficients")
    values, counts = np.unique(arr.astype(np.int64), return_counts=True)
    mapping = {int(v): int(c) for v, c in zip(values, counts)}
    return CoefficientHistogram(counts=mapping, total=int(arr.size))


def alpha_from_beta(beta: float, p0: float) -> float:
    """Closed-form scale that normalizes the composite pmf to one."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    sb = math.sqrt(beta)
    t = math.tanh(sb * math.pi)
    return (1.0 - p0) * beta * t / (sb * math.pi - t)


def beta_grid(beta_min: float = BETA_MIN_DEFAULT,
              beta_max: float = BETA_MAX_DEFAULT,
              beta_step: float = BETA_STEP_DEFAULT) -> np.ndarray:
    """Geometric grid of candidate shape parameters, endpoints included."""
    if beta_min <= 0.0 or beta_min > beta_max:
        raise ValueError("need 0 < beta_min <= beta_max")
    if beta_step <= 1.0:
        raise ValueError("beta_step must exceed 1")
    count = int(math.floor(math.log(beta_max / beta_min) / math.log(beta_step) + 1e-12)) + 1
    grid = beta_min * beta_step ** np.arange(count, dtype=np.float64)
    if grid[-1] < beta_max * (1.0 - 1e-12):
        grid = np.append(grid, beta_max)
    return grid


def fit_composite_cauchy(hist: CoefficientHistogram,
                         beta_min: float = BETA_MIN_DEFAULT,
                         beta_max: float = BETA_MAX_DEFAULT,
                         beta_step: float = BETA_STEP_DEFAULT) -> CompositeCauchyModel:
    """Fit the composite model to a histogram.

    ``p0`` is the empirical zero probability.  ``beta`` is grid-searched to
    minimize the mean squared error between model and empirical pmf over the
    non-zero levels present in the histogram (the zero level is excluded so
    the spike cannot drag the tail fit).  Ties break toward smaller beta.
    """
    levels = hist.nonzero_levels()
    if levels.size == 0:
        raise ValueError("degenerate: no non-zero coefficients")
    p0 = hist.p_zero
    emp = np.asarray([hist.counts[int(n)] for n in levels], dtype=np.float64) / hist.total

    betas = beta_grid(beta_min, beta_max, beta_step)
    alphas = np.asarray([alpha_from_beta(float(b), p0) for b in betas])
    # model pmf for every (beta, level) pair
    denom = levels.astype(np.float64)[None, :] ** 2 + betas[:, None]
    model = alphas[:, None] / denom
    mse = np.mean((model - emp[None, :]) ** 2, axis=1)
    best = int(np.argmin(mse))  # first minimum = smallest beta on the ascending grid
    return CompositeCauchyModel(alpha=float(alphas[best]), beta=float(betas[best]), p0=p0)


def fit_baseline(hist: CoefficientHistogram, kind: str,
                 beta_min: float = BETA_MIN_DEFAULT,
                 beta_max: float = BETA_MAX_DEFAULT,
                 beta_step: float = BETA_STEP_DEFAULT) -> BaselineModel:
    """Fit a Laplacian (ML scale = mean |n|) or Cauchy (grid MSE) baseline.

    Unlike the composite fit, baselines model the zero level too, so their
    MSE objective runs over every level present in the histogram.
    """
    if hist.nonzero_levels().size == 0:
        raise ValueError("degenerate: no non-zero coefficients")
    if kind == "laplacian":
        scale = sum(abs(n) * c for n, c in hist.counts.items()) / hist.total
        return BaselineModel(kind="laplacian", scale=scale)
    if kind != "cauchy":
        raise ValueError(f"unknown baseline kind: {kind}")

    levels = np.asarray(sorted(n for n, c in hist.counts.items() if c > 0), dtype=np.float64)
    emp = np.asarray([hist.counts[int(n)] for n in levels], dtype=np.float64) / hist.total
    betas = beta_grid(beta_min, beta_max, beta_step)
    norms = np.asarray([_cauchy_norm(float(b)) for b in betas])
    model = norms[:, None] / (levels[None, :] ** 2 + betas[:, None])
    mse = np.mean((model - emp[None, :]) ** 2, axis=1)
    best = int(np.argmin(mse))
    return BaselineModel(kind="cauchy", scale=float(betas[best]))


def kl_divergence(f_r: Mapping[int, float], f_p: Mapping[int, float]) -> float:
    """KL divergence sum f_r(n) * log2(f_r(n)/f_p(n)) over the support of f_r."""
    out = 0.0
    for n, p in f_r.items():
        if p <= 0.0:
            continue
        q = f_p.get(n, 0.0)
        if q <= 0.0:
            raise ValueError("unsupported model mass")
        out += p * math.log2(p / q)
    return out


def kl_vs_histogram(hist: CoefficientHistogram,
                    model: CompositeCauchyModel | BaselineModel) -> float:
    """KL divergence of a fitted model against the observed histogram.

    Works in log space so far-tail levels cannot underflow the model pmf
    to zero.
    """
    out = 0.0
    for n, c in hist.counts.items():
        if c <= 0:
            continue
        p = c / hist.total
        lq = model.log2_pmf(n)
        if lq == -math.inf:
            raise ValueError("unsupported model mass")
        out += p * (math.log2(p) - lq)
    return out


def sample_levels(model: CompositeCauchyModel, size: int, rng: np.random.Generator,
                  support: int = 100_000) -> np.ndarray:
    """Draw integer levels from the model, truncated to |n| <= support."""
    levels = np.arange(-support, support + 1, dtype=np.int64)
    probs = model.pmf_array(levels)
    probs = probs / probs.sum()  # fold the tiny truncated tail back in
    return rng.choice(levels, size=size, p=probs)


def read_coefficient_dump(path: str) -> np.ndarray:
    """Read a coefficient dump: one integer level per line."""
    values: list[int] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text))
            except ValueError:
                raise ValueError(f"line {lineno}: not an integer level: {text!r}") from None
    if not values:
        raise ValueError("no coefficients")
    return np.asarray(values, dtype=np.int64)


def write_histogram_csv(hist: CoefficientHistogram, path: str) -> None:
    """Export a histogram as ``level,count`` rows, levels ascending."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("level,count\n")
        for n in sorted(hist.counts):
            fh.write(f"{n},{hist.counts[n]}\n")
