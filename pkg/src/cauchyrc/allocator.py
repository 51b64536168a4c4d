"""GOP bit budgeting and frame-level optimal bit allocation.

The sequence budget is spread evenly over GOPs, with a sliding window
absorbing the running surplus or deficit.  Inside a GOP each frame carries an
influence factor kappa (how strongly its quality propagates to frames that
reference it); the allocation search walks the anchor frame's seven QP
candidates, derives a GOP-wide lambda from each, lets every frame pick the
candidate whose own kappa-weighted lambda is closest, and finally keeps the
candidate list whose predicted bits land nearest the GOP target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .quant import qp_to_qstep
from .rd_models import HyperbolicFit, lambda_at

QP_MIN = 1
QP_MAX = 51
N_CANDIDATES = 7

# Influence factors by temporal level (random-access hierarchy).
RA_INFLUENCE = {1: 5.4082, 2: 2.3958, 3: 1.5933, 4: 1.1566, 5: 1.0}

# Low-delay influence factors: rows are bpp buckets (upper edge), columns are
# the four positions within a GOP of size four (GOP-final frame last).
LDB_INFLUENCE_BUCKETS = (0.05, 0.10, 0.15, 0.20)
LDB_INFLUENCE = (
    (1.587, 1.7802, 1.3781, 5.1715),
    (1.4499, 1.6675, 1.3631, 3.6495),
    (1.2432, 1.409, 1.1175, 3.3994),
    (1.3633, 1.5461, 1.3363, 2.6198),
)


@dataclass
class GopBudget:
    """Sequence-level bit budget with sliding-window smoothing.

    ``window`` counts GOPs; the correction term redistributes the deviation
    between spent and nominal bits over that many upcoming GOPs.
    """

    r_seq_target: float
    n_gop: int
    window: int
    bits_spent: float = 0.0
    frames_coded: int = 0
    gops_completed: int = 0

    def __post_init__(self) -> None:
        if self.n_gop < 1 or self.window < 1:
            raise ValueError("n_gop and window must be positive")

    @property
    def r_gop_nominal(self) -> float:
        return self.r_seq_target / self.n_gop

    def charge(self, bits: float) -> None:
        self.bits_spent += bits
        self.frames_coded += 1

    def complete_gop(self) -> None:
        self.gops_completed += 1


def gop_target(budget: GopBudget) -> float:
    """Target bits for the next GOP, floored at 10% of the nominal share."""
    nominal = budget.r_gop_nominal
    correction = (budget.bits_spent - nominal * budget.gops_completed) / budget.window
    return max(nominal - correction, 0.1 * nominal)


def estimate_pi(samples: Sequence[tuple[float, float]]) -> float:
    """Dependency factor: OLS slope of RD cost against reference distortion.

    Floored at zero; a negative slope means no exploitable dependency.
    """
    d_ref = np.asarray([d for d, _ in samples], dtype=np.float64)
    j_cost = np.asarray([j for _, j in samples], dtype=np.float64)
    if d_ref.size < 2 or np.unique(d_ref).size < 2:
        raise ValueError("no slope information")
    slope = np.polyfit(d_ref, j_cost, 1)[0]
    return max(float(slope), 0.0)


def influence_factor(level: int, config: str, bpp: float = 0.0,
                     position_in_gop: int = 0) -> float:
    """kappa for a frame: by temporal level (RA) or by bpp bucket and GOP
    position (LDB, positions 1..4 with the GOP-final frame at 4)."""
    if config == "RA":
        if level not in RA_INFLUENCE:
            raise ValueError(f"RA level must be 1..5, got {level}")
        return RA_INFLUENCE[level]
    if config == "LDB":
        if not 1 <= position_in_gop <= 4:
            raise ValueError(f"LDB position must be 1..4, got {position_in_gop}")
        row = len(LDB_INFLUENCE) - 1  # bpp above the table clamps to the last bucket
        for i, upper in enumerate(LDB_INFLUENCE_BUCKETS):
            if bpp <= upper:
                row = i
                break
        return LDB_INFLUENCE[row][position_in_gop - 1]
    raise ValueError(f"unknown configuration: {config}")


@dataclass(frozen=True)
class ClipRule:
    """QP bounds for one level, relative to previously coded frames' QPs.

    Each bound is (reference_level, offset) or None for the global bound.
    """

    lower: tuple[int, int] | None
    upper: tuple[int, int] | None


@dataclass(frozen=True)
class ClipTable:
    rules: Mapping[int, ClipRule]


# Low-delay clips: level 3 floors at the level-1 QP, level 2 sits between the
# level-1 and level-3 QPs, level 1 caps at the level-3 QP minus 4.
LD_CLIP = ClipTable(rules={
    3: ClipRule(lower=(1, 0), upper=None),
    2: ClipRule(lower=(1, 0), upper=(3, 0)),
    1: ClipRule(lower=None, upper=(3, -4)),
})

# Random-access clips relative to the level-1 and level-5 QPs.
RA_CLIP = ClipTable(rules={
    5: ClipRule(lower=(1, 0), upper=(1, 13)),
    4: ClipRule(lower=(1, 0), upper=(1, 13)),
    3: ClipRule(lower=(1, 0), upper=(1, 10)),
    2: ClipRule(lower=(1, 0), upper=(1, 6)),
    1: ClipRule(lower=(5, -11), upper=(5, -4)),
})

UNBOUNDED_CLIP = ClipTable(rules={})


def clip_table_for(config: str) -> ClipTable:
    if config == "RA":
        return RA_CLIP
    if config == "LDB":
        return LD_CLIP
    raise ValueError(f"unknown configuration: {config}")


def clip_qp(qp: int, level: int, table: ClipTable, prev_qps: Mapping[int, int]) -> int:
    """Clamp a QP to its level's resolved bounds, then to [1, 51]."""
    rule = table.rules.get(level)
    lo, hi = QP_MIN, QP_MAX
    if rule is not None:
        if rule.lower is not None:
            ref, off = rule.lower
            lo = prev_qps[ref] + off
        if rule.upper is not None:
            ref, off = rule.upper
            hi = prev_qps[ref] + off
        if lo > hi:
            hi = lo  # crossed bounds: the lower bound wins
    qp = min(max(qp, lo), hi)
    return min(max(qp, QP_MIN), QP_MAX)


@dataclass(frozen=True)
class FrameContext:
    """Everything the allocator needs to know about one frame of a GOP."""

    poc: int
    level: int
    kappa: float
    qp_candidates: tuple[int, ...]
    r_hat: tuple[float, ...]
    r_fit: HyperbolicFit
    d_fit: HyperbolicFit
    is_anchor: bool = False

    def __post_init__(self) -> None:
        if len(self.qp_candidates) != N_CANDIDATES or len(self.r_hat) != N_CANDIDATES:
            raise ValueError(f"need exactly {N_CANDIDATES} QP candidates")
        if self.kappa <= 0.0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class FramePlan:
    poc: int
    level: int
    qp: int
    q_step: float
    lam: float
    target_bits: float


@dataclass(frozen=True)
class GopPlan:
    frames: tuple[FramePlan, ...]
    gop_lambda: float
    chosen_list_index: int  # 1-based candidate index v_o

    @property
    def total_target_bits(self) -> float:
        return sum(f.target_bits for f in self.frames)


def _kappa_lambdas(ctx: FrameContext) -> np.ndarray:
    """lambda_u = -kappa * D'(Q_u)/R'(Q_u) for each of the seven candidates."""
    out = np.empty(N_CANDIDATES, dtype=np.float64)
    for u, qp in enumerate(ctx.qp_candidates):
        out[u] = ctx.kappa * lambda_at(qp_to_qstep(qp), ctx.r_fit, ctx.d_fit)
    return out


def allocate_gop(frames: Sequence[FrameContext], budget: float,
                 clip: ClipTable, prev_qps: Mapping[int, int]) -> GopPlan:
    """Frame-level optimal bit allocation for one GOP.

    ``budget`` is the GOP bit target in the same units as the per-frame
    ``r_hat`` values (bits per pixel summed over frames, for equally sized
    frames).  All argmin ties break toward the lower index, which keeps runs
    deterministic and comparable against the enumeration oracle.
    """
    if not frames:
        raise ValueError("empty GOP")
    anchors = [i for i, f in enumerate(frames) if f.is_anchor]
    if len(anchors) != 1:
        raise ValueError(f"need exactly one anchor frame, got {len(anchors)}")
    anchor = anchors[0]

    try:
        lambdas = [_kappa_lambdas(f) for f in frames]
    except ValueError as exc:
        raise ValueError("no allocatable frames") from exc

    # Step 1/2: each anchor candidate v fixes the GOP lambda; every frame
    # picks the candidate u whose lambda_u is closest.
    choices = np.empty((N_CANDIDATES, len(frames)), dtype=np.intp)
    rate_sums = np.empty(N_CANDIDATES, dtype=np.float64)
    for v in range(N_CANDIDATES):
        lam_gop = lambdas[anchor][v]
        total = 0.0
        for i, f in enumerate(frames):
            u = int(np.argmin(np.abs(lambdas[i] - lam_gop)))
            choices[v, i] = u
            total += f.r_hat[u]
        rate_sums[v] = total

    # Step 4: keep the list whose predicted bits land nearest the target.
    v_o = int(np.argmin(np.abs(rate_sums - budget)))

    plans = []
    for i, f in enumerate(frames):
        u = int(choices[v_o, i])
        qp = clip_qp(f.qp_candidates[u], f.level, clip, prev_qps)
        q_step = qp_to_qstep(qp)
        lam = lambda_at(q_step, f.r_fit, f.d_fit)  # coding lambda, no kappa
        plans.append(FramePlan(poc=f.poc, level=f.level, qp=qp, q_step=q_step,
                               lam=lam, target_bits=f.r_hat[u]))
    return GopPlan(frames=tuple(plans), gop_lambda=float(lambdas[anchor][v_o]),
                   chosen_list_index=v_o + 1)


def external_cost_reindex(cost_matrix) -> np.ndarray:
    """Re-attribute external RD costs from the referencing frame to the
    referenced frame: returns per-column sums of the cost matrix.

    The double sum is order-independent, so the total attributed per column
    must equal the total accumulated per row; both totals are computed with
    exact (fsum) accumulation and compared.
    """
    m = np.asarray(cost_matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("non-square cost matrix")
    col_sums = np.asarray([math.fsum(m[:, j]) for j in range(m.shape[1])])
    row_total = math.fsum(m.flatten(order="C"))
    col_total = math.fsum(m.flatten(order="F"))
    assert row_total == col_total, "re-summation identity violated"
    return col_sums


@dataclass(frozen=True)
class DependencyFrame:
    poc: int
    level: int
    refs: tuple[int, ...]


@dataclass(frozen=True)
class DependencyGraph:
    """Reference structure of a GOP plus estimated dependency factors.

    ``frames`` is in coding order; references may point at frames outside the
    GOP (earlier POCs), but a reference inside the GOP must have been coded
    first.  ``pi_factors`` maps (dependent poc, reference poc) to the slope of
    the dependent frame's RD cost with respect to its reference's distortion.
    """

    frames: tuple[DependencyFrame, ...]
    pi_factors: Mapping[tuple[int, int], float]

    def __post_init__(self) -> None:
        coded: set[int] = set()
        pocs = {f.poc for f in self.frames}
        for f in self.frames:
            for r in f.refs:
                if r in pocs and r not in coded:
                    raise ValueError(f"frame {f.poc} references {r} before it is coded")
            coded.add(f.poc)
        for (dep, ref), pi in self.pi_factors.items():
            if pi < 0.0:
                raise ValueError(f"negative dependency factor for ({dep}, {ref})")

    def kappa(self, poc: int) -> float:
        """kappa_i = 1 + sum of pi over the frames that reference frame i."""
        return 1.0 + sum(pi for (dep, ref), pi in self.pi_factors.items() if ref == poc)

    def kappas(self) -> dict[int, float]:
        return {f.poc: self.kappa(f.poc) for f in self.frames}
