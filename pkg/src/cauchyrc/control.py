"""Closed-loop rate control driving the codec simulator.

Three modes share one encode loop:

* ``fixed_qp``: every frame at one QP, no budgeting (the anchor used to
  derive realistic targets).
* ``default_rc``: fixed-ratio baseline.  Each GOP's budget is split in
  proportion to the influence factors; per-frame QP comes from the
  lambda-domain line (lambda from a power-law bpp model with online
  parameter updates, QP from the lambda-to-QP line).
* ``proposed_rc``: after a warm-up phase, each GOP fits a composite Cauchy
  model per temporal level from the previous same-level frame's coefficient
  histogram, predicts rate and distortion over the seven QP candidates,
  fits hyperbolic surrogates and runs the GOP-lambda allocation search.

Frame 0 is always intra; its actual cost is deducted from the sequence
budget before the GOP accounting starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .allocator import (ClipTable, FrameContext, GopBudget, allocate_gop,
                        clip_qp, clip_table_for, gop_target, influence_factor)
from .codec import (SKIP_THRESHOLD_DEFAULT, SequenceConfig, SimFrameRecord,
                    bit_err, encode_frame)
from .coeff_model import CompositeCauchyModel, fit_composite_cauchy
from .gop import GopStructure, gop_structure
from .quant import QuantizerConfig, lambda_from_qp, qp_from_lambda, qp_to_qstep
from .rd_models import (FrameCalibration, LambdaState, estimate_distortion,
                        estimate_rate, fit_hyperbolic, lambda_at,
                        stabilize_lambda)

WARMUP_FRAMES = 32
QP_MIN, QP_MAX = 1, 51

# lambda = INIT_MU * bpp^INIT_PHI seeds the lambda-domain bootstrap; the
# intercept is re-anchored to the measured intra-frame operating point.
INIT_MU = 3.2003
INIT_PHI = -1.367
MU_RANGE = (0.01, 10000.0)
PHI_RANGE = (-6.0, -0.5)
LAMBDA_RANGE = (1e-3, 1e4)
INTRA_BOOST = 4.0  # intra frame gets this multiple of the per-frame budget


@dataclass
class _LevelState:
    """Per-temporal-level calibration state carried across GOPs."""

    record: SimFrameRecord | None = None
    model: CompositeCauchyModel | None = None
    model_poc: int = -1
    lambda_state: LambdaState = field(default_factory=LambdaState)
    last_qp: int = 0
    ref_mse: float = 0.0
    mu: float = INIT_MU
    phi: float = INIT_PHI


@dataclass(frozen=True)
class RunSummary:
    mode: str
    target_bps: float | None
    fps: float
    total_bits: float
    actual_bps: float
    mean_psnr_db: float
    bit_err_pct: float | None


@dataclass(frozen=True)
class RunResult:
    records: tuple[SimFrameRecord, ...]
    summary: RunSummary
    plan_rows: tuple[dict, ...]
    trace_rows: tuple[dict, ...]


def run_sequence(frames: np.ndarray, cfg: SequenceConfig, mode: str, *,
                 qp: int | None = None, target_bps: float | None = None,
                 fps: float = 30.0, skip_threshold: float = SKIP_THRESHOLD_DEFAULT,
                 window_gops: int | None = None,
                 collect_trace: bool = False) -> RunResult:
    """Encode a sequence under the chosen rate-control mode."""
    if mode == "fixed_qp":
        if qp is None:
            raise ValueError("fixed_qp mode requires qp")
    elif mode in ("default_rc", "proposed_rc"):
        if target_bps is None or target_bps <= 0.0:
            raise ValueError(f"{mode} requires a positive target_bps")
    else:
        raise ValueError(f"unknown mode: {mode!r}")
    if len(frames) != cfg.frame_count:
        raise ValueError("frame array does not match configured frame_count")

    loop = _ControlLoop(frames, cfg, mode, qp=qp, target_bps=target_bps,
                        fps=fps, skip_threshold=skip_threshold,
                        window_gops=window_gops, collect_trace=collect_trace)
    return loop.run()


class _ControlLoop:
    def __init__(self, frames, cfg: SequenceConfig, mode: str, *, qp, target_bps,
                 fps, skip_threshold, window_gops, collect_trace):
        self.frames = frames
        self.cfg = cfg
        self.mode = mode
        self.fixed_qp = qp
        self.target_bps = target_bps
        self.fps = fps
        self.skip_threshold = skip_threshold
        self.collect_trace = collect_trace
        self.structure: GopStructure = gop_structure(cfg.gop_structure)
        self.clip: ClipTable = clip_table_for(self.structure.config)
        self.pixels = cfg.pixels_per_frame
        if window_gops is None:
            window_gops = max(1, WARMUP_FRAMES // self.structure.size)
        self.window_gops = window_gops
        self.levels: dict[int, _LevelState] = {}
        self.records: list[SimFrameRecord] = []
        self.recons: dict[int, np.ndarray] = {}
        self.plan_rows: list[dict] = []
        self.trace_rows: list[dict] = []
        self.rec_by_poc: dict[int, SimFrameRecord] = {}
        self.budget: GopBudget | None = None
        if target_bps is not None:
            self.seq_bpp = target_bps / (fps * self.pixels)
        else:
            self.seq_bpp = 0.0

    # -- helpers -----------------------------------------------------------

    def _level(self, lv: int) -> _LevelState:
        return self.levels.setdefault(lv, _LevelState())

    def _prev_qps(self) -> dict[int, int]:
        return {lv: st.last_qp for lv, st in self.levels.items() if st.last_qp}

    def _kappa(self, slot) -> float:
        if self.structure.config == "RA":
            return influence_factor(slot.level, "RA")
        return influence_factor(slot.level, "LDB", bpp=self.seq_bpp,
                                position_in_gop=slot.poc_offset)

    def _slice_type(self, poc: int) -> str:
        if poc == 0:
            return "I"
        period = self.cfg.intra_period
        if period and poc % period == 0:
            return "I"
        return "B"

    def _encode(self, poc: int, level: int, ref_poc: int | None, qp_val: int,
                lam: float) -> SimFrameRecord:
        slice_type = self._slice_type(poc)
        reference = None if slice_type == "I" else self.recons[ref_poc]
        rec, recon = encode_frame(self.frames[poc], reference, qp_val, slice_type,
                                  self.skip_threshold, self.cfg.block_size,
                                  poc=poc, level=level, lam=lam)
        self.recons[poc] = recon
        self.records.append(rec)
        self.rec_by_poc[poc] = rec
        if self.budget is not None:
            self.budget.charge(rec.bits)
        st = self._level(level)
        st.record = rec
        st.last_qp = rec.qp
        if ref_poc is not None and slice_type == "B":
            st.ref_mse = self.rec_by_poc[ref_poc].mse
        self._update_lambda_line(st, lam, rec.bits / self.pixels)
        return rec

    def _update_lambda_line(self, st: _LevelState, lam_used: float, bpp: float) -> None:
        """Online update of the per-level lambda = mu * bpp^phi line."""
        if bpp <= 0.0 or lam_used <= 0.0:
            return
        err = math.log(lam_used) - (math.log(st.mu) + st.phi * math.log(bpp))
        st.mu = min(max(st.mu * math.exp(0.1 * err), MU_RANGE[0]), MU_RANGE[1])
        st.phi = min(max(st.phi + 0.05 * err * math.log(bpp), PHI_RANGE[0]), PHI_RANGE[1])

    def _lambda_domain_qp(self, st: _LevelState, bpp_target: float) -> tuple[int, float]:
        lam = st.mu * max(bpp_target, 1e-9) ** st.phi
        lam = min(max(lam, LAMBDA_RANGE[0]), LAMBDA_RANGE[1])
        qp_val = int(round(qp_from_lambda(lam)))
        return min(max(qp_val, QP_MIN), QP_MAX), lam

    def _search_intra_qp(self, target_bits_frame: float) -> tuple[int, dict[int, float]]:
        """Binary search the intra QP whose cost lands nearest the target.

        Frame bits decrease monotonically in QP, so a handful of probe
        encodes of frame 0 pins the starting operating point.  Returns the
        chosen QP and the probe cache (QP -> bits), which also seeds the
        lambda-vs-bpp line.
        """
        cache: dict[int, float] = {}

        def bits_at(qp_val: int) -> float:
            if qp_val not in cache:
                rec, _ = encode_frame(self.frames[0], None, qp_val, "I",
                                      self.skip_threshold, self.cfg.block_size)
                cache[qp_val] = rec.bits
            return cache[qp_val]

        lo, hi = QP_MIN, QP_MAX
        while lo < hi:
            mid = (lo + hi) // 2
            if bits_at(mid) > target_bits_frame:
                lo = mid + 1
            else:
                hi = mid
        if lo > QP_MIN and (abs(bits_at(lo - 1) - target_bits_frame)
                            < abs(bits_at(lo) - target_bits_frame)):
            return lo - 1, cache
        return lo, cache

    def _seed_lambda_line(self, probes: dict[int, float], qp0: int, bpp0: float) -> tuple[float, float]:
        """Fit lambda = mu * bpp^phi through the intra probe points.

        The slope comes from regressing ln(lambda) on ln(bpp) over the
        probed QPs; the intercept is pinned to the chosen operating point.
        """
        phi = INIT_PHI
        pts = [(bits / self.pixels, lambda_from_qp(q)) for q, bits in probes.items()
               if bits > 0.0]
        if len(pts) >= 2:
            ln_bpp = np.log([p[0] for p in pts])
            ln_lam = np.log([p[1] for p in pts])
            if np.ptp(ln_bpp) > 1e-9:
                slope = float(np.polyfit(ln_bpp, ln_lam, 1)[0])
                phi = min(max(slope, PHI_RANGE[0]), PHI_RANGE[1])
        mu = lambda_from_qp(qp0) / bpp0 ** phi
        mu = min(max(mu, MU_RANGE[0]), MU_RANGE[1])
        return mu, phi

    def _model_qp_for_target(self, model: CompositeCauchyModel,
                             cal: FrameCalibration, bpp_target: float) -> int:
        """QP whose predicted rate lands nearest the target, over [1, 51]."""
        best_qp, best_err = QP_MIN, math.inf
        for qp_val in range(QP_MIN, QP_MAX + 1):
            cfg_u = QuantizerConfig.for_slice(qp_to_qstep(qp_val), "B")
            err = abs(estimate_rate(model, cfg_u, cal) - bpp_target)
            if err < best_err:
                best_qp, best_err = qp_val, err
        return best_qp

    def _model_for(self, st: _LevelState) -> CompositeCauchyModel | None:
        """Composite model fitted from the level's most recent histogram.

        Degenerate histograms (all-SKIP frames, all-zero levels) keep the
        previous model.
        """
        rec = st.record
        if rec is None or rec.poc == st.model_poc:
            return st.model
        st.model_poc = rec.poc
        if rec.coeff_histogram is not None:
            try:
                st.model = fit_composite_cauchy(rec.coeff_histogram)
            except ValueError:
                pass  # all mass at zero: fall back to whatever model we had
        return st.model

    # -- per-frame planning ------------------------------------------------

    def _build_context(self, poc: int, slot, kappa: float):
        """Model, calibration, candidates and surrogates for one frame.

        Returns (FrameContext, cal, r_fit, d_fit, per-candidate trace), or
        None when the level's calibration cannot support prediction yet.
        """
        st = self._level(slot.level)
        model = self._model_for(st)
        rec = st.record
        if model is None or rec is None:
            return None
        cal = FrameCalibration(
            r_prev=rec.bits / self.pixels,
            header_prev=rec.header_bits / self.pixels,
            q_prev=qp_to_qstep(rec.qp),
            d_prev_nonskip=rec.mse_nonskip,
            skip_ratio_prev=rec.skip_ratio,
            d_prev_skip=rec.mse_skip,
            d_prev_ref=st.ref_mse)
        qps = tuple(min(max(rec.qp + d, QP_MIN), QP_MAX) for d in range(-3, 4))
        try:
            r_hat, d_hat = [], []
            for qp_u in qps:
                cfg_u = QuantizerConfig.for_slice(qp_to_qstep(qp_u), "B")
                r_hat.append(estimate_rate(model, cfg_u, cal))
                d_hat.append(estimate_distortion(model, cfg_u, cal))
            q_steps = [qp_to_qstep(q) for q in qps]
            r_fit = fit_hyperbolic(list(zip(q_steps, r_hat)))
            d_fit = fit_hyperbolic(list(zip(q_steps, d_hat)))
        except ValueError:
            return None
        trace = None
        if self.collect_trace:
            trace = [dict(poc=poc, level=slot.level, qp_candidate=qp_u,
                          r_hat=r_hat[u], d_hat=d_hat[u],
                          lam=lambda_at(q_steps[u], r_fit, d_fit))
                     for u, qp_u in enumerate(qps)]
        ctx = FrameContext(poc=poc, level=slot.level, kappa=kappa,
                           qp_candidates=qps, r_hat=tuple(r_hat),
                           r_fit=r_fit, d_fit=d_fit,
                           is_anchor=(slot.level == 1))
        return ctx, cal, r_fit, d_fit, trace

    def _stabilized_lambda(self, level: int, lam_raw: float, r_fit, d_fit) -> float:
        st = self._level(level)
        try:
            lam = stabilize_lambda(lam_raw, st.lambda_state, r_fit, d_fit)
        except ValueError:
            lam = lam_raw
        return min(max(lam, LAMBDA_RANGE[0]), LAMBDA_RANGE[1])

    # -- GOP strategies ------------------------------------------------------

    def _run_gop_adaptive(self, gop_index: int, pocs_slots) -> bool:
        """Allocation-search GOP.  Returns False if prediction is not ready."""
        target_bits = gop_target(self.budget)
        contexts, extras = [], []
        for poc, slot in pocs_slots:
            built = self._build_context(poc, slot, self._kappa(slot))
            if built is None:
                return False
            contexts.append(built[0])
            extras.append(built)
        prev_qps = self._prev_qps()
        plan = allocate_gop(contexts, target_bits / self.pixels, self.clip, prev_qps)

        for (poc, slot), frame_plan, built in zip(pocs_slots, plan.frames, extras):
            _, _, r_fit, d_fit, trace = built
            if trace:
                self.trace_rows.extend(trace)
            lam = self._stabilized_lambda(slot.level, frame_plan.lam, r_fit, d_fit)
            ref_poc = poc - slot.poc_offset + slot.ref_offsets[0]
            rec = self._encode(poc, slot.level, ref_poc, frame_plan.qp, lam)
            self._level(slot.level).lambda_state.record(frame_plan.q_step, lam)
            self.plan_rows.append(dict(
                gop=gop_index, poc=poc, level=slot.level, qp=rec.qp, lam=lam,
                target_bpp=frame_plan.target_bits,
                actual_bpp=rec.bits / self.pixels))
        return True

    def _run_gop_fixed_ratio(self, gop_index: int, pocs_slots) -> None:
        """Warm-up / fallback GOP: budget split proportional to kappa."""
        target_bits = gop_target(self.budget)
        kappas = [self._kappa(slot) for _, slot in pocs_slots]
        total_kappa = sum(kappas)
        prev_qps = self._prev_qps()
        use_model = self.mode == "proposed_rc"
        for (poc, slot), kap in zip(pocs_slots, kappas):
            bpp_target = target_bits * kap / total_kappa / self.pixels
            st = self._level(slot.level)
            built = self._build_context(poc, slot, kap) if use_model else None
            if built is not None:
                ctx, _, r_fit, d_fit, trace = built
                if trace:
                    self.trace_rows.extend(trace)
                errors = [abs(r - bpp_target) for r in ctx.r_hat]
                u = int(np.argmin(errors))
                qp_val = ctx.qp_candidates[u]
                qp_val = clip_qp(qp_val, slot.level, self.clip, prev_qps)
                try:
                    lam_raw = lambda_at(qp_to_qstep(qp_val), r_fit, d_fit)
                except ValueError:
                    lam_raw = lambda_from_qp(qp_val)
                if lam_raw <= 0.0:
                    lam_raw = lambda_from_qp(qp_val)
                lam = self._stabilized_lambda(slot.level, lam_raw, r_fit, d_fit)
            else:
                qp_val, lam = self._lambda_domain_qp(st, bpp_target)
                qp_val = clip_qp(qp_val, slot.level, self.clip, prev_qps)
            ref_poc = poc - slot.poc_offset + slot.ref_offsets[0]
            rec = self._encode(poc, slot.level, ref_poc, qp_val, lam)
            st.lambda_state.record(qp_to_qstep(rec.qp), lam)
            self.plan_rows.append(dict(
                gop=gop_index, poc=poc, level=slot.level, qp=rec.qp, lam=lam,
                target_bpp=bpp_target, actual_bpp=rec.bits / self.pixels))

    # -- top level -----------------------------------------------------------

    def run(self) -> RunResult:
        n = self.cfg.frame_count
        size = self.structure.size

        if self.mode == "fixed_qp":
            self._encode(0, 0, None, self.fixed_qp, lambda_from_qp(self.fixed_qp))
            gop_start = 0
            while gop_start + 1 < n:
                for slot in self.structure.coding_order:
                    poc = gop_start + slot.poc_offset
                    if poc >= n:
                        continue
                    ref_poc = gop_start + slot.ref_offsets[0]
                    self._encode(poc, slot.level, ref_poc, self.fixed_qp,
                                 lambda_from_qp(self.fixed_qp))
                gop_start += size
            return self._finish()

        total_target = self.target_bps * n / self.fps
        qp0 = self._search_intra_qp(INTRA_BOOST * total_target / n)
        rec0 = self._encode(0, 0, None, qp0, lambda_from_qp(qp0))
        bpp0 = rec0.bits / self.pixels
        mu_seed = lambda_from_qp(qp0) / bpp0 ** INIT_PHI
        mu_seed = min(max(mu_seed, MU_RANGE[0]), MU_RANGE[1])
        for slot in self.structure.coding_order:  # seed clip refs and lambda lines
            st = self._level(slot.level)
            st.last_qp = rec0.qp
            st.mu = mu_seed
        self._level(0).mu = mu_seed

        n_gop = max(1, math.ceil((n - 1) / size))
        remaining = max(total_target - rec0.bits, 0.05 * total_target)
        self.budget = GopBudget(r_seq_target=remaining, n_gop=n_gop,
                                window=self.window_gops)

        for g in range(n_gop):
            gop_start = g * size
            pocs_slots = [(gop_start + s.poc_offset, s)
                          for s in self.structure.coding_order
                          if gop_start + s.poc_offset < n]
            full = len(pocs_slots) == size
            warm = gop_start < WARMUP_FRAMES
            if (self.mode == "proposed_rc" and full and not warm
                    and self._run_gop_adaptive(g, pocs_slots)):
                pass
            else:
                self._run_gop_fixed_ratio(g, pocs_slots)
            self.budget.complete_gop()
        return self._finish()

    def _finish(self) -> RunResult:
        self.records.sort(key=lambda r: r.poc)
        total_bits = sum(r.bits for r in self.records)
        actual_bps = total_bits * self.fps / self.cfg.frame_count
        mean_psnr = float(np.mean([min(r.psnr_db, 99.0) for r in self.records]))
        err = None
        if self.mode != "fixed_qp":
            err = bit_err(self.target_bps, actual_bps)
        summary = RunSummary(mode=self.mode, target_bps=self.target_bps,
                             fps=self.fps, total_bits=total_bits,
                             actual_bps=actual_bps, mean_psnr_db=mean_psnr,
                             bit_err_pct=err)
        return RunResult(records=tuple(self.records), summary=summary,
                         plan_rows=tuple(self.plan_rows),
                         trace_rows=tuple(self.trace_rows))
