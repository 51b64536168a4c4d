"""Minimal block-transform codec.

Frames are 8-bit luma planes.  Prediction is co-located (the reconstructed
reference pixel at the same position); residual blocks go through an
orthonormal 2D DCT and hard-decision quantization.  Bit accounting is the
empirical order-0 entropy of the quantized levels plus fixed per-block and
per-frame header overhead, which keeps the bits-vs-entropy relationship
linear by construction.  Blocks whose residual energy falls under a
threshold are SKIP-coded: zero residual bits, reconstruction equals the
reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft

from .coeff_model import CoefficientHistogram, build_histogram
from .gop import gop_structure
from .quant import QuantizerConfig, lambda_from_qp, qp_to_qstep, quantize_hard

HEADER_BITS_PER_BLOCK = 0.5
HEADER_BITS_PER_FRAME = 64.0
SKIP_THRESHOLD_DEFAULT = 1.0  # mean squared residual per pixel
CODING_L_MAX = 1 << 15  # quantizer clamp while actually coding (never binding)


@dataclass(frozen=True)
class SequenceConfig:
    width: int
    height: int
    frame_count: int
    gop_structure: str = "LD4"
    block_size: int = 8
    bit_depth: int = 8
    intra_period: int | None = None

    def __post_init__(self) -> None:
        if self.width % self.block_size or self.height % self.block_size:
            raise ValueError("width and height must be divisible by block_size")
        if self.bit_depth != 8:
            raise ValueError("only 8-bit luma is supported")
        gop = gop_structure(self.gop_structure)
        if self.frame_count < gop.size:
            raise ValueError(f"frame_count must be at least the GOP size ({gop.size})")

    @property
    def pixels_per_frame(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class SimFrameRecord:
    """Per-frame simulator output feeding the next control step."""

    poc: int
    level: int
    slice_type: str
    qp: int
    lam: float
    bits: float
    header_bits: float
    psnr_db: float
    mse: float
    skip_ratio: float
    mse_nonskip: float
    mse_skip: float
    coeff_histogram: CoefficientHistogram | None

    def bits_per_pixel(self, pixels: int) -> float:
        return self.bits / pixels

    def header_per_pixel(self, pixels: int) -> float:
        return self.header_bits / pixels


def load_sequence(path: str, cfg: SequenceConfig) -> np.ndarray:
    """Read raw planar 8-bit luma frames as a (frames, height, width) array."""
    expected = cfg.width * cfg.height * cfg.frame_count
    data = np.fromfile(path, dtype=np.uint8)
    if data.size != expected:
        raise ValueError(
            f"size mismatch for {path}: expected {expected} bytes, got {data.size}")
    return data.reshape(cfg.frame_count, cfg.height, cfg.width)


def write_sequence(frames: np.ndarray, path: str) -> None:
    np.asarray(frames, dtype=np.uint8).tofile(path)


def generate_synthetic(kind: str, cfg: SequenceConfig, seed: int, *,
                       velocity: tuple[float, float] = (1.5, 0.75),
                       rho: float = 0.9) -> np.ndarray:
    """Deterministic synthetic luma sequences.

    moving_blob: static textured background with a bright Gaussian blob
    gliding across it.  textured_pan: a camera pan over a fixed random
    texture.  noise_ar1: temporally AR(1)-correlated noise with coefficient
    ``rho`` (0 gives independent frames).
    """
    rng = np.random.default_rng(seed)
    h, w, t = cfg.height, cfg.width, cfg.frame_count
    if kind == "moving_blob":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        background = 96.0 + 48.0 * xx / w + 24.0 * yy / h
        background += _smooth_noise(rng, h, w, passes=2) * 12.0
        radius = min(h, w) / 6.0
        frames = np.empty((t, h, w), dtype=np.uint8)
        for i in range(t):
            cy = (h / 2.0 + velocity[1] * i) % h
            cx = (w / 2.0 + velocity[0] * i) % w
            d2 = (yy - cy) ** 2 + (xx - cx) ** 2
            blob = 90.0 * np.exp(-d2 / (2.0 * radius * radius))
            frames[i] = np.clip(background + blob, 0, 255).astype(np.uint8)
        return frames
    if kind == "textured_pan":
        vx = int(round(velocity[0])) or 1
        vy = int(round(velocity[1]))
        canvas = _smooth_noise(rng, h + abs(vy) * t + 1, w + abs(vx) * t + 1, passes=1)
        canvas = 128.0 + 110.0 * canvas
        frames = np.empty((t, h, w), dtype=np.uint8)
        for i in range(t):
            oy = abs(vy) * i
            ox = abs(vx) * i
            frames[i] = np.clip(canvas[oy:oy + h, ox:ox + w], 0, 255).astype(np.uint8)
        return frames
    if kind == "noise_ar1":
        sigma = 40.0
        frames = np.empty((t, h, w), dtype=np.uint8)
        state = sigma * rng.standard_normal((h, w))
        frames[0] = np.clip(128.0 + state, 0, 255).astype(np.uint8)
        innov_scale = sigma * math.sqrt(max(1.0 - rho * rho, 0.0))
        for i in range(1, t):
            state = rho * state + innov_scale * rng.standard_normal((h, w))
            frames[i] = np.clip(128.0 + state, 0, 255).astype(np.uint8)
        return frames
    raise ValueError(f"unknown synthetic kind: {kind!r}")


def _smooth_noise(rng: np.random.Generator, h: int, w: int, passes: int) -> np.ndarray:
    """Zero-mean noise field smoothed by repeated 3x3 box filtering."""
    field = rng.uniform(-1.0, 1.0, size=(h, w))
    kernel = np.ones((3, 3)) / 9.0
    for _ in range(passes):
        field = _conv2_same(field, kernel)
    return field


def _conv2_same(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    pad = k.shape[0] // 2
    padded = np.pad(a, pad, mode="edge")
    out = np.zeros_like(a)
    for dy in range(k.shape[0]):
        for dx in range(k.shape[1]):
            out += k[dy, dx] * padded[dy:dy + a.shape[0], dx:dx + a.shape[1]]
    return out


def _to_blocks(frame: np.ndarray, bs: int) -> np.ndarray:
    h, w = frame.shape
    return (frame.reshape(h // bs, bs, w // bs, bs)
            .swapaxes(1, 2)
            .reshape(-1, bs, bs))


def _from_blocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    bs = blocks.shape[-1]
    return (blocks.reshape(h // bs, w // bs, bs, bs)
            .swapaxes(1, 2)
            .reshape(h, w))


def _empirical_entropy_bits(levels: np.ndarray) -> float:
    """Order-0 entropy of the level stream, bits per symbol."""
    if levels.size == 0:
        return 0.0
    _, counts = np.unique(levels, return_counts=True)
    p = counts / levels.size
    return float(-np.sum(p * np.log2(p)))


def encode_frame(frame: np.ndarray, reference: np.ndarray | None, qp: int,
                 slice_type: str, skip_threshold: float = SKIP_THRESHOLD_DEFAULT,
                 block_size: int = 8, *, poc: int = 0, level: int = 0,
                 lam: float | None = None) -> tuple[SimFrameRecord, np.ndarray]:
    """Encode one frame against a reconstructed reference.

    Returns the frame record (bits, distortions, SKIP share, coefficient
    histogram) and the reconstructed frame used as reference downstream.
    """
    if not 1 <= qp <= 51:
        raise ValueError(f"qp {qp} outside [1, 51]")
    if slice_type == "B" and reference is None:
        raise ValueError("B slice requires a reference frame")

    h, w = frame.shape
    orig = frame.astype(np.float64)
    if slice_type == "I":
        prediction = np.full((h, w), 128.0)
    else:
        prediction = reference.astype(np.float64)

    residual = orig - prediction
    blocks = _to_blocks(residual, block_size)
    n_blocks = blocks.shape[0]
    block_energy = np.mean(blocks ** 2, axis=(1, 2))
    skip_mask = (block_energy < skip_threshold) if slice_type == "B" \
        else np.zeros(n_blocks, dtype=bool)

    cfg = QuantizerConfig.for_slice(qp_to_qstep(qp), slice_type, l_max=CODING_L_MAX)
    coded = ~skip_mask
    recon_blocks = np.zeros_like(blocks)
    histogram: CoefficientHistogram | None = None
    residual_bits = 0.0
    if np.any(coded):
        coeffs = scipy.fft.dctn(blocks[coded], axes=(1, 2), norm="ortho")
        levels = quantize_hard(coeffs, cfg)
        recon_blocks[coded] = scipy.fft.idctn(levels * cfg.q_step, axes=(1, 2),
                                              norm="ortho")
        flat = levels.ravel()
        residual_bits = _empirical_entropy_bits(flat) * flat.size
        histogram = build_histogram(np.rint(coeffs.ravel()).astype(np.int64))

    recon = prediction + _from_blocks(recon_blocks, h, w)
    recon = np.clip(np.rint(recon), 0.0, 255.0)

    err2 = (orig - recon) ** 2
    pixel_skip = _from_blocks(
        np.repeat(skip_mask, block_size * block_size)
        .reshape(-1, block_size, block_size).astype(np.float64), h, w) > 0.5
    total_px = h * w
    skip_px = int(np.count_nonzero(pixel_skip))
    mse = float(np.mean(err2))
    mse_skip = float(np.mean(err2[pixel_skip])) if skip_px else 0.0
    mse_nonskip = float(np.mean(err2[~pixel_skip])) if skip_px < total_px else 0.0

    header_bits = HEADER_BITS_PER_BLOCK * n_blocks + HEADER_BITS_PER_FRAME
    bits = header_bits + residual_bits
    psnr = 10.0 * math.log10(255.0 ** 2 / mse) if mse > 0.0 else math.inf

    record = SimFrameRecord(
        poc=poc, level=level, slice_type=slice_type, qp=qp,
        lam=lambda_from_qp(qp) if lam is None else lam,
        bits=bits, header_bits=header_bits, psnr_db=psnr, mse=mse,
        skip_ratio=skip_px / total_px, mse_nonskip=mse_nonskip,
        mse_skip=mse_skip, coeff_histogram=histogram)
    return record, recon.astype(np.uint8)


def bit_err(target_bps: float, actual_bps: float) -> float:
    """Rate-control accuracy: |actual - target| / target * 100."""
    if target_bps <= 0.0:
        raise ValueError("target bit-rate must be positive")
    return abs(actual_bps - target_bps) / target_bps * 100.0


@dataclass(frozen=True)
class ProbeRow:
    ref_qp: int
    ref_mse: float
    cur_bits_bpp: float
    cur_mse: float
    cur_rd_cost: float


def dependency_probe(frames: Sequence[np.ndarray] | np.ndarray, cfg: SequenceConfig,
                     probe_qp: int, ref_qp_range: Sequence[int],
                     skip_threshold: float = SKIP_THRESHOLD_DEFAULT) -> list[ProbeRow]:
    """Measure how reference quality propagates into the next frame.

    The first frame is intra-coded at every QP in ``ref_qp_range``; the
    second frame is coded at ``probe_qp`` against each of those
    reconstructions.  The RD cost uses the probe QP's lambda, with rate in
    bits per pixel.
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames to probe dependencies")
    if len(ref_qp_range) == 0:
        raise ValueError("ref_qp_range must be non-empty")
    lam = lambda_from_qp(probe_qp)
    pixels = cfg.pixels_per_frame
    rows = []
    for ref_qp in ref_qp_range:
        ref_rec, ref_recon = encode_frame(frames[0], None, ref_qp, "I",
                                          skip_threshold, cfg.block_size)
        cur_rec, _ = encode_frame(frames[1], ref_recon, probe_qp, "B",
                                  skip_threshold, cfg.block_size)
        bpp = cur_rec.bits / pixels
        rows.append(ProbeRow(ref_qp=ref_qp, ref_mse=ref_rec.mse,
                             cur_bits_bpp=bpp, cur_mse=cur_rec.mse,
                             cur_rd_cost=cur_rec.mse + lam * bpp))
    return rows
