"""Rate control built on a composite discrete Cauchy coefficient model.

The package fits transform-coefficient distributions, derives analytic
rate-vs-quantization and distortion-vs-quantization predictors from them,
allocates GOP bit budgets with dependency-aware influence factors, and
validates the whole loop inside a small block-transform codec simulator.
"""

from .allocator import (ClipRule, ClipTable, DependencyFrame, DependencyGraph,
                        FrameContext, FramePlan, GopBudget, GopPlan,
                        allocate_gop, clip_qp, clip_table_for,
                        estimate_pi, external_cost_reindex, gop_target,
                        influence_factor)
from .codec import (ProbeRow, SequenceConfig, SimFrameRecord, bit_err,
                    dependency_probe, encode_frame, generate_synthetic,
                    load_sequence, write_sequence)
from .coeff_model import (BaselineModel, CoefficientHistogram,
                          CompositeCauchyModel, alpha_from_beta,
                          build_histogram, fit_baseline, fit_composite_cauchy,
                          kl_divergence, kl_vs_histogram,
                          read_coefficient_dump, sample_levels,
                          write_histogram_csv)
from .control import RunResult, RunSummary, run_sequence
from .gop import LD4, RA16, GopFrameSlot, GopStructure, gop_structure
from .quant import (DistortionProfile, EntropyProfile, QuantizerConfig,
                    distortion, entropy, lambda_from_qp, level_prob_integral,
                    level_prob_sum, level_probs_integral, level_probs_sum,
                    qp_from_lambda, qp_to_qstep, quantize_hard, rd_curve_rows)
from .rd_models import (FrameCalibration, HyperbolicFit, LambdaState,
                        estimate_distortion, estimate_rate, fit_hyperbolic,
                        lambda_at, stabilize_lambda)

__version__ = "0.1.0"
