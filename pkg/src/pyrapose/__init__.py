"""Anytime multi-scale pyramid network for 3D keypoint regression.

A self-contained numpy implementation: a small reverse-mode autodiff
tensor, parameter-free sub-pixel regression heads (soft-argmax, depth
attention, window confidence), the sequential pyramid architecture with
prediction re-injection and cut-anywhere inference, synthetic
stick-figure training data, and an evaluation / benchmarking toolkit.
"""

from .camera import CameraModel, DEPTH_RANGE_MM, inverse_project, project
from .estimator import PoseRegressor
from .heads import (RampWeights, assemble_predictions, confidence_score,
                    depth_attention, make_ramps, soft_argmax_2d,
                    soft_argmax_backward)
from .metrics import error_2d, mpjpe, pck_auc, pck_auc_from_errors
from .network import (BlockPrediction, CutPoint, ModelState, NetworkConfig,
                      count_flops, forward_cut, forward_full, init_model,
                      paper_preset, prediction_positions, toy_preset,
                      valid_cut_points)
from .checkpoint import (CheckpointError, CheckpointFormatError,
                         CheckpointShapeError, CheckpointTruncatedError,
                         load_checkpoint, save_checkpoint)
from .synthetic import (AugmentParams, FigureTemplate, SyntheticSample,
                        augment, default_camera, default_template,
                        generate_dataset, load_dataset, render,
                        sample_figure, save_dataset)
from .tensor import (GradTape, Gradients, Tape, TapeError, Tensor, backward,
                     finite_diff_check)
from .training import (PlateauScheduler, RmsProp, TrainResult, bce_loss,
                       elastic_net_loss, total_loss, train)
from .bench import (EvalReport, anytime_sweep, evaluate_model,
                    quantization_study, root_noise_experiment)

__version__ = "0.1.0"
