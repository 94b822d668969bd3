"""Part-aligned knowledge distillation for part-structured retrieval models."""

from .distill_boundary import BoundaryParams, ab_loss, ab_loss_multilayer, ab_loss_vectorized, teacher_signs
from .distill_decision import (DkdParams, SoftDistParams, dkd_loss, kl_grad_closed_form, kl_loss,
                               masked_soften, nckd_loss, soften, tckd_loss)
from .errors import (CheckpointError, ClassCountError, ConfigError, GaitKDError, LabelError,
                     MiningError, NumericError, ShapeError, TrainingError)
from .eval_metrics import EvalReport, GapRecord, evaluate, gap_closed, mean_ap, mean_inp, rank_k
from .losses_base import BaseLossWeights, base_objective, ce_loss, triplet_loss
from .multi_teacher import TeacherBank, TeacherOutput, WeightPolicy, sign_vote, teacher_weights
from .objective import HyperParams, MultiTeacherParams, StudentOutputs, ablation_variant, total_loss
from .part_space import AlignedPair, PartEmbeddings, PartLogits, align_parts, part_slice

__version__ = "0.1.0"
