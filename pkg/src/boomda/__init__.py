"""Balanced multimodal domain adaptation on synthetic benchmarks.

Per-modality representation learning under an information-bottleneck loss,
source/target correlation alignment, voting pseudo-labels, and a
Pareto-balancing simplex QP (exact, Frank-Wolfe, and closed-form diagonal
solvers) that weights the per-modality alignment losses.
"""

from .balance import (BalanceWeights, GradientBlocks, assemble_gram,
                      closed_form, descent_check, dominance_ratio,
                      kkt_residual, solve_qp_exact_small, solve_qp_frankwolfe,
                      two_pass_gradients)
from .losses import (LossBreakdown, coral_loss, gaussian_entropy, ib_loss,
                     overall_loss, pl_loss)
from .network import ModelParams, RepresentationSet, forward_all, init_model
from .pseudolabel import PseudoLabelSet, pl_accuracy, pseudo_labels
from .synthdata import (DatasetSpec, MultimodalDataset, ShiftSpec, generate,
                        imbalanced_benchmark_spec, load_dataset, save_dataset)
from .trainer import TrainConfig, TrainReport, ablation_suite, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BalanceWeights", "GradientBlocks", "assemble_gram", "closed_form",
    "descent_check", "dominance_ratio", "kkt_residual",
    "solve_qp_exact_small", "solve_qp_frankwolfe", "two_pass_gradients",
    "LossBreakdown", "coral_loss", "gaussian_entropy", "ib_loss",
    "overall_loss", "pl_loss", "ModelParams", "RepresentationSet",
    "forward_all", "init_model", "PseudoLabelSet", "pl_accuracy",
    "pseudo_labels", "DatasetSpec", "MultimodalDataset", "ShiftSpec",
    "generate", "imbalanced_benchmark_spec", "load_dataset", "save_dataset",
    "TrainConfig", "TrainReport", "ablation_suite", "evaluate", "train",
]
