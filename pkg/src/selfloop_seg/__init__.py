"""Semi-supervised binary segmentation with self-loop pseudo-labels.

Unlabeled images get pseudo-labels by recurrently optimizing the encoder on a
jigsaw pretext task: the Q per-iteration predictions are inverse-aligned and
averaged with weights derived from the self-supervised losses. Training mixes
that masked pseudo-label loss with supervised BCE and the jigsaw
cross-entropy.
"""

from .data import (
    Sample,
    SplitDataset,
    f1_score,
    generate_synthetic_dataset,
    load_directory_dataset,
    split_labeled_unlabeled,
)
from .estimators import (
    SelfLoopConfig,
    UncertaintyMap,
    compute_weights,
    ensemble_uncertainty,
    mc_dropout_uncertainty,
    self_loop_uncertainty,
    softmax_pseudo_label,
)
from .evaluation import evaluate_model, evaluate_pseudo_labels
from .jigsaw import JigsawTransform, identity_transform, random_transform
from .losses import NumericError, seg_loss, self_supervised_loss, uncertainty_guided_loss
from .network import NetworkConfig, SegNetwork, build_network, load_checkpoint, save_checkpoint
from .permutations import (
    Permutation,
    PermutationSet,
    enumerate_candidates,
    hamming_distance,
    sample_iteration_permutations,
    select_max_hamming_subset,
)
from .training import StepMetrics, TrainConfig, train, train_step

__version__ = "0.1.0"
