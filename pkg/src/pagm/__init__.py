"""Position-aware embedding networks for deep graph matching."""

from .assignment import (
    PermutationMatrix,
    brute_force_qap,
    build_affinity,
    hungarian_decode,
    matching_accuracy,
    permutation_loss,
    qap_objective,
    score_matrix,
    sinkhorn,
)
from .data import GraphPair, PairGenConfig, gen_ambiguous_pair, gen_category_dataset, gen_pair, load_dataset, save_dataset
from .embed import ModelParams, embed_forward, embed_backward, grad_check, init_params, layer_forward
from .graph import UNREACHABLE, Graph, bfs_distances, position_coefficients, validate_graph
from .trainer import TrainConfig, adam_step, cross_category, evaluate, train

__version__ = "0.1.0"
