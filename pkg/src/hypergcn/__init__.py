"""Adaptive hypergraph convolution networks for skeleton action recognition.

A pure-numpy implementation with hand-written backward passes: hypergraph
normalization, adaptive hypergraph construction, multi-scale hypergraph
convolution with virtual hyper-joints, multi-scale temporal convolution,
the full network with its losses, training, evaluation and ensembling, plus
finite-difference verification and FLOP/parameter accounting.
"""
from .ahc import AhcParams, build_hypergraph, channel_layernorm, embed, pairwise_sq_distances, \
    temporal_pool, topk_incidence
from .config import RunConfig, load_config
from .data import (LAYOUTS, NTU25, TOY5, UCLA20, Dataset, Modality, SkeletonLayout,
                   SkeletonSequence, derive_modality, load_dataset, load_sequence,
                   resample_time, synthetic_sequences, write_sequence, write_synthetic_dataset)
from .errors import *  # noqa: F401,F403
from .gradcheck import GradcheckReport, gradcheck
from .graph import (Hypergraph, build_skeleton_adjacency, edge_degrees, normalize_adjacency,
                    normalize_hypergraph, vertex_degrees)
from .mshgc import MultiScaleHyperGraphConv
from .network import (HyperGCN, ModelConfig, count_params, divergence_loss, estimate_flops,
                      label_smoothed_cross_entropy, load_checkpoint, save_checkpoint)
from .temporal import MultiScaleTemporalConv
from .train import OptimConfig, TrainState, ensemble_scores, fit, lr_at, sgd_step, train_epoch

__version__ = "0.1.0"
