"""Topology-guided convolution toolkit.

Persistent-homology priors, conformable convolutions with learned sampling
offsets, topology-aware segmentation metrics, and a desk-scale training
harness, all on a small numpy autodiff core.
"""

__version__ = "0.1.0"

from .autodiff import Parameter, ShapeError, Tensor, backward
from .conform import ConformLayer, ConvBlock, DeformLayer, offset_sampled_conv
from .gradcheck import GradCheckReport, grad_check
from .metrics import (
    MetricsReport,
    betti_numbers,
    cl_dice,
    dice,
    euler_characteristic,
    evaluate_pair,
)
from .net import MiniNet
from .persistence import (
    PersistenceDiagram,
    PersistencePair,
    compute_ph0,
    filter_generators,
    pairs_to_generators,
)
from .tpg import TpgConfig, compute_prior, tpg_forward, tpg_forward_no_aggregation
from .training import Adam, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

__all__ = [
    "Adam",
    "ConformLayer",
    "ConvBlock",
    "DeformLayer",
    "GradCheckReport",
    "MetricsReport",
    "MiniNet",
    "Parameter",
    "PersistenceDiagram",
    "PersistencePair",
    "ShapeError",
    "Tensor",
    "TpgConfig",
    "TrainConfig",
    "backward",
    "betti_numbers",
    "cl_dice",
    "compute_ph0",
    "compute_prior",
    "dice",
    "euler_characteristic",
    "evaluate",
    "evaluate_pair",
    "filter_generators",
    "grad_check",
    "load_checkpoint",
    "offset_sampled_conv",
    "pairs_to_generators",
    "save_checkpoint",
    "tpg_forward",
    "tpg_forward_no_aggregation",
    "train",
]
