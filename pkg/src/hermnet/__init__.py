"""Heterogeneous relational message-passing potentials in numpy."""

from .autodiff import Tensor, grad, no_grad
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .graph import (
    PairKey,
    RelationalGraph,
    TriadKey,
    VertexKey,
    brute_force_graph,
    build_cutoff_graph,
    decompose,
    relation_count,
    relation_keys,
)
from .io import ParseError, load_dataset, parse_deepmd_raw, parse_extxyz, read_extxyz, write_deepmd_raw, write_extxyz
from .model import HermNet, ModelConfig, VocabularyError, forward, init_params, predict
from .structures import AtomicStructure, Dataset, LabeledFrame, split_dataset
from .training import Metrics, TrainConfig, TrainingDiverged, evaluate, fit_reference_energies, train

__version__ = "0.1.0"
