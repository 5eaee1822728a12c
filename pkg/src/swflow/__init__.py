"""Sliced-Wasserstein flows: nonparametric generative modelling by particle transport."""

__version__ = "0.1.0"

from .geometry import DirectionSet, circle_directions, project, sample_directions
from .ot1d import (QuantileTable, build_quantile_table, eval_cdf, eval_quantile,
                   potential_derivative, w2_1d)
from .sketch import (TargetSketch, build_sketch, load_sketch, merge_shard_sketches, save_sketch,
                     shard_projections)
from .metrics import sw2_estimate, sw2_to_sketch, sw2_with_stderr
from .flow import (FlowConfig, FlowLog, NumericalError, TransportMapRecord, drift, euler_step,
                   initial_particles, load_record, replay_flow, run_flow, save_record)
from .data import GmmSpec, gmm_sample, load_matrix, random_gmm_spec, save_matrix

__all__ = [
    "DirectionSet", "circle_directions", "project", "sample_directions",
    "QuantileTable", "build_quantile_table", "eval_cdf", "eval_quantile", "potential_derivative", "w2_1d",
    "TargetSketch", "build_sketch", "load_sketch", "merge_shard_sketches", "save_sketch", "shard_projections",
    "sw2_estimate", "sw2_to_sketch", "sw2_with_stderr",
    "FlowConfig", "FlowLog", "NumericalError", "TransportMapRecord", "drift", "euler_step",
    "initial_particles", "load_record", "replay_flow", "run_flow", "save_record",
    "GmmSpec", "gmm_sample", "load_matrix", "random_gmm_spec", "save_matrix",
]
