"""Learned K-LUT inference operators: training, pruning, logic expansion,
hardening and netlist emission for small binarized networks."""
from .errors import ConfigError, FormatError, InternalError
from .lutops import TiledLutLayer, expand_layer, feasible, init_coeffs, lagrange_eval, lagrange_grad
from .model import LFC, Network
from .netlist import HardLut, HardNetlist, build_popcount, harden, pack_estimate, parameter_count, simplify
from .experiments import pruning_robustness, robustness_verdict
from .pipeline import PipelineConfig

__all__ = [
    "ConfigError", "FormatError", "InternalError", "TiledLutLayer", "expand_layer", "feasible", "init_coeffs",
    "lagrange_eval", "lagrange_grad", "LFC", "Network", "HardLut", "HardNetlist", "build_popcount", "harden",
    "pack_estimate", "parameter_count", "simplify", "PipelineConfig",
    "pruning_robustness", "robustness_verdict",
]
