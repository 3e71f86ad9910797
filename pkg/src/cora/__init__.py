"""Classical multiscale renormalization ansatz on a periodic 1-D lattice."""
from .lattice import LatticeHierarchy, SiteRef, build_hierarchy, block_of, window
from .stochastic import JointDist, StochasticMap, apply, marginalize, bayes_invert, \
    sample, tensor_product
from .model import CoraModel, Layer, full_joint, layer_semantics, ancestral_sample, \
    random_model, uniform_model, parameter_count
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "LatticeHierarchy", "SiteRef", "build_hierarchy", "block_of", "window",
    "JointDist", "StochasticMap", "apply", "marginalize", "bayes_invert", "sample",
    "tensor_product", "CoraModel", "Layer", "full_joint", "layer_semantics",
    "ancestral_sample", "random_model", "uniform_model", "parameter_count", "BACKEND",
]
