"""Channel-replication binary neural network toolkit.

Replicating convolutions widen a binary network's information flow by a
shared factor beta at unchanged parameter and convolution-op budgets; this
package provides the tensor primitives, the dense and XNOR/popcount
execution paths, the graph rewrite that converts a baseline BNN, an
analytic cost model, and a desk-scale straight-through-estimator trainer.
"""

from .binconv import ConvResult, conv2d_dense, conv2d_xnor, quantization_levels, rep_conv
from .builders import build_reactnet_a, build_resnet20, build_toy_bnn
from .costmodel import CostReport, bn_cost_factor, count, diff
from .errors import RepBnnError
from .graph import Graph, Node, infer_shapes
from .model_text import emit_model, parse_model
from .reptran import RepTranConfig, reptran, verify_transform
from .tensors import (
    BitTensor,
    ConvSpec,
    DenseTensor,
    pack_signs,
    repeat_channels,
    repeat_channels_bits,
    reshape_kernel,
    sign_binarize,
    unpack_to_dense,
)

__version__ = "0.1.0"

__all__ = [
    "BitTensor",
    "ConvResult",
    "ConvSpec",
    "CostReport",
    "DenseTensor",
    "Graph",
    "Node",
    "RepBnnError",
    "RepTranConfig",
    "bn_cost_factor",
    "build_reactnet_a",
    "build_resnet20",
    "build_toy_bnn",
    "conv2d_dense",
    "conv2d_xnor",
    "count",
    "diff",
    "emit_model",
    "infer_shapes",
    "pack_signs",
    "parse_model",
    "quantization_levels",
    "rep_conv",
    "repeat_channels",
    "repeat_channels_bits",
    "reptran",
    "reshape_kernel",
    "sign_binarize",
    "unpack_to_dense",
    "verify_transform",
    "__version__",
]
