"""Minimal reverse-mode autodiff over a static op graph, float32 throughout."""

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, GraphError, OptimError, ShapeError
from .gradcheck import GradCheckReport, grad_check
from .graph import (ForwardPass, Graph, GraphBuilder, Node, backward, forward,
                    init_params)
from .ops import OP_KINDS
from .optim import (OptimState, adam_step, clip_gradients, global_grad_norm,
                    init_optim)

__all__ = [
    "OP_KINDS", "Node", "Graph", "GraphBuilder", "ForwardPass",
    "forward", "backward", "init_params",
    "OptimState", "init_optim", "adam_step", "clip_gradients", "global_grad_norm",
    "grad_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint",
    "GraphError", "ShapeError", "OptimError", "CheckpointError",
]
