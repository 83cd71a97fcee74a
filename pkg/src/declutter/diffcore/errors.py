"""Error types raised by the autodiff core."""


class GraphError(Exception):
    """Structural problem: bad wiring, unknown names, non-scalar loss."""


class ShapeError(GraphError):
    """Operand shapes incompatible with an op; message names the node."""

    def __init__(self, node: str, message: str):
        self.node = node
        super().__init__(f"node '{node}': {message}")


class OptimError(Exception):
    """Optimizer misuse or non-finite gradients."""


class CheckpointError(Exception):
    """Malformed or truncated checkpoint bytes."""
