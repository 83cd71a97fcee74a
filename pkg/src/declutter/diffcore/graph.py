"""Static op graphs: construction, forward evaluation, reverse-mode backward.

A graph is a topologically ordered list of nodes over a shared name space of
external inputs, named parameters, and node outputs.  Evaluation is a single
pass with numpy kernels; ``backward`` walks the node list in reverse from a
scalar loss and accumulates gradients for the requested parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import GraphError, ShapeError
from .ops import BACKWARD, FORWARD, OP_KINDS


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    inputs: tuple[str, ...]
    attrs: dict[str, Any] = field(default_factory=dict)


@dataclass
class Graph:
    """Ordered nodes plus declared inputs, parameter shapes, and outputs."""

    nodes: tuple[Node, ...]
    inputs: tuple[str, ...]
    params: dict[str, tuple[int, ...]]
    outputs: dict[str, str]

    def validate(self) -> None:
        known = set(self.inputs) | set(self.params)
        if len(known) != len(self.inputs) + len(self.params):
            raise GraphError("input and parameter names collide")
        for node in self.nodes:
            if node.kind not in OP_KINDS:
                raise GraphError(f"node '{node.name}' has unsupported kind '{node.kind}'")
            if node.name in known:
                raise GraphError(f"duplicate name '{node.name}'")
            for ref in node.inputs:
                if ref not in known:
                    raise GraphError(f"node '{node.name}' references unknown '{ref}'")
            known.add(node.name)
        for public, ref in self.outputs.items():
            if ref not in known:
                raise GraphError(f"output '{public}' references unknown '{ref}'")

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise GraphError(f"no node named '{name}'")


@dataclass
class ForwardPass:
    """All values computed during one forward evaluation."""

    graph: Graph
    values: dict[str, np.ndarray]

    def output(self, name: str) -> np.ndarray:
        return self.values[self.graph.outputs.get(name, name)]

    @property
    def outputs(self) -> dict[str, np.ndarray]:
        return {k: self.values[v] for k, v in self.graph.outputs.items()}


def forward(graph: Graph, inputs: dict[str, np.ndarray], params: dict[str, np.ndarray],
            dtype=np.float32) -> ForwardPass:
    """Evaluate the graph.  Inputs and parameters are cast to ``dtype``.

    Parameters are never mutated; every kernel allocates its result.
    """
    missing = [n for n in graph.inputs if n not in inputs]
    if missing:
        raise GraphError(f"missing inputs: {missing}")
    missing = [n for n in graph.params if n not in params]
    if missing:
        raise GraphError(f"missing parameters: {missing}")
    values: dict[str, np.ndarray] = {}
    for name in graph.inputs:
        values[name] = np.asarray(inputs[name], dtype=dtype)
    for name, shape in graph.params.items():
        p = np.asarray(params[name], dtype=dtype)
        if p.shape != shape:
            raise ShapeError(name, f"parameter has shape {p.shape}, declared {shape}")
        values[name] = p
    for node in graph.nodes:
        xs = [values[ref] for ref in node.inputs]
        values[node.name] = FORWARD[node.kind](node, xs)
    return ForwardPass(graph, values)


def backward(graph: Graph, fwd: ForwardPass, loss: str,
             wrt: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss with respect to parameters.

    ``wrt`` restricts both the result and the traversal: subgraphs that no
    requested parameter feeds are never visited.  Parameters that do not
    reach the loss get zero gradients.
    """
    loss_node = graph.outputs.get(loss, loss)
    if loss_node not in fwd.values:
        raise GraphError(f"unknown loss '{loss}'")
    loss_val = fwd.values[loss_node]
    if loss_val.size != 1:
        raise GraphError(f"loss '{loss}' is not scalar (shape {loss_val.shape})")

    targets = set(graph.params) if wrt is None else set(wrt)
    unknown = targets - set(graph.params)
    if unknown:
        raise GraphError(f"unknown parameters in wrt: {sorted(unknown)}")

    needs: dict[str, bool] = {n: False for n in graph.inputs}
    needs.update({p: p in targets for p in graph.params})
    for node in graph.nodes:
        needs[node.name] = any(needs[r] for r in node.inputs)

    grads: dict[str, np.ndarray] = {loss_node: np.ones_like(loss_val)}
    for node in reversed(graph.nodes):
        gy = grads.pop(node.name, None)
        if gy is None or not needs[node.name]:
            continue
        xs = [fwd.values[r] for r in node.inputs]
        gxs = BACKWARD[node.kind](node, xs, fwd.values[node.name], gy)
        for ref, gx in zip(node.inputs, gxs):
            if gx is None or not needs[ref]:
                continue
            if ref in grads:
                grads[ref] = grads[ref] + gx
            else:
                grads[ref] = gx
    out = {}
    for p in targets:
        g = grads.get(p)
        out[p] = np.ascontiguousarray(g) if g is not None else np.zeros(graph.params[p], dtype=loss_val.dtype)
    return out


class GraphBuilder:
    """Incremental graph construction with auto-named nodes.

    Layer helpers declare their parameters as a side effect; re-declaring a
    parameter name with the same shape reuses it, which is how weight
    sharing across branches is expressed.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._inputs: list[str] = []
        self._params: dict[str, tuple[int, ...]] = {}
        self._outputs: dict[str, str] = {}
        self._names: set[str] = set()
        self._counter = 0

    # -- declarations ------------------------------------------------------

    def input(self, name: str) -> str:
        self._claim(name)
        self._inputs.append(name)
        return name

    def param(self, name: str, shape: Sequence[int]) -> str:
        shape = tuple(int(s) for s in shape)
        if name in self._params:
            if self._params[name] != shape:
                raise GraphError(f"parameter '{name}' redeclared with shape {shape}, was {self._params[name]}")
            return name
        self._claim(name)
        self._params[name] = shape
        return name

    def _claim(self, name: str) -> None:
        if name in self._names:
            raise GraphError(f"name '{name}' already in use")
        self._names.add(name)

    def _op(self, kind: str, inputs: Sequence[str], attrs: dict | None = None,
            name: str | None = None) -> str:
        for ref in inputs:
            if ref not in self._names:
                raise GraphError(f"unknown operand '{ref}'")
        if name is None:
            name = f"{kind}_{self._counter}"
            self._counter += 1
        self._claim(name)
        self._nodes.append(Node(name, kind, tuple(inputs), attrs or {}))
        return name

    # -- ops ----------------------------------------------------------------

    def conv2d(self, x: str, w: str, b: str, stride=1, padding="same", name=None) -> str:
        return self._op("conv2d", (x, w, b), {"stride": stride, "padding": padding}, name)

    def fully_connected(self, x: str, w: str, b: str, name=None) -> str:
        return self._op("fully-connected", (x, w, b), None, name)

    def relu(self, x: str, name=None) -> str:
        return self._op("relu", (x,), None, name)

    def sigmoid(self, x: str, name=None) -> str:
        return self._op("sigmoid", (x,), None, name)

    def softmax(self, x: str, axis: int = -1, name=None) -> str:
        return self._op("softmax", (x,), {"axis": axis}, name)

    def flatten(self, x: str, name=None) -> str:
        return self._op("flatten", (x,), None, name)

    def add(self, a: str, b: str, name=None) -> str:
        return self._op("add", (a, b), None, name)

    def multiply(self, a: str, b: str, name=None) -> str:
        return self._op("multiply", (a, b), None, name)

    def subtract(self, a: str, b: str, name=None) -> str:
        return self._op("subtract", (a, b), None, name)

    def mean(self, x: str, axis: int | None = None, name=None) -> str:
        return self._op("mean", (x,), {"axis": axis}, name)

    def abs(self, x: str, name=None) -> str:
        return self._op("abs", (x,), None, name)

    def square(self, x: str, name=None) -> str:
        return self._op("square", (x,), None, name)

    def concat(self, xs: Sequence[str], axis: int, name=None) -> str:
        return self._op("concat", tuple(xs), {"axis": axis}, name)

    # -- layer helpers -------------------------------------------------------

    def conv_layer(self, x: str, prefix: str, c_in: int, c_out: int,
                   kernel: int = 3, stride=1, padding="same") -> str:
        """Conv with fresh or shared params ``prefix.w`` / ``prefix.b``.

        Half-stride layers store the kernel transposed: [k, k, c_out, c_in].
        """
        if stride == "half":
            w = self.param(f"{prefix}.w", (kernel, kernel, c_out, c_in))
        else:
            w = self.param(f"{prefix}.w", (kernel, kernel, c_in, c_out))
        b = self.param(f"{prefix}.b", (c_out,))
        return self.conv2d(x, w, b, stride=stride, padding=padding)

    def fc_layer(self, x: str, prefix: str, f_in: int, f_out: int) -> str:
        w = self.param(f"{prefix}.w", (f_in, f_out))
        b = self.param(f"{prefix}.b", (f_out,))
        return self.fully_connected(x, w, b)

    # -- finish ---------------------------------------------------------------

    def output(self, public: str, node: str) -> None:
        if node not in self._names:
            raise GraphError(f"unknown node '{node}' for output '{public}'")
        self._outputs[public] = node

    def build(self) -> Graph:
        g = Graph(tuple(self._nodes), tuple(self._inputs), dict(self._params), dict(self._outputs))
        g.validate()
        return g


def init_params(graph: Graph, seed: int) -> dict[str, np.ndarray]:
    """Seeded init: uniform +-sqrt(6/(fan_in+fan_out)) for weights, zeros for biases.

    Tensors of rank >= 2 count as weights; the leading axes of conv kernels
    contribute their product (the receptive field) to both fans.  Draw order
    is the parameter declaration order, so results are reproducible.
    """
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    for name, shape in graph.params.items():
        if len(shape) >= 2:
            receptive = int(np.prod(shape[:-2])) if len(shape) > 2 else 1
            fan_in = receptive * shape[-2]
            fan_out = receptive * shape[-1]
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            out[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
        else:
            out[name] = np.zeros(shape, dtype=np.float32)
    return out
