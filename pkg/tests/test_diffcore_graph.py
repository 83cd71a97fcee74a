"""Graph construction, validation, forward/backward plumbing, and init."""

import numpy as np
import pytest

from declutter import diffcore as dc
from declutter.diffcore import GraphError, ShapeError


def small_graph():
    g = dc.GraphBuilder()
    x = g.input("x")
    h = g.relu(g.fully_connected(x, g.param("w", (3, 2)), g.param("b", (2,))))
    g.output("h", h)
    g.output("loss", g.mean(g.square(h)))
    return g.build()


def test_forward_resolves_outputs(rng):
    graph = small_graph()
    x = rng.normal(size=(4, 3)).astype(np.float32)
    params = dc.init_params(graph, 0)
    fwd = dc.forward(graph, {"x": x}, params)
    assert fwd.output("h").shape == (4, 2)
    assert fwd.output("loss").shape == ()
    assert fwd.output("h").dtype == np.float32


def test_forward_missing_input_or_param():
    graph = small_graph()
    with pytest.raises(GraphError):
        dc.forward(graph, {}, dc.init_params(graph, 0))
    with pytest.raises(GraphError):
        dc.forward(graph, {"x": np.zeros((1, 3), np.float32)}, {})


def test_forward_checks_declared_param_shape():
    graph = small_graph()
    params = dc.init_params(graph, 0)
    params["w"] = np.zeros((5, 5), np.float32)
    with pytest.raises(ShapeError):
        dc.forward(graph, {"x": np.zeros((1, 3), np.float32)}, params)


def test_backward_requires_scalar_loss(rng):
    graph = small_graph()
    fwd = dc.forward(graph, {"x": rng.normal(size=(2, 3)).astype(np.float32)},
                     dc.init_params(graph, 0))
    with pytest.raises(GraphError):
        dc.backward(graph, fwd, "h")


def test_backward_unknown_loss_and_wrt(rng):
    graph = small_graph()
    fwd = dc.forward(graph, {"x": rng.normal(size=(2, 3)).astype(np.float32)},
                     dc.init_params(graph, 0))
    with pytest.raises(GraphError):
        dc.backward(graph, fwd, "nope")
    with pytest.raises(GraphError):
        dc.backward(graph, fwd, "loss", wrt=["ghost"])


def test_backward_wrt_filters_targets(rng):
    graph = small_graph()
    fwd = dc.forward(graph, {"x": rng.normal(size=(2, 3)).astype(np.float32)},
                     dc.init_params(graph, 0))
    grads = dc.backward(graph, fwd, "loss", wrt=["w"])
    assert set(grads) == {"w"}
    assert grads["w"].shape == (3, 2)


def test_unreached_param_gets_zero_gradient():
    g = dc.GraphBuilder()
    x = g.input("x")
    used = g.param("w", (2, 2))
    unused = g.param("dead", (3,))
    g.output("loss", g.mean(g.multiply(x, used)))
    g.output("side", g.mean(unused))
    graph = g.build()
    params = dc.init_params(graph, 0)
    fwd = dc.forward(graph, {"x": np.ones((2, 2), np.float32)}, params)
    grads = dc.backward(graph, fwd, "loss")
    assert np.array_equal(grads["dead"], np.zeros(3))


def test_weight_sharing_accumulates(rng):
    # same parameter consumed twice: gradient must be the sum of both paths
    g = dc.GraphBuilder()
    w = g.param("w", (3,))
    g.output("loss", g.mean(g.add(g.square(w), g.multiply(w, w))))
    graph = g.build()
    params = {"w": rng.normal(size=(3,)).astype(np.float32)}
    fwd = dc.forward(graph, {}, params)
    grads = dc.backward(graph, fwd, "loss")
    # d/dw mean(2 w^2) = 4w/3
    assert np.allclose(grads["w"], 4 * params["w"].astype(np.float64) / 3, atol=1e-6)


def test_duplicate_names_rejected():
    g = dc.GraphBuilder()
    g.input("x")
    with pytest.raises(GraphError):
        g.input("x")


def test_unknown_kind_rejected():
    node = dc.Node(name="n", kind="pool", inputs=("x",), attrs={})
    graph = dc.Graph(nodes=[node], inputs=["x"], params={}, outputs={"y": "n"})
    with pytest.raises(GraphError):
        graph.validate()


def test_forward_order_is_topological():
    # nodes appended in declaration order; a forward reference must fail
    node = dc.Node(name="a", kind="relu", inputs=("b",), attrs={})
    node2 = dc.Node(name="b", kind="relu", inputs=("x",), attrs={})
    graph = dc.Graph(nodes=[node, node2], inputs=["x"], params={}, outputs={"y": "a"})
    with pytest.raises(GraphError):
        graph.validate()


def test_init_params_glorot_bounds_and_determinism():
    g = dc.GraphBuilder()
    x = g.input("x")
    h = g.conv_layer(x, "c1", 3, 8, stride=1)
    h = g.fc_layer(g.flatten(h), "f1", 8 * 4, 5)
    g.output("y", h)
    graph = g.build()
    p1 = dc.init_params(graph, 42)
    p2 = dc.init_params(graph, 42)
    p3 = dc.init_params(graph, 43)
    for name in p1:
        assert np.array_equal(p1[name], p2[name])
        assert p1[name].dtype == np.float32
    assert any(not np.array_equal(p1[n], p3[n]) for n in p1)

    w = p1["c1.w"]  # 3x3x3 -> 8: fan_in 27, fan_out 72... receptive folds into both
    fan_in = 3 * 3 * 3
    fan_out = 3 * 3 * 8
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    assert np.all(np.abs(w) <= bound + 1e-7)
    assert w.std() > bound / 4  # actually spread out, not collapsed
    assert np.array_equal(p1["c1.b"], np.zeros(8, np.float32))
    assert np.array_equal(p1["f1.b"], np.zeros(5, np.float32))
