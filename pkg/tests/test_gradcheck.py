"""The checker itself: it must catch planted errors and respect kinks."""

import numpy as np

from declutter import diffcore as dc


def quadratic_graph():
    g = dc.GraphBuilder()
    x = g.input("x")
    h = g.fully_connected(x, g.param("w", (4, 3)), g.param("b", (3,)))
    g.output("loss", g.mean(g.square(h)))
    return g.build()


def test_clean_graph_passes(rng):
    graph = quadratic_graph()
    params = dc.init_params(graph, 0)
    rep = dc.grad_check(graph, {"x": rng.normal(size=(5, 4))}, params)
    assert rep.ok, rep.format()
    assert rep.worst < 1e-6
    assert all(e.checked > 0 for e in rep.entries)


def test_planted_wrong_gradient_is_flagged(rng, monkeypatch):
    # corrupt one backward rule; the checker has to notice
    graph = quadratic_graph()
    params = dc.init_params(graph, 0)
    true_backward = dc.backward

    def lying_backward(g, fwd, loss, wrt=None):
        grads = true_backward(g, fwd, loss, wrt=wrt)
        grads["w"] = grads["w"] * 1.01
        return grads

    monkeypatch.setattr("declutter.diffcore.gradcheck.backward", lying_backward)
    rep = dc.grad_check(graph, {"x": rng.normal(size=(5, 4))}, params)
    assert not rep.ok
    flagged = {e.param for e in rep.entries if e.flagged}
    assert flagged == {"w"}


def test_kink_probes_are_skipped():
    # params sitting exactly on the relu kink: +-eps flips activation state,
    # so every probe of w must be rejected rather than reported as error
    g = dc.GraphBuilder()
    x = g.input("x")
    h = g.relu(g.multiply(x, g.param("w", (3,))))
    g.output("loss", g.mean(h))
    graph = g.build()
    params = {"w": np.zeros(3, np.float32)}
    rep = dc.grad_check(graph, {"x": np.ones(3, np.float32)}, params, eps=1e-4)
    entry = rep.entries[0]
    assert entry.checked == 0
    assert entry.skipped_at_kink == 3
    assert rep.ok  # nothing checked, nothing flagged


def test_away_from_kink_relu_checks_fine(rng):
    g = dc.GraphBuilder()
    x = g.input("x")
    h = g.relu(g.fully_connected(x, g.param("w", (4, 3)), g.param("b", (3,))))
    g.output("loss", g.mean(g.abs(h)))
    graph = g.build()
    params = dc.init_params(graph, 3)
    rep = dc.grad_check(graph, {"x": rng.normal(size=(6, 4)) + 2.0}, params)
    assert rep.ok, rep.format()


def test_format_lists_every_param(rng):
    graph = quadratic_graph()
    rep = dc.grad_check(graph, {"x": rng.normal(size=(2, 4))}, dc.init_params(graph, 0))
    text = rep.format()
    assert "w" in text and "b" in text
    assert "max_rel_err" in text
    assert len(text.splitlines()) == 1 + len(rep.entries)


def test_subsampling_large_params(rng):
    g = dc.GraphBuilder()
    x = g.input("x")
    g.output("loss", g.mean(g.square(g.multiply(x, g.param("w", (40, 40))))))
    graph = g.build()
    params = {"w": rng.normal(size=(40, 40)).astype(np.float32)}
    rep = dc.grad_check(graph, {"x": rng.normal(size=(40, 40))}, params,
                        samples_per_param=8)
    assert rep.entries[0].checked <= 8
    assert rep.ok, rep.format()
