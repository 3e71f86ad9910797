"""Shared fixtures and brute-force oracles.

The oracles here deliberately avoid the package's contraction code: they
enumerate configurations and multiply table entries directly.
"""
import itertools

import numpy as np
import pytest

from cora.lattice import build_hierarchy
from cora.model import CoraModel, Layer, box_inputs, random_model
from cora.stochastic import JointDist, deterministic_map


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_model(N, levels, seed, n=2, concentration=1.0, tied=True):
    return random_model(build_hierarchy(N, levels), n, concentration,
                        np.random.default_rng(seed), tied=tied)


def deterministic_model(N, levels):
    """Flip-copy triangles, swap boxes, all-ones top: a single possible output."""
    h = build_hierarchy(N, levels)
    flip_copy = deterministic_map(2, 1, 2, lambda x: (x[0], 1 - x[0]))
    swap = deterministic_map(2, 2, 2, lambda x: (x[1], x[0]))
    layers = [Layer(j, [flip_copy], [swap]) for j in range(1, levels + 1)]
    top = JointDist.point_mass(2, [1] * h.size(levels))
    return CoraModel(h, 2, layers, top)


def network_variables(model):
    """Labels of every node of the generative network, top first."""
    h = model.hierarchy
    labels = [("site", h.num_levels, i) for i in range(h.size(h.num_levels))]
    for j in range(h.num_levels, 0, -1):
        labels += [("wire", j, i) for i in range(h.size(j - 1))]
        labels += [("site", j - 1, i) for i in range(h.size(j - 1))]
    return labels


def network_joint(model):
    """All configurations of the whole network and their probabilities.

    Returns ``(labels, configs, probs)`` with ``configs`` of shape
    ``(n**V, V)``. Only usable for a couple dozen binary nodes.
    """
    n = model.alphabet
    labels = network_variables(model)
    V = len(labels)
    col = {lab: k for k, lab in enumerate(labels)}
    idx = np.arange(n ** V)
    configs = np.empty((n ** V, V), dtype=np.int64)
    for k in range(V - 1, -1, -1):
        idx, configs[:, k] = np.divmod(idx, n)
    h = model.hierarchy
    top = [col[("site", h.num_levels, i)] for i in range(h.size(h.num_levels))]
    flat = np.zeros(len(configs), dtype=np.int64)
    for c in top:
        flat = flat * n + configs[:, c]
    probs = model.top_state.probs[flat].copy()
    for j in range(1, h.num_levels + 1):
        layer = model.layer(j)
        M = h.size(j)
        for s in range(M):
            z = configs[:, col[("site", j, s)]]
            y = configs[:, col[("wire", j, 2 * s)]] * n + configs[:, col[("wire", j, 2 * s + 1)]]
            probs *= layer.triangle(s).table[y, z]
        for b in range(M):
            a, c = box_inputs(b, 2 * M)
            x = configs[:, col[("wire", j, a)]] * n + configs[:, col[("wire", j, c)]]
            y = configs[:, col[("site", j - 1, a)]] * n + configs[:, col[("site", j - 1, c)]]
            probs *= layer.box(b).table[y, x]
    return labels, configs, probs


def enumerate_layer_posterior(layer, fine, n, prior=None):
    """p(coarse | fine) for one layer by looping over coarse and wire values.

    ``prior`` maps coarse tuples to probabilities (default i.i.d. uniform).
    Returns a dict over coarse tuples.
    """
    size = len(fine)
    M = size // 2
    post = {}
    for z in itertools.product(range(n), repeat=M):
        pz = (1.0 / n ** M) if prior is None else prior(z)
        lik = 0.0
        for wires in itertools.product(range(n), repeat=size):
            p = 1.0
            for s in range(M):
                p *= layer.triangle(s).table[wires[2 * s] * n + wires[2 * s + 1], z[s]]
            for b in range(M):
                a, c = box_inputs(b, size)
                p *= layer.box(b).table[fine[a] * n + fine[c], wires[a] * n + wires[c]]
            lik += p
        post[z] = pz * lik
    total = sum(post.values())
    return {z: v / total for z, v in post.items()}


def total_variation(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical(rows):
    rows = [tuple(int(v) for v in r) for r in rows]
    out = {}
    for r in rows:
        out[r] = out.get(r, 0) + 1
    return {k: v / len(rows) for k, v in out.items()}


# acceptance report: one line per criterion, printed after the run
ACCEPTANCE_RESULTS = {}


def report_criterion(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
