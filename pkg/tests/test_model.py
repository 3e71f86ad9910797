import numpy as np
import pytest

from cora.lattice import build_hierarchy
from cora.model import (CoraModel, Layer, ancestral_sample, full_joint, layer_semantics,
                        parameter_count, random_model, uniform_model)
from cora.stochastic import JointDist, copy_map, identity_map, uniform_map

from conftest import deterministic_model, empirical, make_model, network_joint, total_variation

COPY_LAYER = Layer(1, [copy_map(2)], [identity_map(2, 2)])


def test_copy_layer_on_point_mass():
    out = layer_semantics(COPY_LAYER, JointDist.point_mass(2, [0, 1]))
    assert out.prob([0, 0, 1, 1]) == 1.0


def test_uniform_layer_absorbs_input(rng):
    layer = Layer(1, [uniform_map(2, 1, 2)], [uniform_map(2, 2, 2)])
    state = JointDist(2, 2, rng.dirichlet(np.ones(4)))
    assert np.allclose(layer_semantics(layer, state).probs, 1 / 16)


def test_copy_layer_keeps_block_constant_structure(rng):
    state = JointDist(2, 3, rng.dirichlet(np.ones(8)))
    out = layer_semantics(COPY_LAYER, state).tensor
    for idx in np.ndindex(*out.shape):
        blocks = [idx[2 * s] == idx[2 * s + 1] for s in range(3)]
        expected = state.tensor[idx[0::2]] if all(blocks) else 0.0
        assert out[idx] == pytest.approx(expected, abs=1e-15)


def test_full_joint_single_copy_layer():
    h = build_hierarchy(2, 1)
    m = CoraModel(h, 2, [COPY_LAYER], JointDist.uniform(2, 1))
    assert np.allclose(full_joint(m).probs, [0.5, 0, 0, 0.5])


def test_full_joint_uniform_and_deterministic():
    h = build_hierarchy(8, 2)
    assert np.allclose(full_joint(uniform_model(h, 2)).probs, 1 / 256)
    det = full_joint(deterministic_model(8, 2))
    assert det.entropy() == 0.0 and det.probs.max() == 1.0


@pytest.mark.parametrize("N, levels, tied", [(4, 2, True), (4, 1, False), (8, 1, True)])
def test_full_joint_matches_network_enumeration(N, levels, tied):
    m = make_model(N, levels, seed=N + levels, tied=tied)
    labels, configs, probs = network_joint(m)
    cols = [labels.index(("site", 0, i)) for i in range(N)]
    flat = np.zeros(len(configs), dtype=np.int64)
    for c in cols:
        flat = flat * 2 + configs[:, c]
    ref = np.bincount(flat, weights=probs, minlength=2 ** N)
    assert np.allclose(full_joint(m).probs, ref, atol=1e-13)


def test_full_joint_cap():
    m = random_model(build_hierarchy(32, 4), 2, 1.0, np.random.default_rng(0))
    with pytest.raises(MemoryError, match="cone_marginal"):
        full_joint(m)


def test_ancestral_sample_deterministic():
    m = deterministic_model(8, 3)
    rows = ancestral_sample(m, np.random.default_rng(0), 50)
    assert len({tuple(r) for r in rows}) == 1
    assert np.array_equal(ancestral_sample(m, np.random.default_rng(1)), rows[0])
    assert full_joint(m).prob(rows[0]) == 1.0


def test_ancestral_sample_uniform_frequencies():
    m = uniform_model(build_hierarchy(4, 2), 2)
    draws = 100_000
    freq = empirical(ancestral_sample(m, np.random.default_rng(4), draws))
    sigma = np.sqrt((1 / 16) * (15 / 16) / draws)
    assert len(freq) == 16
    assert all(abs(f - 1 / 16) < 3 * sigma for f in freq.values())


def test_ancestral_sample_matches_full_joint_untied():
    m = make_model(4, 2, seed=8, tied=False)
    fj = full_joint(m)
    ref = {tuple(int(v) for v in np.unravel_index(k, (2,) * 4)): p for k, p in enumerate(fj.probs)}
    freq = empirical(ancestral_sample(m, np.random.default_rng(5), 100_000))
    assert total_variation(freq, ref) < 0.02


def test_random_model_seeded_and_validated():
    h = build_hierarchy(16, 3)
    a = random_model(h, 2, 0.7, np.random.default_rng(3))
    b = random_model(h, 2, 0.7, np.random.default_rng(3))
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.triangle(0).table, lb.triangle(0).table)
        assert np.array_equal(la.box(0).table, lb.box(0).table)
    assert np.array_equal(a.top_state.probs, b.top_state.probs)
    with pytest.raises(ValueError):
        random_model(h, 2, 0.0, np.random.default_rng(0))


def test_random_model_concentration_limits():
    h = build_hierarchy(4, 2)
    flat = random_model(h, 2, 1e6, np.random.default_rng(0))
    assert np.allclose(flat.layer(1).box(0).table, 0.25, atol=0.01)
    # Dirichlet(0.1) over 4 outcomes: most columns carry a dominant entry
    rng = np.random.default_rng(1)
    peaked = [random_model(h, 2, 0.1, rng) for _ in range(50)]
    cols = np.concatenate([m.layer(j).box(0).table.T for m in peaked for j in (1, 2)])
    assert np.mean(cols.max(axis=1) > 0.5) > 0.5


@pytest.mark.parametrize("tied", [True, False])
def test_parameter_count_formula(tied):
    for N in (4, 8, 16, 32):
        h = build_hierarchy(N, 2)
        m = random_model(h, 2, 1.0, np.random.default_rng(N), tied=tied)
        assert m.num_parameters == parameter_count(h, 2, tied)


def test_untied_parameter_count_linear_in_size():
    n = 3
    counts = [parameter_count(build_hierarchy(N, 3), n, tied=False) - n ** (N // 8)
              for N in (16, 32, 64)]
    assert counts[1] == 2 * counts[0] and counts[2] == 2 * counts[1]


def test_model_validation():
    h = build_hierarchy(8, 2)
    with pytest.raises(ValueError):
        CoraModel(h, 2, [COPY_LAYER], JointDist.uniform(2, 2))
    with pytest.raises(ValueError):
        CoraModel(h, 2, [COPY_LAYER, Layer(2, [copy_map(2)], [identity_map(2, 2)])],
                  JointDist.uniform(2, 3))
    with pytest.raises(ValueError):
        Layer(1, [copy_map(2)], [identity_map(2, 1)])
    with pytest.raises(ValueError):
        Layer(1, [copy_map(2), copy_map(2)], [identity_map(2, 2)] * 2, tied=True)
    bad = Layer(1, [copy_map(2)] * 3, [identity_map(2, 2)] * 3, tied=False)
    with pytest.raises(ValueError):
        layer_semantics(bad, JointDist.uniform(2, 2))
