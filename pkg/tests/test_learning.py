import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cora import learning
from cora.inference import cone_marginal, single_layer_stack, uniform_prior, upper_prior
from cora.lattice import build_hierarchy
from cora.learning import (CoarseGrainError, Dataset, Method, PriorMode, TrainingConfig,
                           ZeroProbabilityWarning, coarse_grain_data, em_update_joint,
                           em_update_layer, fit_layer, train, windowed_loglik)
from cora.model import CoraModel, Layer, ancestral_sample, full_joint, uniform_model
from cora.stochastic import JointDist, StochasticMap, copy_map, identity_map, uniform_map

from conftest import (deterministic_model, empirical, enumerate_layer_posterior, make_model,
                      total_variation)


def teacher_data(model, count, seed):
    x = ancestral_sample(model, np.random.default_rng(seed), count)
    return Dataset(0, x, model.alphabet)


def two_site_model(col0, col1):
    h = build_hierarchy(2, 1)
    tri = StochasticMap(2, 1, 2, np.array([col0, col1]).T)
    return CoraModel(h, 2, [Layer(1, [tri], [identity_map(2, 2)])], JointDist.uniform(2, 1))


PAIR_DATA = Dataset(0, [[0, 0]] * 3 + [[1, 1]], 2)
NO_SMOOTHING = TrainingConfig(window_length=2, smoothing=0.0)


# -- dataset and config validation ------------------------------------------

def test_dataset_rejects_bad_input():
    with pytest.raises(ValueError):
        Dataset(0, np.zeros((0, 4), dtype=int), 2)
    with pytest.raises(ValueError):
        Dataset(0, [[0, 2]], 2)
    with pytest.raises(ValueError):
        Dataset(0, [[0, 1]], 2, weights=[0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(window_length=0)
    with pytest.raises(ValueError):
        TrainingConfig(passes=0)
    with pytest.raises(ValueError):
        TrainingConfig(smoothing=-1)
    assert TrainingConfig(method="joint").method is Method.JOINT


# -- objective ----------------------------------------------------------------

def test_uniform_model_scores_minus_two_ln_two():
    m = uniform_model(build_hierarchy(8, 2), 2)
    data = Dataset(0, np.random.default_rng(0).integers(0, 2, (20, 8)), 2)
    assert windowed_loglik(m, data, 2) == pytest.approx(-2 * np.log(2), abs=1e-12)


def test_deterministic_model_scores_zero_on_its_output():
    m = deterministic_model(8, 2)
    x = ancestral_sample(m, np.random.default_rng(0), 3)
    assert windowed_loglik(m, Dataset(0, x, 2), 3) == pytest.approx(0.0, abs=1e-12)


def test_zero_probability_window_is_flagged():
    m = deterministic_model(8, 2)
    x = ancestral_sample(m, np.random.default_rng(0), 1)
    x[0, 3] ^= 1
    with pytest.warns(ZeroProbabilityWarning, match="sample 0"):
        assert windowed_loglik(m, Dataset(0, x, 2), 2) == -np.inf


def test_weights_act_as_repetition():
    m = make_model(8, 2, seed=3)
    x = ancestral_sample(m, np.random.default_rng(1), 4)
    weighted = Dataset(0, x, 2, weights=[1, 2, 3, 1])
    repeated = Dataset(0, np.repeat(x, [1, 2, 3, 1], axis=0), 2)
    assert windowed_loglik(m, weighted, 3) == pytest.approx(windowed_loglik(m, repeated, 3),
                                                            abs=1e-12)


def test_teacher_score_matches_expected_window_loglik():
    m = make_model(16, 3, seed=21)
    data = teacher_data(m, 500, seed=5)
    w, N = 3, 16
    # exact expectation: mean over starts of sum_x p(x) log p(x)
    expected = 0.0
    per_sample = np.zeros(len(data))
    for start in range(N):
        sites = [(start + t) % N for t in range(w)]
        p = full_joint_window(m, sites)
        nz = p > 0
        expected += float(np.sum(p[nz] * np.log(p[nz]))) / N
        flat = data.samples[:, sites] @ (2 ** np.arange(w - 1, -1, -1))
        per_sample += np.log(p[flat]) / N
    se = per_sample.std(ddof=1) / np.sqrt(len(data))
    score = windowed_loglik(m, data, w)
    assert score == pytest.approx(per_sample.mean(), abs=1e-10)
    assert abs(score - expected) < 2 * se


def full_joint_window(model, sites):
    # dense oracle on a 16-site model: 65536 entries
    t = full_joint(model).tensor
    others = tuple(k for k in range(t.ndim) if k not in sites)
    return np.transpose(t.sum(axis=others), np.argsort(np.argsort(sites))).reshape(-1)


# -- EM steps -------------------------------------------------------------------

def test_em_identical_columns_split_three_to_one():
    m = two_site_model([0.25] * 4, [0.25] * 4)
    layer = em_update_layer(m, PAIR_DATA, 1, NO_SMOOTHING)
    for z in range(2):
        assert np.allclose(layer.triangle(0).table[:, z], [0.75, 0, 0, 0.25], atol=1e-12)


def test_em_hand_computed_posterior_split():
    # posteriors 7/8 and 1/8 under the initial columns
    m = two_site_model([0.7, 0.1, 0.1, 0.1], [0.1, 0.1, 0.1, 0.7])
    tri = em_update_layer(m, PAIR_DATA, 1, NO_SMOOTHING).triangle(0)
    assert np.allclose(tri.table[:, 0], [21 / 22, 0, 0, 1 / 22], atol=1e-12)
    assert np.allclose(tri.table[:, 1], [0.3, 0, 0, 0.7], atol=1e-12)


def test_em_fixed_point_for_deterministic_layer():
    h = build_hierarchy(8, 1)
    layer = Layer(1, [copy_map(2)], [identity_map(2, 2)])
    m = CoraModel(h, 2, [layer], JointDist.uniform(2, 4))
    z = np.random.default_rng(0).integers(0, 2, (30, 4))
    data = Dataset(0, np.repeat(z, 2, axis=1), 2)
    new = em_update_layer(m, data, 1, TrainingConfig(smoothing=0.0))
    assert np.array_equal(new.triangle(0).table, layer.triangle(0).table)
    assert np.array_equal(new.box(0).table, layer.box(0).table)


def test_em_update_returns_stochastic_tables():
    m = make_model(8, 2, seed=1)
    data = teacher_data(make_model(8, 2, seed=2), 50, seed=0)
    layer = em_update_layer(m, data, 1, TrainingConfig())
    for t in layer.triangles + layer.boxes:
        assert np.allclose(t.table.sum(axis=0), 1.0)
        assert np.all(t.table > 0)


@pytest.mark.parametrize("seed", range(10))
def test_em_layer_step_is_monotone(seed):
    rng = np.random.default_rng(seed)
    student = make_model(8, 2, seed=100 + seed, concentration=2.0)
    data = teacher_data(make_model(8, 2, seed=seed, concentration=0.5), 60, seed)
    cfg = TrainingConfig(window_length=int(rng.integers(1, 4)), smoothing=0.0)
    # model prior at layer 1 makes the stack objective the full-model objective
    before = windowed_loglik(student, data, cfg.window_length)
    layer = em_update_layer(student, data, 1, cfg, PriorMode.MODEL)
    after = windowed_loglik(student.replace_layer(layer), data, cfg.window_length)
    assert after - before >= -1e-9


@pytest.mark.parametrize("seed", range(5))
def test_em_joint_step_is_monotone(seed):
    student = make_model(8, 3, seed=200 + seed, concentration=2.0)
    data = teacher_data(make_model(8, 3, seed=seed, concentration=0.5), 60, seed)
    cfg = TrainingConfig(window_length=3, smoothing=0.0)
    before = windowed_loglik(student, data, 3)
    after = windowed_loglik(em_update_joint(student, data, cfg), data, 3)
    assert after - before >= -1e-9


def test_fit_layer_trace_is_monotone_under_uniform_prior():
    student = make_model(16, 2, seed=7, concentration=2.0)
    data = teacher_data(make_model(16, 2, seed=8, concentration=0.5), 100, 0)
    trace = []
    fit_layer(student, data, 1, TrainingConfig(em_iters=8, smoothing=0.0, em_tol=0.0),
              PriorMode.UNIFORM, trace=trace)
    obj = [r.objective for r in trace]
    assert len(obj) == 9
    assert np.all(np.diff(obj) >= -1e-9)


def test_layerwise_and_joint_updates_agree_at_depth_one():
    h = build_hierarchy(8, 1)
    base = make_model(8, 1, seed=11)
    # uniform top so the joint method's prior equals method 1's uniform prior
    m = CoraModel(h, 2, base.layers, JointDist.uniform(2, 4))
    data = teacher_data(make_model(8, 1, seed=12), 80, 3)
    cfg = TrainingConfig(window_length=3, smoothing=1e-3)
    a = em_update_layer(m, data, 1, cfg, PriorMode.UNIFORM)
    b = em_update_joint(m, data, cfg).layer(1)
    for ta, tb in zip(a.triangles + a.boxes, b.triangles + b.boxes):
        assert np.allclose(ta.table, tb.table, atol=1e-12)


def test_layer_window_is_clamped_to_level_size():
    m = make_model(4, 2, seed=0)
    data = Dataset(1, [[0, 1]], 2)
    cfg = TrainingConfig(window_length=3, smoothing=0.0)
    layer = em_update_layer(m, data, 2, cfg)
    assert layer.level == 2


# -- coarse-graining -----------------------------------------------------------

def test_copy_layer_coarse_grains_by_decimation():
    h = build_hierarchy(8, 1)
    m = CoraModel(h, 2, [Layer(1, [copy_map(2)], [identity_map(2, 2)])], JointDist.uniform(2, 4))
    z = np.random.default_rng(0).integers(0, 2, (50, 4))
    data = Dataset(0, np.repeat(z, 2, axis=1), 2)
    for mode in PriorMode:
        up, rejected = coarse_grain_data(m, data, 1, mode, np.random.default_rng(1))
        assert rejected == 0 and up.level == 1
        assert np.array_equal(up.samples, z)


def test_uniform_layer_coarse_grains_to_iid_uniform():
    h = build_hierarchy(8, 1)
    m = CoraModel(h, 2, [Layer(1, [uniform_map(2, 1, 2)], [uniform_map(2, 2, 2)])],
                  JointDist.uniform(2, 4))
    data = Dataset(0, np.zeros((20000, 8), dtype=int), 2)
    up, _ = coarse_grain_data(m, data, 1, PriorMode.UNIFORM, np.random.default_rng(2))
    freq = empirical(up.samples)
    assert len(freq) == 16
    assert total_variation(freq, {k: 1 / 16 for k in freq}) < 0.02
    assert abs(np.corrcoef(up.samples[:, 0], up.samples[:, 1])[0, 1]) < 0.03


@pytest.mark.parametrize("mode", list(PriorMode))
def test_coarse_grain_matches_enumeration(mode):
    m = make_model(8, 2, seed=31)
    fine = ancestral_sample(m, np.random.default_rng(0), 1)[0]
    data = Dataset(0, np.repeat(fine[None], 10000, axis=0), 2)
    up, _ = coarse_grain_data(m, data, 1, mode, np.random.default_rng(4))
    prior = None
    if mode is PriorMode.MODEL:
        upper = Layer(1, m.layer(2).triangles, m.layer(2).boxes)
        level1 = full_joint(CoraModel(build_hierarchy(4, 1), 2, [upper], m.top_state))
        prior = level1.prob
    exact = enumerate_layer_posterior(m.layer(1), list(fine), 2, prior)
    assert total_variation(empirical(up.samples), exact) < 0.02


def test_markov_prior_path_exact_for_product_prior(monkeypatch):
    monkeypatch.setattr(learning, "EXACT_PRIOR_CAP", 0)
    rng = np.random.default_rng(6)
    base = make_model(8, 1, seed=41)
    marg = rng.dirichlet(np.ones(2), size=4)
    top = JointDist(2, 4, np.einsum("a,b,c,d->abcd", *marg).reshape(-1))
    m = base.with_top_state(top)
    fine = ancestral_sample(m, rng, 1)[0]
    data = Dataset(0, np.repeat(fine[None], 10000, axis=0), 2)
    up, _ = coarse_grain_data(m, data, 1, PriorMode.MODEL, np.random.default_rng(5))
    exact = enumerate_layer_posterior(m.layer(1), list(fine), 2, top.prob)
    assert total_variation(empirical(up.samples), exact) < 0.02


def test_rejections_above_one_percent_abort():
    h = build_hierarchy(8, 1)
    m = CoraModel(h, 2, [Layer(1, [copy_map(2)], [identity_map(2, 2)])], JointDist.uniform(2, 4))
    good = np.repeat(np.random.default_rng(0).integers(0, 2, (200, 4)), 2, axis=1)
    bad = good.copy()
    bad[:, 0] ^= 1
    # one bad row in 200 is tolerated and dropped
    up, rejected = coarse_grain_data(m, Dataset(0, np.vstack([good, bad[:1]]), 2), 1,
                                     PriorMode.UNIFORM, np.random.default_rng(0))
    assert rejected == 1 and len(up) == 200
    with pytest.raises(CoarseGrainError):
        coarse_grain_data(m, Dataset(0, np.vstack([good, bad[:5]]), 2), 1,
                          PriorMode.UNIFORM, np.random.default_rng(0))


def test_multiple_draws_carry_fractional_weights():
    m = make_model(8, 2, seed=3)
    data = teacher_data(m, 10, 0)
    up, _ = coarse_grain_data(m, data, 1, PriorMode.UNIFORM, np.random.default_rng(0), draws=4)
    assert len(up) == 40
    assert np.allclose(up.weights, 0.25)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_coarse_grain_reproducible_under_seed(seed):
    m = make_model(8, 2, seed=seed % 97)
    data = teacher_data(m, 20, seed)
    a, _ = coarse_grain_data(m, data, 1, PriorMode.MODEL, np.random.default_rng(seed))
    b, _ = coarse_grain_data(m, data, 1, PriorMode.MODEL, np.random.default_rng(seed))
    assert np.array_equal(a.samples, b.samples)


# -- training driver -------------------------------------------------------------

@pytest.mark.parametrize("method", list(Method))
def test_training_on_one_configuration_concentrates(method):
    x = np.array([[0, 1, 1, 0, 1, 0, 0, 0]] * 40)
    data = Dataset(0, x, 2)
    m = make_model(8, 2, seed=9)
    # method 1 sharpens once per pass as the upper prior improves
    passes = 6 if method is Method.LAYERWISE else 2
    cfg = TrainingConfig(window_length=3, method=method, passes=passes, em_iters=60,
                         smoothing=0.0, seed=1)
    trained = train(m, data, cfg).model
    for start in range(8):
        sites = [(start + t) % 8 for t in range(3)]
        assert cone_marginal(trained, sites).dist.prob(x[0, sites]) >= 0.99


def test_teacher_initialized_joint_training_never_loses_ground():
    teacher = make_model(8, 2, seed=13, concentration=0.5)
    data = teacher_data(teacher, 200, 1)
    cfg = TrainingConfig(method=Method.JOINT, passes=3, em_iters=5, smoothing=0.0, seed=2)
    res = train(teacher, data, cfg)
    objs = [windowed_loglik(teacher, data, 3)] + res.pass_objectives
    assert np.all(np.diff(objs) >= -1e-9)


def test_teacher_initialized_layerwise_training_is_monotone_within_each_fit():
    # passes re-draw the coarse data and switch prior, so only the EM
    # iterations inside each layer fit carry a monotonicity guarantee
    teacher = make_model(8, 2, seed=13, concentration=0.5)
    data = teacher_data(teacher, 200, 1)
    cfg = TrainingConfig(passes=3, em_iters=5, smoothing=0.0, em_tol=0.0, seed=2)
    res = train(teacher, data, cfg)
    for p in (1, 2, 3):
        for j in (1, 2):
            obj = [r.objective for r in res.trace if (r.pass_index, r.layer) == (p, j)]
            assert len(obj) == 6
            assert np.all(np.diff(obj) >= -1e-9)
    assert windowed_loglik(res.model, data, 3) == pytest.approx(max(res.pass_objectives))


def test_train_trace_records():
    m = make_model(8, 2, seed=1)
    data = teacher_data(make_model(8, 2, seed=2), 40, 0)
    res = train(m, data, TrainingConfig(passes=2, em_iters=3, seed=0))
    layers = {r.layer for r in res.trace}
    assert layers == {-1, 1, 2}
    summaries = [r for r in res.trace if r.layer == -1]
    assert [r.pass_index for r in summaries] == [1, 2]
    assert [r.objective for r in summaries] == res.pass_objectives


def test_train_is_deterministic_under_seed():
    m = make_model(8, 2, seed=1)
    data = teacher_data(make_model(8, 2, seed=2), 40, 0)
    cfg = TrainingConfig(passes=2, em_iters=3, seed=5)
    a, b = train(m, data, cfg), train(m, data, cfg)
    assert a.pass_objectives == b.pass_objectives
    assert np.array_equal(a.model.top_state.probs, b.model.top_state.probs)


def test_train_rejects_mismatched_data():
    m = make_model(8, 2, seed=1)
    with pytest.raises(ValueError):
        train(m, Dataset(0, [[0, 1, 0, 1]], 2), TrainingConfig())
    with pytest.raises(ValueError):
        train(m, Dataset(0, [[0] * 8], 2), TrainingConfig(window_length=9))


def test_single_layer_stack_objective_prior_options():
    m = make_model(8, 2, seed=1)
    a = single_layer_stack(m, 1, uniform_prior(2))
    b = single_layer_stack(m, 1, upper_prior(m, 1))
    assert a.sizes == b.sizes == [8, 4]
