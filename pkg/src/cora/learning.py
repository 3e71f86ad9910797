"""Training from samples.

The objective is the composite likelihood of all periodic windows of a fixed
length: the mean log-probability the model's exact window marginals assign
to the data. It is maximized by EM with tied multinomial tables, either

* layer by layer (``Method.LAYERWISE``): layer ``j`` is fitted to a level
  ``j-1`` dataset under a fixed prior on level ``j`` (i.i.d. uniform in the
  first pass, the upper layers' own prediction afterwards), then the data is
  carried one level up by drawing from the layer's exact Bayesian inverse; or
* jointly (``Method.JOINT``): all layers and the top state are updated
  together against level-0 windows.
"""
from __future__ import annotations

import enum
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .inference import (Stack, cone_marginal, cone_statistics, level_marginal, model_stack,
                        single_layer_stack, uniform_prior, upper_prior)
from .model import CoraModel, Layer, box_inputs
from .stochastic import JointDist, StochasticMap

log = logging.getLogger(__name__)

# above this many coarse configurations the model prior is replaced by a
# nearest-neighbour Markov ring built from its exact pair marginals
EXACT_PRIOR_CAP = 4096
MAX_REJECT_FRACTION = 0.01


class Method(str, enum.Enum):
    LAYERWISE = "layerwise"
    JOINT = "joint"


class PriorMode(str, enum.Enum):
    UNIFORM = "uniform"
    MODEL = "model"


class CoarseGrainError(RuntimeError):
    """Too many samples had zero probability under the layer being inverted."""


class ZeroProbabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    level: int
    samples: np.ndarray
    alphabet: int
    weights: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
            raise ValueError("dataset must be a non-empty 2-D array of samples")
        if x.min() < 0 or x.max() >= self.alphabet:
            raise ValueError(f"symbols must lie in [0, {self.alphabet})")
        w = np.ones(x.shape[0]) if self.weights is None else \
            np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != x.shape[0] or np.any(w <= 0):
            raise ValueError("weights must be positive, one per sample")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def size(self) -> int:
        return self.samples.shape[1]


@dataclass
class TrainingConfig:
    window_length: int = 3
    method: Method = Method.LAYERWISE
    passes: int = 1
    em_iters: int = 20
    em_tol: float = 1e-6
    smoothing: float = 1e-3
    seed: int = 0
    posterior_draws: int = 1

    def __post_init__(self):
        self.method = Method(self.method)
        if self.window_length < 1:
            raise ValueError("window length must be at least 1")
        if self.passes < 1 or self.em_iters < 0 or self.posterior_draws < 1:
            raise ValueError("passes and posterior draws must be >= 1, em_iters >= 0")
        if self.smoothing < 0 or self.em_tol < 0:
            raise ValueError("smoothing and em_tol must be non-negative")


@dataclass(frozen=True)
class TraceRecord:
    """One objective evaluation.

    ``layer`` is the trained layer (method 1) or 0 for joint updates;
    ``iteration`` counts completed EM steps. Pass summaries use layer and
    iteration -1 and report the full model's level-0 objective.
    """

    pass_index: int
    layer: int
    iteration: int
    objective: float
    wall_time: float = 0.0


@dataclass
class TrainResult:
    model: CoraModel
    trace: list[TraceRecord] = field(default_factory=list)
    pass_objectives: list[float] = field(default_factory=list)
    rejected: int = 0


# --------------------------------------------------------------------------
# objective

def _check_data(model: CoraModel, data: Dataset, level: int):
    if data.alphabet != model.alphabet:
        raise ValueError("dataset alphabet differs from model alphabet")
    if data.size != model.hierarchy.size(level):
        raise ValueError(
            f"dataset rows have {data.size} sites, level {level} has "
            f"{model.hierarchy.size(level)}")


def windowed_loglik(model: CoraModel, data: Dataset, w: int) -> float:
    """Mean log-probability (nats) of every periodic length-``w`` window of every sample.

    Returns ``-inf`` and warns with the first offending (sample, window start)
    if some window has probability zero.
    """
    _check_data(model, data, 0)
    N = data.size
    if not 1 <= w <= N:
        raise ValueError(f"window length must be in [1, {N}]")
    n = model.alphabet
    total = 0.0
    for start in range(N):
        sites = [(start + t) % N for t in range(w)]
        p = cone_marginal(model, sites).dist.probs
        flat = np.zeros(len(data), dtype=np.int64)
        for q in sites:
            flat = flat * n + data.samples[:, q]
        pw = p[flat]
        if np.any(pw <= 0):
            i = int(np.flatnonzero(pw <= 0)[0])
            warnings.warn(f"window starting at {start} of sample {i} has probability zero",
                          ZeroProbabilityWarning, stacklevel=2)
            return float("-inf")
        total += float(np.dot(data.weights, np.log(pw)))
    return total / (float(data.weights.sum()) * N)


def _stack_objective(stack: Stack, data: Dataset, w: int):
    stats = cone_statistics(stack, data.samples, data.weights, w)
    if stats.zero_windows:
        return stats, float("-inf")
    return stats, stats.loglik / stats.weight


# --------------------------------------------------------------------------
# M-step

def _reestimate(old: StochasticMap, counts: np.ndarray, alpha: float) -> StochasticMap:
    n = old.alphabet
    c = counts.reshape(n ** old.out_arity, n ** old.in_arity) + alpha
    tot = c.sum(axis=0)
    table = np.where(tot > 0, c / np.where(tot > 0, tot, 1.0), old.table)
    return StochasticMap(n, old.in_arity, old.out_arity, table)


def _reestimate_layer(layer: Layer, tri_counts, box_counts, alpha: float) -> Layer:
    tris = [_reestimate(t, c, alpha) for t, c in zip(layer.triangles, tri_counts)]
    boxes = [_reestimate(b, c, alpha) for b, c in zip(layer.boxes, box_counts)]
    return Layer(layer.level, tris, boxes, layer.tied)


def _reestimate_top(top: JointDist, counts: np.ndarray, alpha: float) -> JointDist:
    c = counts.reshape(-1) + alpha
    if c.sum() <= 0:
        return top
    return JointDist(top.alphabet, top.arity, c / c.sum())


def _layer_window(model: CoraModel, j: int, w: int) -> int:
    return min(w, model.hierarchy.size(j - 1))


def _prior_for(model: CoraModel, j: int, mode: PriorMode):
    if PriorMode(mode) is PriorMode.UNIFORM:
        return uniform_prior(model.alphabet)
    return upper_prior(model, j)


def em_update_layer(model: CoraModel, data: Dataset, layer_index: int, config: TrainingConfig,
                    prior_mode: PriorMode = PriorMode.UNIFORM) -> Layer:
    """One EM step on layer ``layer_index`` against a dataset on the level below it."""
    j = layer_index
    _check_data(model, data, j - 1)
    stack = single_layer_stack(model, j, _prior_for(model, j, prior_mode))
    stats = cone_statistics(stack, data.samples, data.weights,
                            _layer_window(model, j, config.window_length))
    return _reestimate_layer(model.layer(j), stats.tri[0], stats.box[0], config.smoothing)


def em_update_joint(model: CoraModel, data: Dataset, config: TrainingConfig) -> CoraModel:
    """One synchronous EM step on every layer and the top state."""
    _check_data(model, data, 0)
    stack = model_stack(model)
    stats = cone_statistics(stack, data.samples, data.weights, config.window_length)
    return _apply_joint(model, stats, config.smoothing)


def _apply_joint(model: CoraModel, stats, alpha: float) -> CoraModel:
    layers = [_reestimate_layer(L, stats.tri[k], stats.box[k], alpha)
              for k, L in enumerate(model.layers)]
    top = _reestimate_top(model.top_state, stats.top, alpha)
    return CoraModel(model.hierarchy, model.alphabet, layers, top)


def _converged(prev: float, cur: float, tol: float) -> bool:
    return abs(cur - prev) <= tol * max(abs(prev), 1e-300)


def fit_layer(model: CoraModel, data: Dataset, j: int, config: TrainingConfig,
              prior_mode: PriorMode = PriorMode.UNIFORM, pass_index: int = 1,
              trace: list | None = None) -> CoraModel:
    """Run up to ``config.em_iters`` EM steps on layer ``j``; the prior stays fixed."""
    _check_data(model, data, j - 1)
    prior = _prior_for(model, j, prior_mode)
    w = _layer_window(model, j, config.window_length)
    t0 = time.perf_counter()
    prev = None
    for it in range(config.em_iters + 1):
        stack = single_layer_stack(model, j, prior)
        stats, obj = _stack_objective(stack, data, w)
        if trace is not None:
            trace.append(TraceRecord(pass_index, j, it, obj, time.perf_counter() - t0))
        log.debug("pass %d layer %d iter %d objective %.12f", pass_index, j, it, obj)
        if it == config.em_iters or (prev is not None and _converged(prev, obj, config.em_tol)):
            break
        prev = obj
        model = model.replace_layer(
            _reestimate_layer(model.layer(j), stats.tri[0], stats.box[0], config.smoothing))
    return model


def fit_joint(model: CoraModel, data: Dataset, config: TrainingConfig, pass_index: int = 1,
              trace: list | None = None) -> CoraModel:
    _check_data(model, data, 0)
    t0 = time.perf_counter()
    prev = None
    for it in range(config.em_iters + 1):
        stats, obj = _stack_objective(model_stack(model), data, config.window_length)
        if trace is not None:
            trace.append(TraceRecord(pass_index, 0, it, obj, time.perf_counter() - t0))
        if it == config.em_iters or (prev is not None and _converged(prev, obj, config.em_tol)):
            break
        prev = obj
        model = _apply_joint(model, stats, config.smoothing)
    return model


# --------------------------------------------------------------------------
# coarse-graining

def _block_unary(layer: Layer, M: int, n: int, prior1: np.ndarray | None) -> np.ndarray:
    """``phi[s, (z, wa, wb)] = prior(z) * T_s(wa, wb | z)``."""
    phi = np.empty((M, n ** 3))
    for s in range(M):
        t = layer.triangle(s).tensor  # (wa, wb, z)
        u = np.transpose(t, (2, 0, 1))
        if prior1 is not None:
            u = u * prior1[s][:, None, None]
        phi[s] = u.reshape(-1)
    return phi


def _layer_likelihood(layer: Layer, fine: np.ndarray, n: int, M: int) -> np.ndarray:
    """``L[i, z]``: probability of fine row ``i`` given each coarse configuration ``z``."""
    size = 2 * M
    zid = list(range(1, M + 1))
    wid = list(range(M + 1, 3 * M + 1))
    ops = []
    for s in range(M):
        ops += [layer.triangle(s).tensor, [wid[2 * s], wid[2 * s + 1], zid[s]]]
    for b in range(M):
        a, c = box_inputs(b, size)
        bt = layer.box(b).table  # (out, in)
        bx = bt[fine[:, a] * n + fine[:, c]].reshape(-1, n, n)
        ops += [bx, [0, wid[a], wid[c]]]
    return np.einsum(*ops, [0] + zid, optimize="greedy").reshape(fine.shape[0], -1)


def _exact_posterior_draw(model: CoraModel, layer: Layer, fine: np.ndarray, j: int,
                          unif: np.ndarray):
    n = model.alphabet
    M = model.hierarchy.size(j)
    prior = level_marginal(model, j, range(M)).probs
    z = np.empty((fine.shape[0], M), dtype=np.int64)
    logev = np.empty(fine.shape[0])
    step = max(1, (1 << 22) // n ** M)
    for lo in range(0, fine.shape[0], step):
        hi = min(fine.shape[0], lo + step)
        post = _layer_likelihood(layer, fine[lo:hi], n, M) * prior[None, :]
        ev = post.sum(axis=1)
        with np.errstate(divide="ignore"):
            logev[lo:hi] = np.log(ev)
        cum = np.cumsum(post, axis=1)
        k = (cum <= (unif[lo:hi] * cum[:, -1])[:, None]).sum(axis=1)
        k = np.minimum(k, n ** M - 1)
        for s in range(M - 1, -1, -1):
            k, z[lo:hi, s] = np.divmod(k, n)
    z[~np.isfinite(logev)] = -1
    return z, logev


def posterior_draws(model: CoraModel, fine: np.ndarray, j: int, prior_mode: PriorMode,
                    rng: np.random.Generator):
    """One exact draw from p(level j | level j-1 row) per row.

    Returns ``(coarse, log_evidence)``; rows with zero evidence get ``-inf``
    and a row of -1.
    """
    n = model.alphabet
    M = model.hierarchy.size(j)
    layer = model.layer(j)
    fine = np.ascontiguousarray(fine, dtype=np.int64)
    unif = rng.random((fine.shape[0], M))
    tables = np.stack([b.table for b in layer.boxes])
    if PriorMode(prior_mode) is PriorMode.UNIFORM:
        phi = _block_unary(layer, M, n, np.full((M, n), 1.0 / n))
        pair = np.ones((M, n, n))
        return kernels.ring_ffbs(phi, tables, pair, fine, unif)
    if n ** M <= EXACT_PRIOR_CAP:
        return _exact_posterior_draw(model, layer, fine, j, unif[:, 0].copy())
    # Markov ring from exact neighbour-pair marginals of the upper model
    pair = np.empty((M, n, n))
    for s in range(M):
        p2 = level_marginal(model, j, [s, (s + 1) % M]).tensor
        p1 = p2.sum(axis=1, keepdims=True)
        pair[s] = np.divide(p2, p1, out=np.zeros_like(p2), where=p1 > 0)
    phi = _block_unary(layer, M, n, None)
    return kernels.ring_ffbs(phi, tables, pair, fine, unif)


def coarse_grain_data(model: CoraModel, data: Dataset, layer_index: int,
                      prior_mode: PriorMode, rng: np.random.Generator,
                      draws: int = 1) -> tuple[Dataset, int]:
    """Carry a level ``j-1`` dataset to level ``j`` through layer ``j``'s Bayesian inverse.

    Each sample is replaced by ``draws`` posterior draws of weight ``1/draws``.
    Samples the layer cannot produce are dropped and counted; more than 1%
    raises :class:`CoarseGrainError`. Returns ``(dataset, rejected)``.
    """
    j = layer_index
    _check_data(model, data, j - 1)
    fine = np.repeat(data.samples, draws, axis=0)
    weights = np.repeat(data.weights / draws, draws)
    z, logev = posterior_draws(model, fine, j, prior_mode, rng)
    bad = ~np.isfinite(logev)
    rejected = int(bad.reshape(len(data), draws).any(axis=1).sum())
    if rejected > MAX_REJECT_FRACTION * len(data):
        raise CoarseGrainError(
            f"{rejected} of {len(data)} samples have probability zero under layer {j}")
    if rejected:
        log.warning("layer %d: dropped %d zero-probability samples", j, rejected)
    return Dataset(j, z[~bad], model.alphabet, weights[~bad]), rejected


def fit_top_state(model: CoraModel, data: Dataset, alpha: float) -> CoraModel:
    """Top state set to smoothed empirical frequencies of a top-level dataset."""
    top_level = model.hierarchy.num_levels
    _check_data(model, data, top_level)
    n, M = model.alphabet, data.size
    flat = np.zeros(len(data), dtype=np.int64)
    for s in range(M):
        flat = flat * n + data.samples[:, s]
    counts = np.bincount(flat, weights=data.weights, minlength=n ** M) + alpha
    return model.with_top_state(JointDist(n, M, counts / counts.sum()))


# --------------------------------------------------------------------------
# driver

def train(model: CoraModel, data: Dataset, config: TrainingConfig) -> TrainResult:
    """Train for ``config.passes`` passes; keep the pass with the best level-0 objective."""
    _check_data(model, data, 0)
    if config.window_length > data.size:
        raise ValueError("window length exceeds the lattice size")
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model)
    best = None
    t0 = time.perf_counter()
    for p in range(1, config.passes + 1):
        if config.method is Method.LAYERWISE:
            mode = PriorMode.UNIFORM if p == 1 else PriorMode.MODEL
            level_data = data
            for j in range(1, model.hierarchy.num_levels + 1):
                model = fit_layer(model, level_data, j, config, mode, p, result.trace)
                level_data, rejected = coarse_grain_data(model, level_data, j, mode, rng,
                                                         config.posterior_draws)
                result.rejected += rejected
            model = fit_top_state(model, level_data, config.smoothing)
        else:
            model = fit_joint(model, data, config, p, result.trace)
        obj = windowed_loglik(model, data, config.window_length)
        result.trace.append(TraceRecord(p, -1, -1, obj, time.perf_counter() - t0))
        result.pass_objectives.append(obj)
        log.info("pass %d: windowed log-likelihood %.6f", p, obj)
        if best is None or obj > best[0]:
            best = (obj, model)
    result.model = best[1]
    return result
