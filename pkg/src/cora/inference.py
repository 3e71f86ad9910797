"""Exact marginals and posteriors restricted to the causal cone of a window.

The past of a set of level ``j-1`` sites is found by walking back through
the boxes covering them to the triangles feeding those boxes. For a
contiguous window it is again a contiguous interval, and for windows of up to
3 sites it never holds more than 3 sites, so a window marginal costs a
constant amount of work per level.

Three evaluation routes share the cone geometry:

* :func:`cone_marginal` pushes the top marginal down with ``apply`` and
  ``marginalize``, dropping every variable as soon as no needed box uses it.
* :func:`cone_posterior` enumerates all latent configurations of the cone; it
  is the reference semantics for posteriors.
* :class:`ConeNetwork` runs forward/backward messages level by level and
  yields expected counts of every local map occurrence, which is what the
  training E-step consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import CoraModel, Layer, box_covering, box_inputs
from .stochastic import JointDist, apply, marginalize

WORK_CAP = 2 ** 22
ENUMERATION_CAP = 2 ** 22


class ZeroProbabilityError(ValueError):
    """An observation has probability zero under the model."""


# --------------------------------------------------------------------------
# geometry

def periodic_order(sites, size: int) -> list[int]:
    """Sort a set of periodic indices starting from the beginning of a run."""
    s = {int(i) % size for i in sites}
    if len(s) == size:
        return list(range(size))
    starts = [i for i in s if (i - 1) % size not in s]
    start = min(starts)
    return sorted(s, key=lambda i: (i - start) % size)


def is_contiguous(sites: Sequence[int], size: int) -> bool:
    s = [int(i) % size for i in sites]
    if len(set(s)) != len(s):
        return False
    return all((s[k + 1] - s[k]) % size == 1 for k in range(len(s) - 1))


@dataclass(frozen=True)
class LevelStep:
    """Local structure of one layer restricted to a cone.

    ``coarse`` are the level ``j`` sites, ``boxes`` the boxes covering the
    needed level ``j-1`` sites ``fine``, and ``wires`` the triangle outputs
    those boxes consume.
    """

    coarse: tuple[int, ...]
    boxes: tuple[int, ...]
    wires: tuple[int, ...]
    fine: tuple[int, ...]
    size_below: int


def parents(fine: Sequence[int], size_below: int) -> LevelStep:
    boxes = periodic_order({box_covering(p, size_below) for p in fine}, size_below // 2)
    wires = []
    for b in boxes:
        for w in box_inputs(b, size_below):
            if w not in wires:
                wires.append(w)
    coarse = periodic_order({w // 2 for w in wires}, size_below // 2)
    return LevelStep(tuple(coarse), tuple(boxes), tuple(wires), tuple(fine), size_below)


def cone_steps(sizes: Sequence[int], sites: Sequence[int]) -> list[LevelStep]:
    """Per-layer cone structure for ``sites`` at the bottom of a stack of levels."""
    steps = []
    fine = tuple(int(p) % sizes[0] for p in sites)
    for k in range(len(sizes) - 1):
        st = parents(fine, sizes[k])
        steps.append(st)
        fine = st.coarse
    return steps


@dataclass(frozen=True)
class CausalCone:
    target: tuple[int, ...]
    per_level_sites: tuple[tuple[int, ...], ...]

    @property
    def widths(self) -> list[int]:
        return [len(s) for s in self.per_level_sites]


def compute_cone(model_or_hierarchy, window: Sequence[int]) -> CausalCone:
    """Minimal influencing site sets of a contiguous level-0 window at every level."""
    h = getattr(model_or_hierarchy, "hierarchy", model_or_hierarchy)
    sizes = h.level_sizes
    window = [int(p) % sizes[0] for p in window]
    if not 1 <= len(window) <= sizes[0]:
        raise ValueError(f"window length must be in [1, {sizes[0]}]")
    if not is_contiguous(window, sizes[0]):
        raise ValueError("window must be a contiguous periodic interval")
    steps = cone_steps(sizes, window)
    return CausalCone(tuple(window), (tuple(window),) + tuple(s.coarse for s in steps))


# --------------------------------------------------------------------------
# stacks: layers above a base level plus a prior on their top level

@dataclass
class Stack:
    """Layers ``layers[k]`` mapping level ``base+k+1`` to ``base+k``.

    ``prior(sites)`` returns the joint distribution of the top level restricted
    to ``sites`` (in that order). ``top_state`` is set when that prior is an
    explicit joint table that training may update.
    """

    alphabet: int
    sizes: list[int]
    layers: list[Layer]
    prior: Callable[[tuple[int, ...]], JointDist]
    base: int = 0
    top_state: JointDist | None = None

    @property
    def depth(self) -> int:
        return len(self.layers)


def model_stack(model: CoraModel, base: int = 0) -> Stack:
    top = model.top_state
    return Stack(model.alphabet, model.hierarchy.level_sizes[base:],
                 list(model.layers[base:]),
                 lambda sites: marginalize(top, list(sites)), base, top)


def uniform_prior(alphabet: int):
    return lambda sites: JointDist.uniform(alphabet, len(sites))


def upper_prior(model: CoraModel, level: int):
    """Prior on ``level`` generated by the model's layers above it (memoized)."""
    upper = model_stack(model, level)
    cache: dict = {}

    def prior(sites):
        key = tuple(sites)
        if key not in cache:
            cache[key] = stack_marginal(upper, key)[0]
        return cache[key]
    return prior


def single_layer_stack(model: CoraModel, j: int, prior) -> Stack:
    h = model.hierarchy
    return Stack(model.alphabet, [h.size(j - 1), h.size(j)], [model.layer(j)], prior, j - 1)


# --------------------------------------------------------------------------
# marginals via apply/marginalize

@dataclass(frozen=True)
class ConeMarginal:
    level: int
    sites: tuple[int, ...]
    dist: JointDist
    contraction_steps: int = 0
    max_arity: int = 0


def _drop(dist: JointDist, labels: list, keep) -> tuple[JointDist, list]:
    idx = [i for i, lab in enumerate(labels) if keep(lab)]
    if len(idx) == len(labels):
        return dist, labels
    return marginalize(dist, idx), [labels[i] for i in idx]


def _descend(layer: Layer, st: LevelStep, dist: JointDist, n: int):
    """Move a marginal over ``st.coarse`` to one over ``st.fine`` (in that order)."""
    labels: list = [("z", s) for s in st.coarse]
    wires_needed = set(st.wires)
    fine_needed = set(st.fine)
    pending = list(st.boxes)
    have: set = set()
    peak = dist.arity
    for s in st.coarse:
        pos = labels.index(("z", s))
        dist = apply(layer.triangle(s), dist, [pos])
        labels[pos:pos + 1] = [("w", 2 * s), ("w", 2 * s + 1)]
        peak = max(peak, dist.arity)
        dist, labels = _drop(dist, labels, lambda lab: lab[0] != "w" or lab[1] in wires_needed)
        have.update(w for w in (2 * s, 2 * s + 1) if w in wires_needed)
        for b in list(pending):
            a, c = box_inputs(b, st.size_below)
            if a in have and c in have:
                pending.remove(b)
                pa, pc = labels.index(("w", a)), labels.index(("w", c))
                dist = apply(layer.box(b), dist, [pa, pc])
                at = pa - (1 if pc < pa else 0)
                labels = [lab for lab in labels if lab not in (("w", a), ("w", c))]
                labels[at:at] = [("x", a), ("x", c)]
                peak = max(peak, dist.arity)
                dist, labels = _drop(dist, labels,
                                     lambda lab: lab[0] != "x" or lab[1] in fine_needed)
    assert not pending
    dist = marginalize(dist, [labels.index(("x", p)) for p in st.fine])
    if n ** peak > WORK_CAP:
        raise MemoryError("cone too wide for the dense work buffer")
    return dist, peak


def stack_marginal(stack: Stack, sites: Sequence[int]) -> tuple[JointDist, int, int]:
    """Exact marginal of the stack's bottom level over ``sites``.

    Returns ``(dist, contraction_steps, max_arity)``.
    """
    steps = cone_steps(stack.sizes, sites)
    top_sites = steps[-1].coarse if steps else tuple(int(p) % stack.sizes[0] for p in sites)
    if stack.alphabet ** len(top_sites) > WORK_CAP:
        raise MemoryError("cone too wide for the dense work buffer")
    dist = stack.prior(top_sites)
    peak = dist.arity
    for k in range(len(steps) - 1, -1, -1):
        dist, p = _descend(stack.layers[k], steps[k], dist, stack.alphabet)
        peak = max(peak, p)
    return dist, len(steps), peak


def cone_marginal(model: CoraModel, window: Sequence[int]) -> ConeMarginal:
    """Exact marginal of the generated distribution over a contiguous window."""
    cone = compute_cone(model, window)
    dist, steps, peak = stack_marginal(model_stack(model), cone.target)
    return ConeMarginal(0, cone.target, dist, steps, peak)


def level_marginal(model: CoraModel, level: int, sites: Sequence[int]) -> JointDist:
    """Marginal of the state the model generates on ``level`` over arbitrary ``sites``."""
    size = model.hierarchy.size(level)
    sites = [int(p) % size for p in sites]
    if len(set(sites)) != len(sites):
        raise ValueError("sites must be distinct")
    return stack_marginal(model_stack(model, level), sites)[0]


# --------------------------------------------------------------------------
# posterior by enumeration

@dataclass
class ConePosterior:
    """Posterior over the latent variables of a window's cone.

    ``variables`` label the axes of ``joint``: ``("site", j, i)`` is site ``i``
    of level ``j >= 1`` and ``("wire", j, i)`` the triangle output wire ``i``
    of layer ``j`` (indexed like level ``j-1``) that feeds a box of the cone.
    """

    cone: CausalCone
    variables: list[tuple[str, int, int]]
    joint: np.ndarray
    evidence: float
    level_marginals: dict[int, JointDist] = field(default_factory=dict)

    def marginal(self, variables: Sequence[tuple[str, int, int]]) -> np.ndarray:
        axes = [self.variables.index(v) for v in variables]
        drop = tuple(i for i in range(len(self.variables)) if i not in axes)
        t = self.joint.sum(axis=drop)
        kept = [i for i in range(len(self.variables)) if i in axes]
        return np.transpose(t, [kept.index(a) for a in axes])


def cone_posterior(model: CoraModel, window: Sequence[int], observed: Sequence[int]) -> ConePosterior:
    """Exact joint posterior of all cone latents given the window's symbols."""
    cone = compute_cone(model, window)
    if len(observed) != len(cone.target):
        raise ValueError("observation length differs from window length")
    n = model.alphabet
    obs = dict(zip(cone.target, (int(v) for v in observed)))
    if any(not 0 <= v < n for v in obs.values()):
        raise ValueError("observed symbol outside alphabet")
    steps = cone_steps(model.hierarchy.level_sizes, cone.target)
    ids: dict = {}

    def vid(label):
        if label not in ids:
            ids[label] = len(ids)
        return ids[label]

    operands: list = []
    top_level = len(steps)
    top_sites = steps[-1].coarse
    operands += [marginalize(model.top_state, list(top_sites)).tensor,
                 [vid(("site", top_level, s)) for s in top_sites]]
    for k, st in enumerate(steps):
        j = k + 1
        layer = model.layer(j)
        used = set(st.wires)
        for s in st.coarse:
            t = layer.triangle(s).tensor  # (y1, y2, x)
            outs = [2 * s, 2 * s + 1]
            keep = [w in used for w in outs]
            t = t.sum(axis=tuple(i for i in range(2) if not keep[i])) if not all(keep) else t
            sub = [vid(("wire", j, w)) for w, kp in zip(outs, keep) if kp]
            operands += [t, sub + [vid(("site", j, s))]]
        needed = set(st.fine)
        for b in st.boxes:
            t = layer.box(b).tensor  # (o_a, o_c, w_a, w_c)
            a, c = box_inputs(b, st.size_below)
            sub_out = []
            index: list = []
            for p in (a, c):
                if p not in needed:
                    index.append(slice(None))
                    sub_out.append(None)
                elif j == 1:
                    index.append(obs[p])
                else:
                    index.append(slice(None))
                    sub_out.append(vid(("site", j - 1, p)))
            t = t[tuple(index) + (slice(None), slice(None))]
            dangling = tuple(i for i, v in enumerate(sub_out) if v is None)
            if dangling:
                t = t.sum(axis=dangling)
            sub = [v for v in sub_out if v is not None]
            operands += [t, sub + [vid(("wire", j, a)), vid(("wire", j, c))]]
    variables = sorted(ids, key=ids.get)
    if n ** len(variables) > ENUMERATION_CAP:
        raise MemoryError(f"{n}**{len(variables)} latent configurations exceed the cap")
    joint = np.einsum(*operands, list(range(len(variables))), optimize="greedy")
    evidence = float(joint.sum())
    if not evidence > 0:
        raise ZeroProbabilityError(f"observation {tuple(observed)} has probability zero")
    post = ConePosterior(cone, variables, joint / evidence, evidence)
    for j in range(1, top_level + 1):
        labs = [("site", j, s) for s in cone.per_level_sites[j]]
        post.level_marginals[j] = JointDist(n, len(labs), post.marginal(labs).reshape(-1))
    return post


# --------------------------------------------------------------------------
# message passing for expected counts

@dataclass
class ConeStats:
    """Weighted sufficient statistics over a set of windows.

    ``tri[k][t]`` / ``box[k][t]`` hold expected ``(output..., input...)``
    counts for table ``t`` of ``stack.layers[k]`` (shapes ``(n,n,n)`` and
    ``(n,n,n,n)``); ``top`` holds expected counts of full top configurations
    when the stack carries an explicit top state.
    """

    tri: list[list[np.ndarray]]
    box: list[list[np.ndarray]]
    top: np.ndarray | None
    loglik: float
    weight: float
    zero_windows: int = 0


class _Factor:
    __slots__ = ("kind", "table", "sub")

    def __init__(self, kind, table, sub):
        self.kind, self.table, self.sub = kind, table, sub


class ConeNetwork:
    """Forward/backward message passing over one window's cone.

    Each layer's local network has the cone's coarse sites, every output wire
    of the triangles involved, and every output of the boxes involved;
    outputs outside the cone are summed rather than dropped, so expected
    counts refer to complete table entries.
    """

    def __init__(self, sizes: Sequence[int], sites: Sequence[int]):
        self.steps = cone_steps(sizes, sites)
        self.bottom = tuple(int(p) % sizes[0] for p in sites)
        self.local = []
        for st in self.steps:
            z = {s: i for i, s in enumerate(st.coarse)}
            nz = len(z)
            wires = {}
            for s in st.coarse:
                for w in (2 * s, 2 * s + 1):
                    wires[w] = nz + len(wires)
            outs = {}
            for b in st.boxes:
                for p in box_inputs(b, st.size_below):
                    outs[p] = nz + len(wires) + len(outs)
            factors = []
            for s in st.coarse:
                factors.append(("tri", s, [wires[2 * s], wires[2 * s + 1], z[s]]))
            for b in st.boxes:
                a, c = box_inputs(b, st.size_below)
                factors.append(("box", b, [outs[a], outs[c], wires[a], wires[c]]))
            self.local.append((list(range(nz)), factors, [outs[p] for p in st.fine]))
        self._paths: dict = {}

    @property
    def top_sites(self) -> tuple[int, ...]:
        return self.steps[-1].coarse if self.steps else self.bottom

    def _einsum(self, key, *args):
        path = self._paths.get(key)
        if path is None:
            path = np.einsum_path(*args, optimize="greedy")[0]
            self._paths[key] = path
        return np.einsum(*args, optimize=path)

    def _operands(self, stack: Stack, k: int):
        zsub, factors, fsub = self.local[k]
        layer = stack.layers[k]
        ops = []
        for kind, idx, sub in factors:
            t = layer.triangle(idx).tensor if kind == "tri" else layer.box(idx).tensor
            ops += [t, sub]
        return zsub, factors, fsub, ops

    def forward(self, stack: Stack) -> list[np.ndarray]:
        """``alphas[k]`` is the marginal over the cone sites of level ``base+k``."""
        K = len(self.steps)
        alphas = [None] * (K + 1)
        alphas[K] = stack.prior(self.top_sites).tensor
        for k in range(K - 1, -1, -1):
            zsub, _, fsub, ops = self._operands(stack, k)
            alphas[k] = self._einsum(("f", k), alphas[k + 1], zsub, *ops, fsub)
        return alphas

    def backward(self, stack: Stack, alphas, beta0: np.ndarray):
        """Push weights ``beta0`` over bottom configurations up the cone and
        collect expected counts of every local map occurrence."""
        n = stack.alphabet
        tri = [[np.zeros((n,) * 3) for _ in L.triangles] for L in stack.layers]
        box = [[np.zeros((n,) * 4) for _ in L.boxes] for L in stack.layers]
        beta = beta0
        for k in range(len(self.steps)):
            zsub, factors, fsub, ops = self._operands(stack, k)
            layer = stack.layers[k]
            for i, (kind, idx, sub) in enumerate(factors):
                c = self._einsum(("c", k, i), alphas[k + 1], zsub, *ops, beta, fsub, sub)
                if kind == "tri":
                    tri[k][0 if layer.tied else idx] += c
                else:
                    box[k][0 if layer.tied else idx] += c
            beta = self._einsum(("b", k), *ops, beta, fsub, zsub)
        return tri, box, beta


_NETWORKS: dict = {}


def cone_network(sizes: Sequence[int], sites: Sequence[int]) -> ConeNetwork:
    key = (tuple(sizes), tuple(sites))
    net = _NETWORKS.get(key)
    if net is None:
        if len(_NETWORKS) > 4096:
            _NETWORKS.clear()
        net = _NETWORKS[key] = ConeNetwork(sizes, sites)
    return net


def window_pattern_counts(samples: np.ndarray, weights: np.ndarray, sites: Sequence[int],
                          alphabet: int) -> np.ndarray:
    flat = np.zeros(samples.shape[0], dtype=np.int64)
    for p in sites:
        flat = flat * alphabet + samples[:, p]
    return np.bincount(flat, weights=weights, minlength=alphabet ** len(sites))


def cone_statistics(stack: Stack, samples: np.ndarray, weights: np.ndarray,
                    window_length: int) -> ConeStats:
    """Expected counts and composite log-likelihood over all periodic windows.

    Windows sharing a symbol pattern share a posterior, so each window
    position is handled once with pattern multiplicities as weights.
    """
    n = stack.alphabet
    size = stack.sizes[0]
    K = stack.depth
    tri = [[np.zeros((n,) * 3) for _ in L.triangles] for L in stack.layers]
    box = [[np.zeros((n,) * 4) for _ in L.boxes] for L in stack.layers]
    top = np.zeros_like(stack.top_state.tensor) if stack.top_state is not None else None
    loglik, zero = 0.0, 0
    for start in range(size):
        sites = [(start + t) % size for t in range(window_length)]
        counts = window_pattern_counts(samples, weights, sites, n)
        net = cone_network(stack.sizes, sites)
        alphas = net.forward(stack)
        p = alphas[0].reshape(-1)
        seen = counts > 0
        bad = seen & (p <= 0)
        zero += int(bad.sum())
        ok = seen & ~bad
        loglik += float(np.dot(counts[ok], np.log(p[ok])))
        beta0 = np.zeros_like(p)
        beta0[ok] = counts[ok] / p[ok]
        t, b, beta_top = net.backward(stack, alphas, beta0.reshape((n,) * window_length))
        for k in range(K):
            for i in range(len(tri[k])):
                tri[k][i] += t[k][i]
            for i in range(len(box[k])):
                box[k][i] += b[k][i]
        if top is not None:
            # counts of full top configurations: top(full) * beta(cone part)
            top_sites = net.top_sites
            M = top.ndim
            expand = np.moveaxis(
                beta_top.reshape(beta_top.shape + (1,) * (M - len(top_sites))),
                list(range(len(top_sites))), list(top_sites))
            top += stack.top_state.tensor * expand
    return ConeStats(tri, box, top, loglik, float(weights.sum()) * size, zero)
