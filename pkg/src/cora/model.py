"""Layers of triangles and boxes, the assembled generative model, and its
dense reference semantics.

Layer ``j`` maps a state on level ``j`` (``M`` sites) to level ``j-1``
(``2M`` sites) in two sublayers:

1. triangle ``s`` sends site ``s`` to the wire pair ``(2s, 2s+1)``;
2. box ``s`` acts on the cross-block wire pair ``(2s+1, 2s+2 mod 2M)`` and
   writes the level ``j-1`` sites at the same positions.
"""
from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .lattice import LatticeHierarchy
from .stochastic import JointDist, StochasticMap, apply, marginalize, uniform_map
from . import kernels

FULL_JOINT_CAP = 2 ** 20
TOP_STATE_CAP = 2 ** 20


def box_inputs(b: int, size_below: int) -> tuple[int, int]:
    """Wire (and output site) positions of box ``b`` on a level of ``size_below`` sites."""
    return (2 * b + 1) % size_below, (2 * b + 2) % size_below


def box_covering(p: int, size_below: int) -> int:
    """Index of the box whose outputs include site ``p``."""
    return ((p - 1) % size_below) // 2


@dataclass(frozen=True, eq=False)
class Layer:
    """Local maps of one layer. ``triangles``/``boxes`` hold one map when tied,
    else one per coarse site."""

    level: int
    triangles: tuple[StochasticMap, ...]
    boxes: tuple[StochasticMap, ...]
    tied: bool = True

    def __post_init__(self):
        object.__setattr__(self, "triangles", tuple(self.triangles))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.tied and (len(self.triangles) != 1 or len(self.boxes) != 1):
            raise ValueError("a tied layer holds exactly one triangle and one box")
        if not self.tied and len(self.triangles) != len(self.boxes):
            raise ValueError("untied layer needs one triangle and one box per site")
        alphabets = {m.alphabet for m in self.triangles + self.boxes}
        if len(alphabets) != 1:
            raise ValueError("all maps of a layer must share one alphabet")
        for t in self.triangles:
            if (t.in_arity, t.out_arity) != (1, 2):
                raise ValueError("triangles must map 1 site to 2 sites")
        for b in self.boxes:
            if (b.in_arity, b.out_arity) != (2, 2):
                raise ValueError("boxes must map 2 sites to 2 sites")

    @property
    def alphabet(self) -> int:
        return self.triangles[0].alphabet

    def triangle(self, s: int) -> StochasticMap:
        return self.triangles[0] if self.tied else self.triangles[s]

    def box(self, s: int) -> StochasticMap:
        return self.boxes[0] if self.tied else self.boxes[s]

    @property
    def num_parameters(self) -> int:
        return sum(m.num_parameters for m in self.triangles + self.boxes)

    def check_size(self, size: int):
        if not self.tied and len(self.triangles) != size:
            raise ValueError(
                f"untied layer {self.level} has {len(self.triangles)} triangles, "
                f"level has {size} sites")


@dataclass(frozen=True, eq=False)
class CoraModel:
    hierarchy: LatticeHierarchy
    alphabet: int
    layers: tuple[Layer, ...]
    top_state: JointDist

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        h = self.hierarchy
        if len(self.layers) != h.num_levels:
            raise ValueError(f"expected {h.num_levels} layers, got {len(self.layers)}")
        for j, layer in enumerate(self.layers, start=1):
            if layer.level != j:
                raise ValueError(f"layer at position {j} claims level {layer.level}")
            if layer.alphabet != self.alphabet:
                raise ValueError("layer alphabet differs from model alphabet")
            layer.check_size(h.size(j))
        if self.top_state.alphabet != self.alphabet or \
                self.top_state.arity != h.size(h.num_levels):
            raise ValueError("top state must cover every site of the top level")

    @property
    def tied(self) -> bool:
        return all(layer.tied for layer in self.layers)

    def layer(self, j: int) -> Layer:
        return self.layers[j - 1]

    def replace_layer(self, layer: Layer) -> "CoraModel":
        layers = list(self.layers)
        layers[layer.level - 1] = layer
        return CoraModel(self.hierarchy, self.alphabet, layers, self.top_state)

    def with_top_state(self, top: JointDist) -> "CoraModel":
        return CoraModel(self.hierarchy, self.alphabet, self.layers, top)

    @property
    def num_parameters(self) -> int:
        return sum(layer.num_parameters for layer in self.layers) + self.top_state.probs.size


def parameter_count(hierarchy: LatticeHierarchy, alphabet: int, tied: bool = True) -> int:
    """Closed-form count of table entries.

    Untied, each layer ``j`` carries ``size(j)`` triangles (``n**3`` entries)
    and as many boxes (``n**4``), so the layer part is linear in the base size.
    """
    n = alphabet
    per_site = n ** 3 + n ** 4
    h = hierarchy
    layers = sum((1 if tied else h.size(j)) * per_site for j in range(1, h.num_levels + 1))
    return layers + n ** h.size(h.num_levels)


def layer_semantics(layer: Layer, state: JointDist) -> JointDist:
    """Dense action of a layer: all triangles, then all boxes.

    Output sites are in index order ``0 .. 2M-1``.
    """
    M = state.arity
    layer.check_size(M)
    if state.alphabet != layer.alphabet:
        raise ValueError("alphabet mismatch")
    dist, labels = state, list(range(M))
    for s in range(M):
        pos = labels.index(s)
        dist = apply(layer.triangle(s), dist, [pos])
        labels[pos:pos + 1] = [("w", 2 * s), ("w", 2 * s + 1)]
    size = 2 * M
    for b in range(M):
        a, c = box_inputs(b, size)
        pa, pc = labels.index(("w", a)), labels.index(("w", c))
        dist = apply(layer.box(b), dist, [pa, pc])
        labels = [lab for lab in labels if lab not in (("w", a), ("w", c))]
        at = _splice_at(pa, pc)
        labels[at:at] = [a, c]
    return marginalize(dist, [labels.index(p) for p in range(size)])


def _splice_at(first: int, other: int) -> int:
    # position of the first consumed input once the other consumed one is removed
    return first - (1 if other < first else 0)


def full_joint(model: CoraModel) -> JointDist:
    """Exact distribution over level 0 by dense composition from the top state."""
    n, N = model.alphabet, model.hierarchy.base_size
    if n ** N > FULL_JOINT_CAP:
        raise MemoryError(
            f"{n}**{N} configurations exceed the dense cap of {FULL_JOINT_CAP}; "
            f"use cone_marginal for window marginals")
    state = model.top_state
    for layer in reversed(model.layers):
        state = layer_semantics(layer, state)
    return state


def _categorical_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    k = np.searchsorted(cum, u * cum[-1], side="right")
    return np.minimum(k, np.flatnonzero(probs)[-1])


def sample_top(model: CoraModel, count: int, rng: np.random.Generator) -> np.ndarray:
    n, M = model.alphabet, model.top_state.arity
    flat = _categorical_rows(model.top_state.probs, rng.random(count))
    digits = np.empty((count, M), dtype=np.int64)
    for k in range(M - 1, -1, -1):
        flat, digits[:, k] = np.divmod(flat, n)
    return digits


def layer_tables(layer: Layer) -> tuple[np.ndarray, np.ndarray]:
    """Stacked triangle ``(T, n*n, n)`` and box ``(B, n*n, n*n)`` tables."""
    tri = np.ascontiguousarray(np.stack([t.table for t in layer.triangles]))
    box = np.ascontiguousarray(np.stack([b.table for b in layer.boxes]))
    return tri, box


def sample_layer(layer: Layer, coarse: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw level ``j-1`` configurations given level ``j`` rows of ``coarse``."""
    coarse = np.ascontiguousarray(coarse, dtype=np.int64)
    S, M = coarse.shape
    tri, box = layer_tables(layer)
    u_tri = rng.random((S, M))
    u_box = rng.random((S, M))
    return kernels.sample_layer(tri, box, coarse, u_tri, u_box)


def ancestral_sample(model: CoraModel, rng: np.random.Generator, count: int | None = None):
    """Generate configurations top-down: top state, then per layer triangles then boxes.

    Returns one configuration (1-D array) when ``count`` is None, else a
    ``(count, N)`` array.
    """
    S = 1 if count is None else int(count)
    x = sample_top(model, S, rng)
    for layer in reversed(model.layers):
        x = sample_layer(layer, x, rng)
    return x[0] if count is None else x


def _dirichlet_map(rng, n, m, k, concentration) -> StochasticMap:
    cols = rng.dirichlet(np.full(n ** k, concentration), size=n ** m).T
    return StochasticMap(n, m, k, cols / cols.sum(axis=0))


def random_model(hierarchy: LatticeHierarchy, alphabet: int, concentration: float,
                 rng: np.random.Generator, tied: bool = True) -> CoraModel:
    """Every column drawn from a symmetric Dirichlet(``concentration``).

    Large concentrations give near-uniform columns; small ones near-deterministic.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    n = alphabet
    top_size = hierarchy.size(hierarchy.num_levels)
    if n ** top_size > TOP_STATE_CAP:
        raise ValueError(
            f"top level of {top_size} sites is too large for an explicit state; "
            f"use more levels")
    layers = []
    for j in range(1, hierarchy.num_levels + 1):
        count = 1 if tied else hierarchy.size(j)
        tris = [_dirichlet_map(rng, n, 1, 2, concentration) for _ in range(count)]
        boxes = [_dirichlet_map(rng, n, 2, 2, concentration) for _ in range(count)]
        layers.append(Layer(j, tris, boxes, tied))
    top = rng.dirichlet(np.full(n ** top_size, concentration))
    return CoraModel(hierarchy, n, layers, JointDist(n, top_size, top / top.sum()))


def uniform_model(hierarchy: LatticeHierarchy, alphabet: int, tied: bool = True) -> CoraModel:
    n = alphabet
    layers = []
    for j in range(1, hierarchy.num_levels + 1):
        count = 1 if tied else hierarchy.size(j)
        layers.append(Layer(j, [uniform_map(n, 1, 2)] * count, [uniform_map(n, 2, 2)] * count,
                            tied))
    top = JointDist.uniform(n, hierarchy.size(hierarchy.num_levels))
    return CoraModel(hierarchy, n, layers, top)


def constant_layer(level: int, triangle: StochasticMap, box: StochasticMap) -> Layer:
    return Layer(level, [triangle], [box], True)
