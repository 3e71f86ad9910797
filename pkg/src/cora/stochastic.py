"""Conditional probability tables over categorical sites.

Flattening convention, shared by every module: a tuple of ``r`` symbols over
an alphabet of size ``n`` maps to the integer whose base-``n`` digits are the
symbols, first site most significant (numpy row-major order). A map's table is
indexed ``[output, input]``; each column is a distribution over outputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Column sums further than this from 1 are rejected rather than renormalized.
RENORM_TOL = 1e-6
# Columns already this close to 1 are kept bit-for-bit (round-trip stability).
EXACT_TOL = 1e-13


def _normalize_columns(table: np.ndarray, what: str) -> np.ndarray:
    if np.any(~np.isfinite(table)) or np.any(table < 0):
        raise ValueError(f"{what} has negative or non-finite entries")
    sums = table.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > RENORM_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{what} is not normalized (column sum off by {worst:.3g})")
    return table / np.where(np.abs(sums - 1.0) > EXACT_TOL, sums, 1.0)


@dataclass(frozen=True, eq=False)
class JointDist:
    """Distribution over ``arity`` sites, stored as a flat vector of length n**arity."""

    alphabet: int
    arity: int
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float).reshape(-1)
        if p.size != self.alphabet ** self.arity:
            raise ValueError(
                f"expected {self.alphabet ** self.arity} probabilities, got {p.size}")
        p = _normalize_columns(p[:, None], "distribution")[:, 0]
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def tensor(self) -> np.ndarray:
        return self.probs.reshape((self.alphabet,) * self.arity)

    @classmethod
    def from_tensor(cls, t: np.ndarray, alphabet: int) -> "JointDist":
        t = np.asarray(t, dtype=float)
        return cls(alphabet, t.ndim, t / t.sum())

    @classmethod
    def uniform(cls, alphabet: int, arity: int) -> "JointDist":
        return cls(alphabet, arity, np.full(alphabet ** arity, alphabet ** -float(arity)))

    @classmethod
    def point_mass(cls, alphabet: int, config: Sequence[int]) -> "JointDist":
        p = np.zeros(alphabet ** len(config))
        p[flat_index(config, alphabet)] = 1.0
        return cls(alphabet, len(config), p)

    def prob(self, config: Sequence[int]) -> float:
        return float(self.probs[flat_index(config, self.alphabet)])

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def __repr__(self):
        return f"JointDist(alphabet={self.alphabet}, arity={self.arity})"


@dataclass(frozen=True, eq=False)
class StochasticMap:
    """Column-stochastic table from ``in_arity`` input sites to ``out_arity`` output sites."""

    alphabet: int
    in_arity: int
    out_arity: int
    table: np.ndarray

    def __post_init__(self):
        n = self.alphabet
        if n < 1 or self.in_arity < 0 or self.out_arity < 1:
            raise ValueError("invalid alphabet or arity")
        t = np.array(self.table, dtype=float)
        shape = (n ** self.out_arity, n ** self.in_arity)
        if t.shape != shape:
            raise ValueError(f"table shape {t.shape} does not match expected {shape}")
        t = _normalize_columns(t, "stochastic map")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def tensor(self) -> np.ndarray:
        """Table reshaped to ``(n,)*out_arity + (n,)*in_arity``."""
        return self.table.reshape((self.alphabet,) * (self.out_arity + self.in_arity))

    @property
    def num_parameters(self) -> int:
        return self.table.size

    def column(self, x: Sequence[int]) -> np.ndarray:
        return self.table[:, flat_index(x, self.alphabet)]

    def __repr__(self):
        return (f"StochasticMap(alphabet={self.alphabet}, "
                f"{self.in_arity}->{self.out_arity})")


def flat_index(config: Sequence[int], alphabet: int) -> int:
    idx = 0
    for s in config:
        s = int(s)
        if not 0 <= s < alphabet:
            raise ValueError(f"symbol {s} outside alphabet of size {alphabet}")
        idx = idx * alphabet + s
    return idx


def unflatten(index: int, alphabet: int, arity: int) -> tuple[int, ...]:
    out = []
    for _ in range(arity):
        index, r = divmod(index, alphabet)
        out.append(r)
    return tuple(reversed(out))


def identity_map(alphabet: int, arity: int = 1) -> StochasticMap:
    return StochasticMap(alphabet, arity, arity, np.eye(alphabet ** arity))


def deterministic_map(alphabet: int, in_arity: int, out_arity: int, fn) -> StochasticMap:
    """Map sending input tuple ``x`` to the output tuple ``fn(x)`` with probability 1."""
    t = np.zeros((alphabet ** out_arity, alphabet ** in_arity))
    for col in range(alphabet ** in_arity):
        y = fn(unflatten(col, alphabet, in_arity))
        t[flat_index(y, alphabet), col] = 1.0
    return StochasticMap(alphabet, in_arity, out_arity, t)


def copy_map(alphabet: int) -> StochasticMap:
    """1 -> 2 map duplicating its input."""
    return deterministic_map(alphabet, 1, 2, lambda x: (x[0], x[0]))


def uniform_map(alphabet: int, in_arity: int, out_arity: int) -> StochasticMap:
    k = alphabet ** out_arity
    return StochasticMap(alphabet, in_arity, out_arity,
                         np.full((k, alphabet ** in_arity), 1.0 / k))


def apply(f: StochasticMap, p: JointDist, input_positions: Sequence[int]) -> JointDist:
    """Push ``p`` through ``f`` acting on the sites at ``input_positions``.

    The consumed sites are summed out; ``f``'s outputs take the place of the
    first entry of ``input_positions`` and the untouched sites keep their order.
    With ``f.in_arity == 0`` the outputs are inserted at ``input_positions[0]``
    (or appended when no position is given).
    """
    pos = [int(i) for i in input_positions]
    if f.alphabet != p.alphabet:
        raise ValueError("alphabet mismatch between map and distribution")
    if p.arity < f.in_arity:
        raise ValueError(f"map needs {f.in_arity} inputs, distribution has {p.arity} sites")
    anchor = pos[0] if pos else p.arity
    consumed = pos[:f.in_arity] if f.in_arity else []
    if f.in_arity and len(pos) != f.in_arity:
        raise ValueError(f"expected {f.in_arity} input positions, got {len(pos)}")
    if len(set(consumed)) != len(consumed) or any(not 0 <= i < p.arity for i in consumed):
        raise ValueError(f"invalid input positions {pos} for arity {p.arity}")
    if not 0 <= anchor <= p.arity:
        raise ValueError(f"invalid insertion position {anchor}")

    k, m = f.out_arity, f.in_arity
    out = np.tensordot(f.tensor, p.tensor, axes=(list(range(k, k + m)), consumed))
    # axes of `out`: f outputs, then untouched sites in original order
    untouched = [i for i in range(p.arity) if i not in consumed]
    insert_at = sum(1 for i in untouched if i < anchor)
    order = list(range(k, k + insert_at)) + list(range(k)) + list(range(k + insert_at, out.ndim))
    out = np.transpose(out, order)
    return JointDist(p.alphabet, out.ndim, out.reshape(-1) / out.sum())


def marginalize(p: JointDist, keep: Sequence[int]) -> JointDist:
    """Exact marginal over positions ``keep``, in the order given."""
    keep = [int(i) for i in keep]
    if len(set(keep)) != len(keep) or any(not 0 <= i < p.arity for i in keep):
        raise ValueError(f"invalid positions {keep} for arity {p.arity}")
    drop = tuple(i for i in range(p.arity) if i not in keep)
    t = p.tensor.sum(axis=drop) if drop else p.tensor
    remaining = [i for i in range(p.arity) if i in keep]
    t = np.transpose(t, [remaining.index(i) for i in keep])
    return JointDist(p.alphabet, len(keep), t.reshape(-1))


def bayes_invert(f: StochasticMap, prior: JointDist) -> StochasticMap:
    """Posterior channel ``g(x|y) = f(y|x) prior(x) / evidence(y)``.

    Outputs ``y`` that the prior cannot produce get the prior itself as posterior.
    """
    if prior.alphabet != f.alphabet or prior.arity != f.in_arity:
        raise ValueError("prior does not match the map's input sites")
    joint = f.table * prior.probs[None, :]
    evidence = joint.sum(axis=1)
    g = np.empty_like(joint.T)
    ok = evidence > 0
    g[:, ok] = joint[ok].T / evidence[ok]
    g[:, ~ok] = prior.probs[:, None]
    return StochasticMap(f.alphabet, f.out_arity, f.in_arity, g)


def sample(f: StochasticMap, x: Sequence[int], rng: np.random.Generator) -> tuple[int, ...]:
    if len(x) != f.in_arity:
        raise ValueError(f"expected {f.in_arity} input symbols, got {len(x)}")
    col = f.column(x)
    cum = np.cumsum(col)
    k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    k = min(k, int(np.flatnonzero(col)[-1]))
    return unflatten(k, f.alphabet, f.out_arity)


def tensor_product(f: StochasticMap, g: StochasticMap) -> StochasticMap:
    """Independent parallel action of ``f`` and ``g`` on concatenated sites."""
    if f.alphabet != g.alphabet:
        raise ValueError("alphabet mismatch")
    return StochasticMap(f.alphabet, f.in_arity + g.in_arity, f.out_arity + g.out_arity,
                         np.kron(f.table, g.table))


def compose(g: StochasticMap, f: StochasticMap) -> StochasticMap:
    """``g`` after ``f``: table product ``g.table @ f.table``."""
    if f.alphabet != g.alphabet or f.out_arity != g.in_arity:
        raise ValueError("maps cannot be composed")
    return StochasticMap(f.alphabet, f.in_arity, g.out_arity, g.table @ f.table)
