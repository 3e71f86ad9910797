"""Geometry of the dyadic coarse-graining tower over a periodic 1-D lattice.

Level 0 is the data lattice; each site of level ``j`` stands for the block
``(2i, 2i+1)`` of level ``j-1``. All indices are periodic.
"""
from __future__ import annotations

from dataclasses import dataclass


class LatticeError(ValueError):
    """Raised for invalid lattice sizes, levels or site references."""


def _is_power_of_two(k: int) -> bool:
    return k > 0 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class LatticeHierarchy:
    base_size: int
    num_levels: int
    dimension: int = 1

    def __post_init__(self):
        if self.dimension != 1:
            raise LatticeError("only one-dimensional lattices are supported")
        if not _is_power_of_two(self.base_size):
            raise LatticeError(
                f"base size must be a power of 2 (each level halves the previous one), "
                f"got {self.base_size}")
        if self.num_levels < 1:
            raise LatticeError("the hierarchy needs at least one coarse-graining level")
        if (1 << self.num_levels) > self.base_size:
            raise LatticeError(
                f"{self.num_levels} levels is too deep for {self.base_size} sites "
                f"(at most {self.base_size.bit_length() - 1})")

    @property
    def level_sizes(self) -> list[int]:
        return [self.base_size >> j for j in range(self.num_levels + 1)]

    @property
    def top_level(self) -> int:
        return self.num_levels

    def size(self, level: int) -> int:
        if not 0 <= level <= self.num_levels:
            raise LatticeError(f"level {level} outside [0, {self.num_levels}]")
        return self.base_size >> level

    @property
    def total_sites(self) -> int:
        # sum_j N / 2^j = 2N - N / 2^(j_max)
        total = 2 * self.base_size - (self.base_size >> self.num_levels)
        assert total == sum(self.level_sizes)
        return total

    def site(self, level: int, index: int) -> "SiteRef":
        return SiteRef(level, index % self.size(level))


@dataclass(frozen=True, order=True)
class SiteRef:
    level: int
    index: int


def build_hierarchy(base_size: int, num_levels: int) -> LatticeHierarchy:
    """Build the tower of lattices ``N, N/2, ..., N/2**num_levels``."""
    return LatticeHierarchy(int(base_size), int(num_levels))


def block_of(h: LatticeHierarchy, s: SiteRef) -> tuple[SiteRef, SiteRef]:
    """The two sites one level down that site ``s`` represents."""
    if s.level < 1:
        raise LatticeError("level-0 sites do not represent a block")
    below = h.size(s.level - 1)
    i = s.index % h.size(s.level)
    return SiteRef(s.level - 1, (2 * i) % below), SiteRef(s.level - 1, (2 * i + 1) % below)


def window(h: LatticeHierarchy, level: int, start: int, length: int) -> list[SiteRef]:
    """Periodic contiguous window of ``length`` sites starting at ``start``."""
    size = h.size(level)
    if not 1 <= length <= size:
        raise LatticeError(f"window length {length} outside [1, {size}] at level {level}")
    return [SiteRef(level, (start + k) % size) for k in range(length)]
