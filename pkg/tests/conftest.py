"""Shared fixtures and oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from swizzlesim.arch import ArchSpec, MI300X_LIKE
from swizzlesim.dsl import BinOp, Ident, Lit, MinMax, VOCABULARY


@pytest.fixture
def mi300x():
    return MI300X_LIKE


def arch_with_xcds(
    num_xcds: int,
    cus_per_xcd: int = 4,
    l2_bytes: int = 1 << 20,
    line: int = 128,
    ways: int = 16,
    slots: int = 1,
) -> ArchSpec:
    return ArchSpec(
        name=f"test-x{num_xcds}",
        num_xcds=num_xcds,
        cus_per_xcd=cus_per_xcd,
        l2_bytes_per_xcd=l2_bytes,
        l2_line_bytes=line,
        l2_associativity=ways,
        wg_slots_per_cu=slots,
    )


_OPS = ("+", "-", "*", "//", "%", "<<", ">>", "&", "|")
_IDENTS = tuple(sorted(VOCABULARY))


def random_expr(rng: np.random.Generator, depth: int = 4):
    """Random expression tree over the full grammar."""
    if depth == 0 or rng.random() < 0.3:
        if rng.random() < 0.5:
            return Lit(int(rng.integers(0, 64)))
        return Ident(_IDENTS[rng.integers(0, len(_IDENTS))])
    roll = rng.random()
    left = random_expr(rng, depth - 1)
    right = random_expr(rng, depth - 1)
    if roll < 0.15:
        return MinMax("min" if rng.random() < 0.5 else "max", left, right)
    return BinOp(_OPS[rng.integers(0, len(_OPS))], left, right)


def random_env(rng: np.random.Generator) -> dict[str, int]:
    return {name: int(rng.integers(0, 64)) for name in _IDENTS}


class ReferenceLru:
    """Independently coded set-associative LRU used as a test oracle.

    Plain lists with most-recently-used at the end; deliberately no shared
    machinery with the implementation under test.
    """

    def __init__(self, num_sets: int, ways: int):
        self.num_sets = num_sets
        self.ways = ways
        self.sets = [[] for _ in range(num_sets)]

    def access(self, line: int) -> bool:
        bucket = self.sets[line % self.num_sets]
        if line in bucket:
            bucket.remove(line)
            bucket.append(line)
            return True
        bucket.append(line)
        if len(bucket) > self.ways:
            bucket.pop(0)
        return False


class FullyAssociativeLru:
    """Brute-force fully-associative LRU oracle (capacity in lines)."""

    def __init__(self, capacity_lines: int):
        self.capacity = capacity_lines
        self.order: list[int] = []

    def access(self, line: int) -> bool:
        if line in self.order:
            self.order.remove(line)
            self.order.append(line)
            return True
        self.order.append(line)
        if len(self.order) > self.capacity:
            self.order.pop(0)
        return False
