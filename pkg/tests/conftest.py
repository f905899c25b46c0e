import itertools

import numpy as np
import pytest

from cdlt.branching import LayeredTree


def layered_trees(max_vertices: int, max_height: int):
    """Every planar rooted tree with <= max_vertices vertices whose height is <= max_height
    and whose layers 0..height are all non-empty."""
    def grow(counts, layer, used, depth):
        # counts so far, size of the frontier layer, vertices used, depth of the frontier
        yield LayeredTree(np.array(counts + [0] * layer, dtype=np.int64), depth)
        if depth == max_height:
            return
        room = max_vertices - used
        for split in itertools.product(range(room + 1), repeat=layer):
            total = sum(split)
            if 1 <= total <= room:
                yield from grow(counts + list(split), total, used + total, depth + 1)

    yield from grow([], 1, 1, 0)


@pytest.fixture(scope="session")
def small_trees():
    return list(layered_trees(8, 3))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; printed in the terminal summary and asserted by the caller."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
