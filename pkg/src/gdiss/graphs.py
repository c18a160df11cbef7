"""Small directed-graph helpers for dependency graphs and linearization."""

from __future__ import annotations

import heapq
from typing import Callable, Hashable, Iterable, TypeVar

V = TypeVar("V", bound=Hashable)


class CycleError(ValueError):
    def __init__(self, remaining: int):
        super().__init__(f"graph has a cycle ({remaining} vertices unsortable)")
        self.remaining = remaining


def topo_sort(
    vertices: Iterable[V],
    dependencies: dict[V, set[V]],
    tie_key: Callable[[V], object],
) -> list[V]:
    """Order vertices so each appears after everything it depends on.

    Ties are broken by tie_key, which keeps the output deterministic.
    Raises CycleError when no linear extension exists.
    """
    verts = list(vertices)
    vert_set = set(verts)
    pending: dict[V, int] = {}
    dependents: dict[V, list[V]] = {}
    for v in verts:
        deps = [d for d in dependencies.get(v, ()) if d in vert_set and d != v]
        pending[v] = len(deps)
        for d in deps:
            dependents.setdefault(d, []).append(v)
    heap = [(tie_key(v), v) for v in verts if pending[v] == 0]
    heapq.heapify(heap)
    out: list[V] = []
    while heap:
        _, v = heapq.heappop(heap)
        out.append(v)
        for w in dependents.get(v, ()):
            pending[w] -= 1
            if pending[w] == 0:
                heapq.heappush(heap, (tie_key(w), w))
    if len(out) != len(verts):
        raise CycleError(len(verts) - len(out))
    return out


def is_acyclic(vertices: Iterable[V], dependencies: dict[V, set[V]]) -> bool:
    try:
        topo_sort(vertices, dependencies, tie_key=lambda v: repr(v))
        return True
    except CycleError:
        return False
