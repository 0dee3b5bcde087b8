"""Maximum clique enumeration for the instrument voting graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGraph

MAX_VERTICES = 64


@dataclass(frozen=True)
class VoteGraph:
    labels: tuple[str, ...]
    adj: np.ndarray  # symmetric bool, true diagonal

    def __post_init__(self):
        adj = np.asarray(self.adj, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] != len(self.labels):
            raise ValueError("adjacency must be square and match the labels")
        if not (adj == adj.T).all() or not adj.diagonal().all():
            raise ValueError("adjacency must be symmetric with a true diagonal")
        object.__setattr__(self, "adj", adj)

    @classmethod
    def from_matrix(cls, adj, labels=None) -> VoteGraph:
        adj = np.asarray(adj, dtype=bool)
        labels = tuple(labels) if labels is not None else tuple(str(k) for k in range(adj.shape[0]))
        return cls(labels, adj)


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def max_cliques(g: VoteGraph) -> list[tuple[int, ...]]:
    """All cliques of maximum cardinality, as sorted vertex-index tuples in lexicographic order.

    Bron-Kerbosch with Tomita pivoting over integer bitsets; maximal cliques
    smaller than the best found so far are discarded on the fly.
    """
    m = len(g.labels)
    if m == 0:
        raise EmptyGraph("the voting graph has no vertices")
    if m > MAX_VERTICES:
        raise ValueError(f"at most {MAX_VERTICES} vertices supported, got {m}")
    nbrs = [sum(1 << k for k in range(m) if g.adj[v, k] and k != v) for v in range(m)]

    best: list[int] = []
    best_size = 0

    def expand(r: int, size: int, p: int, x: int) -> None:
        nonlocal best, best_size
        if not p and not x:
            if size > best_size:
                best, best_size = [r], size
            elif size == best_size:
                best.append(r)
            return
        if size + p.bit_count() < best_size:
            return
        pivot = max(_bits(p | x), key=lambda u: (p & nbrs[u]).bit_count())
        for v in _bits(p & ~nbrs[pivot]):
            expand(r | (1 << v), size + 1, p & nbrs[v], x & nbrs[v])
            p &= ~(1 << v)
            x |= 1 << v

    expand(0, 0, (1 << m) - 1, 0)
    return sorted(tuple(_bits(r)) for r in best)
