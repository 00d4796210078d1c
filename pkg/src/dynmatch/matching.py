"""Exact maximum-cardinality matching with an H-priority secondary objective.

The batch policy needs, among all maximum-cardinality matchings of a pool,
one that maximizes the number of matched hard-to-match agents.  That
lexicographic objective is encoded as an integer max-weight matching with
edge weight 2*(n+1) + (number of H endpoints): any extra pair outweighs all
possible H bonuses, so pure weight maximization optimizes (cardinality,
H-count) in order.

Solver routes:
  * networkx's blossom-based max_weight_matching does the exact general-graph
    work (integer weights, so no duality tolerance issues);
  * a bipartite saturation shortcut handles the common two-type pool shape
    (no H-H edges, plentiful H agents) where matching every E agent to a
    distinct H agent is provably the lexicographic optimum;
  * an independent augmenting-path search (with blossom contraction) and a
    bitmask brute force serve as cross-checking oracles.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import networkx as nx
import numpy as np

from .compat import CompatibilityGraph, E_CODE, H_CODE, Matching
from .errors import InvalidParameter, TooLarge


@dataclass(frozen=True)
class WeightedGraph:
    """Integer-weighted edge list; the reduction target for H-prioritization."""

    n: int
    edges: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        seen: set[tuple[int, int]] = set()
        for u, v, w in self.edges:
            if u == v:
                raise InvalidParameter(f"self-loop at vertex {u}")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise InvalidParameter(f"edge ({u}, {v}) outside 0..{self.n - 1}")
            if w < 0:
                raise InvalidParameter("edge weights must be non-negative")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise InvalidParameter(f"duplicate edge ({u}, {v})")
            seen.add(key)


def _solve_weighted(graph: WeightedGraph) -> Matching:
    g = nx.Graph()
    g.add_nodes_from(range(graph.n))
    for u, v, w in graph.edges:
        g.add_edge(u, v, weight=w)
    pairs = nx.max_weight_matching(g, maxcardinality=False, weight="weight")
    return Matching.from_pairs(pairs)


def h_priority_weight(n: int, h_endpoints: int) -> int:
    """Edge weight making (cardinality, H-count) lexicographic under max-weight."""
    return 2 * (n + 1) + h_endpoints


def max_cardinality_matching(graph: CompatibilityGraph) -> Matching:
    """Exact maximum-cardinality matching on a general graph."""
    if graph.n == 0 or graph.n_edges() == 0:
        return Matching.from_pairs([])
    if not graph.has_hh_edge():
        fast = _e_saturation_matching(graph, rng=None)
        if fast is not None:
            return fast
    g = nx.Graph()
    g.add_nodes_from(range(graph.n))
    for u, v in graph.edges():
        g.add_edge(u, v, weight=1)
    pairs = nx.max_weight_matching(g, maxcardinality=True, weight="weight")
    return Matching.from_pairs(pairs)


def max_matching_h_priority(
    graph: CompatibilityGraph, rng: Optional[np.random.Generator] = None
) -> Matching:
    """Among maximum-cardinality matchings, one maximizing matched H agents.

    Ties beyond the lexicographic objective are broken by permuting the edge
    input order with ``rng`` before solving; the solver itself is
    deterministic given input order.
    """
    n = graph.n
    edge_list = list(graph.edges())
    if not edge_list:
        return Matching.from_pairs([])
    if rng is not None:
        order = rng.permutation(len(edge_list))
        edge_list = [edge_list[i] for i in order]
    types = graph.types
    weighted = WeightedGraph(
        n=n,
        edges=tuple(
            (
                u,
                v,
                h_priority_weight(
                    n, int(types[u] == H_CODE) + int(types[v] == H_CODE)
                ),
            )
            for u, v in edge_list
        ),
    )
    return _solve_weighted(weighted)


def pool_matching_h_priority(
    graph: CompatibilityGraph, rng: Optional[np.random.Generator] = None
) -> Matching:
    """Production batch-tick solver: exact H-priority optimum, fast path first.

    When the graph has no H-H edges, the E vertices form a vertex cover, so
    no matching can exceed one pair per E agent.  If every E agent can be
    assigned a distinct compatible H agent, that assignment simultaneously
    maximizes cardinality and the H-count, and no E-E pair can be added.
    Otherwise the general weighted solver decides.
    """
    if graph.n == 0 or all(len(a) == 0 for a in graph.adj):
        return Matching.from_pairs([])
    if not graph.has_hh_edge():
        fast = _e_saturation_matching(graph, rng=rng)
        if fast is not None:
            return fast
    return max_matching_h_priority(graph, rng)


def _e_saturation_matching(
    graph: CompatibilityGraph, rng: Optional[np.random.Generator]
) -> Optional[Matching]:
    """Try to match every E vertex to a distinct H vertex; None if impossible."""
    types = graph.types
    e_idx = np.flatnonzero(types == E_CODE)
    h_idx = np.flatnonzero(types == H_CODE)
    if len(e_idx) == 0:
        return Matching.from_pairs([])
    if len(h_idx) < len(e_idx):
        return None
    h_rank = np.full(graph.n, -1, dtype=np.int64)
    h_rank[h_idx] = np.arange(len(h_idx))
    neigh: list[np.ndarray] = []
    for v in e_idx:
        a = graph.adj[v]
        hn = h_rank[a[types[a] == H_CODE]]
        if len(hn) == 0:
            return None
        neigh.append(hn)
    match_l, match_r = saturate_left(neigh, len(h_idx), rng=rng)
    if (match_l < 0).any():
        return None
    pairs = [(int(e_idx[i]), int(h_idx[match_l[i]])) for i in range(len(e_idx))]
    return Matching.from_pairs(pairs)


def saturate_left(
    neigh: Sequence[np.ndarray],
    n_right: int,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Maximum bipartite matching (greedy seed + augmenting paths).

    ``neigh[i]`` lists the right-neighbors of left vertex i.  With an rng the
    left processing order and each neighbor scan are permuted, so the selected
    optimum is exchangeable over right-vertex relabelings; without one the
    scan is in index order and deterministic.
    """
    n_left = len(neigh)
    match_l = np.full(n_left, -1, dtype=np.int64)
    match_r = np.full(n_right, -1, dtype=np.int64)
    if rng is not None:
        order = rng.permutation(n_left)
        scan = [np.asarray(a)[rng.permutation(len(a))] for a in neigh]
    else:
        order = np.arange(n_left)
        scan = [np.asarray(a) for a in neigh]
    leftovers: list[int] = []
    for i in order.tolist():
        hit = -1
        for v in scan[i].tolist():
            if match_r[v] == -1:
                hit = v
                break
        if hit >= 0:
            match_l[i] = hit
            match_r[hit] = i
        else:
            leftovers.append(i)
    for i in leftovers:
        visited = np.zeros(n_right, dtype=bool)
        _kuhn_augment(i, scan, match_l, match_r, visited)
    return match_l, match_r


def _kuhn_augment(
    start: int,
    neigh: Sequence[np.ndarray],
    match_l: np.ndarray,
    match_r: np.ndarray,
    visited: np.ndarray,
) -> bool:
    """Iterative alternating-path search from a free left vertex."""
    # stack entries: (left vertex, iterator over its neighbor list)
    stack: list[tuple[int, int]] = [(start, 0)]
    path: list[tuple[int, int]] = []  # (left, right) tentative assignments
    while stack:
        u, ptr = stack[-1]
        nbrs = neigh[u]
        advanced = False
        while ptr < len(nbrs):
            v = int(nbrs[ptr])
            ptr += 1
            if visited[v]:
                continue
            visited[v] = True
            if match_r[v] == -1:
                # flip along the discovered path
                path.append((u, v))
                for lu, rv in path:
                    match_l[lu] = rv
                    match_r[rv] = lu
                return True
            stack[-1] = (u, ptr)
            path.append((u, v))
            stack.append((int(match_r[v]), 0))
            advanced = True
            break
        if not advanced:
            stack.pop()
            if path and stack:
                path.pop()
            elif not stack:
                break
    return False


def brute_force_matching(
    graph: CompatibilityGraph,
    objective: Literal["cardinality", "cardinality-then-h"] = "cardinality",
) -> Matching:
    """Exhaustive lexicographic optimum over all matchings (n <= 16)."""
    n = graph.n
    if n > 16:
        raise TooLarge(f"brute force capped at 16 vertices, got {n}")
    if objective not in ("cardinality", "cardinality-then-h"):
        raise InvalidParameter(f"unknown objective {objective!r}")
    adj_mask = [0] * n
    for u, v in graph.edges():
        adj_mask[u] |= 1 << v
        adj_mask[v] |= 1 << u
    h_bit = [1 if graph.types[v] == H_CODE else 0 for v in range(n)]
    use_h = objective == "cardinality-then-h"
    memo: dict[int, tuple[tuple[int, int], tuple[tuple[int, int], ...]]] = {}

    def best(mask: int) -> tuple[tuple[int, int], tuple[tuple[int, int], ...]]:
        if mask == 0:
            return (0, 0), ()
        hit = memo.get(mask)
        if hit is not None:
            return hit
        v = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << v)
        value, pairs = best(rest)  # leave v unmatched
        avail = adj_mask[v] & rest
        while avail:
            u = (avail & -avail).bit_length() - 1
            avail &= avail - 1
            sub_value, sub_pairs = best(rest & ~(1 << u))
            cand = (
                sub_value[0] + 1,
                sub_value[1] + (h_bit[v] + h_bit[u] if use_h else 0),
            )
            if cand > value:
                value, pairs = cand, sub_pairs + ((v, u),)
        memo[mask] = (value, pairs)
        return value, pairs

    _, pairs = best((1 << n) - 1)
    return Matching.from_pairs(pairs)


def matching_value(graph: CompatibilityGraph, matching: Matching) -> tuple[int, int]:
    """(cardinality, matched-H count) of a matching — the lexicographic score."""
    return matching.n_pairs, matching.n_matched_of_type(graph, H_CODE)


# ---------------------------------------------------------------------------
# Independent augmenting-path machinery (Berge certification, cross-checks)
# ---------------------------------------------------------------------------


def _find_augmenting_path(
    adj: Sequence[np.ndarray], match: list[int], root: int, n: int
) -> tuple[int, list[int]]:
    """BFS search for an augmenting path from ``root``, contracting blossoms.

    Returns (endpoint, parent) where endpoint is the free vertex closing an
    augmenting path, or (-1, parent) if none exists.
    """
    used = [False] * n
    parent = [-1] * n
    base = list(range(n))
    used[root] = True
    q: deque[int] = deque([root])

    def lca(a: int, b: int) -> int:
        seen = [False] * n
        while True:
            a = base[a]
            seen[a] = True
            if match[a] == -1:
                break
            a = parent[match[a]]
        while True:
            b = base[b]
            if seen[b]:
                return b
            b = parent[match[b]]

    def mark_path(v: int, b: int, child: int, in_blossom: list[bool]) -> None:
        while base[v] != b:
            in_blossom[base[v]] = True
            in_blossom[base[match[v]]] = True
            parent[v] = child
            child = match[v]
            v = parent[match[v]]

    while q:
        v = q.popleft()
        for to_ in adj[v]:
            to = int(to_)
            if base[v] == base[to] or match[v] == to:
                continue
            if to == root or (match[to] != -1 and parent[match[to]] != -1):
                cur_base = lca(v, to)
                in_blossom = [False] * n
                mark_path(v, cur_base, to, in_blossom)
                mark_path(to, cur_base, v, in_blossom)
                for i in range(n):
                    if in_blossom[base[i]]:
                        base[i] = cur_base
                        if not used[i]:
                            used[i] = True
                            q.append(i)
            elif parent[to] == -1:
                parent[to] = v
                if match[to] == -1:
                    return to, parent
                used[match[to]] = True
                q.append(match[to])
    return -1, parent


def has_augmenting_path(graph: CompatibilityGraph, matching: Matching) -> bool:
    """Berge check: True iff an augmenting path exists w.r.t. the matching."""
    n = graph.n
    match = [-1] * n
    for u, v in matching.pairs:
        match[u] = v
        match[v] = u
    for root in range(n):
        if match[root] == -1 and len(graph.adj[root]) > 0:
            endpoint, _ = _find_augmenting_path(graph.adj, match, root, n)
            if endpoint != -1:
                return True
    return False


def augmenting_max_matching(graph: CompatibilityGraph) -> Matching:
    """Maximum-cardinality matching via repeated augmenting-path search.

    Kept independent of the weighted solver so the two routes can certify
    each other.
    """
    n = graph.n
    match = [-1] * n
    for v in range(n):  # greedy seed
        if match[v] == -1:
            for u_ in graph.adj[v]:
                u = int(u_)
                if match[u] == -1:
                    match[v] = u
                    match[u] = v
                    break
    for root in range(n):
        if match[root] != -1 or len(graph.adj[root]) == 0:
            continue
        endpoint, parent = _find_augmenting_path(graph.adj, match, root, n)
        if endpoint == -1:
            continue
        v = endpoint
        while v != -1:
            pv = parent[v]
            ppv = match[pv]
            match[v] = pv
            match[pv] = v
            v = ppv
    pairs = [(v, match[v]) for v in range(n) if match[v] != -1 and v < match[v]]
    return Matching.from_pairs(pairs)
