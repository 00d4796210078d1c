"""Compatibility models, static pool sampling, and static market measures.

The market has two agent types: easy-to-match (E) and hard-to-match (H).
Under the two-type model an E-H pair is compatible with probability p, an
E-E pair with probability q, and H-H pairs never are.  A homogeneous model
treats every pair alike, and a matrix model replays a fixed empirical pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence, Union

import numpy as np

from . import _pairhash
from .errors import AsymmetricMatrix, EmptyGraph, InvalidParameter, ParseError

E_CODE = 0
H_CODE = 1


class AgentType(Enum):
    EASY = "E"
    HARD = "H"

    @property
    def code(self) -> int:
        return E_CODE if self is AgentType.EASY else H_CODE

    @classmethod
    def from_code(cls, code: int) -> "AgentType":
        return cls.EASY if code == E_CODE else cls.HARD

    @classmethod
    def parse(cls, token: str) -> "AgentType":
        token = token.strip().upper()
        if token == "E":
            return cls.EASY
        if token == "H":
            return cls.HARD
        raise ValueError(f"unknown agent type {token!r}")


def _check_prob(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and 0.0 <= value <= 1.0):
        raise InvalidParameter(f"{name} must be a probability in [0, 1], got {value!r}")


@dataclass(frozen=True)
class TwoTypeModel:
    """E-H pairs compatible w.p. p, E-E pairs w.p. q, H-H pairs never."""

    p: float
    q: float

    def __post_init__(self) -> None:
        _check_prob("p", self.p)
        _check_prob("q", self.q)

    def threshold_matrix(self) -> list[list[int]]:
        tp = _pairhash.threshold(self.p)
        tq = _pairhash.threshold(self.q)
        return [[tq, tp], [tp, 0]]


@dataclass(frozen=True)
class HomogeneousModel:
    """A single agent class: every pair is compatible w.p. p."""

    p: float

    def __post_init__(self) -> None:
        _check_prob("p", self.p)

    def threshold_matrix(self) -> list[list[int]]:
        t = _pairhash.threshold(self.p)
        return [[t, t], [t, t]]


@dataclass(frozen=True, eq=False)
class MatrixModel:
    """Empirical pool: row i is an agent profile, bits[i, j] its compatibility.

    Dynamic simulations draw each arrival's profile uniformly at random (with
    replacement) from the n rows; two copies of the same row are incompatible
    because the diagonal is forced to False.
    """

    bits: np.ndarray
    labels: tuple[AgentType, ...]
    row_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        object.__setattr__(self, "bits", bits)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise InvalidParameter(f"bits must be a square matrix, got shape {bits.shape}")
        n = bits.shape[0]
        if len(self.labels) != n:
            raise InvalidParameter(f"{len(self.labels)} labels for {n} rows")
        if bits.diagonal().any():
            raise AsymmetricMatrix("diagonal entries must be 0 (an agent cannot match itself)")
        if not (bits == bits.T).all():
            raise AsymmetricMatrix("compatibility matrix is not symmetric")
        if self.row_ids and len(self.row_ids) != n:
            raise InvalidParameter(f"{len(self.row_ids)} row ids for {n} rows")

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def label_codes(self) -> np.ndarray:
        return np.array([t.code for t in self.labels], dtype=np.uint8)


CompatModel = Union[TwoTypeModel, HomogeneousModel, MatrixModel]


def compatible(
    model: CompatModel,
    a: tuple[AgentType, int],
    b: tuple[AgentType, int],
    stream_seed: int,
) -> bool:
    """Deterministic compatibility query for an unordered agent pair.

    For stochastic models the result is a pure function of (min id, max id,
    stream_seed); swapping the arguments or repeating the query cannot change
    it.  For a matrix model the ids index rows and the stored bit is returned.
    """
    (ta, ia), (tb, ib) = a, b
    if isinstance(model, MatrixModel):
        if not (0 <= ia < model.n and 0 <= ib < model.n):
            raise InvalidParameter(f"row ids ({ia}, {ib}) outside 0..{model.n - 1}")
        return bool(model.bits[ia, ib])
    if ia == ib:
        raise InvalidParameter("an agent cannot be queried against itself")
    thr = model.threshold_matrix()[ta.code][tb.code]
    if thr <= 0:
        return False
    lo, hi = (ia, ib) if ia < ib else (ib, ia)
    u = _pairhash.pair_u64(
        _pairhash.agent_key(lo, stream_seed), _pairhash.agent_key(hi, stream_seed)
    )
    return u < thr


@dataclass
class CompatibilityGraph:
    """A realized pool: vertex types plus an undirected edge set."""

    types: np.ndarray  # uint8 codes, E_CODE / H_CODE
    adj: list[np.ndarray]  # per-vertex sorted neighbor indices

    def __post_init__(self) -> None:
        self.types = np.asarray(self.types, dtype=np.uint8)
        if len(self.adj) != self.n:
            raise InvalidParameter("adjacency length does not match vertex count")

    @property
    def n(self) -> int:
        return int(self.types.shape[0])

    @classmethod
    def from_edges(
        cls, types: Sequence[int] | np.ndarray, edges: Sequence[tuple[int, int]]
    ) -> "CompatibilityGraph":
        types = np.asarray(types, dtype=np.uint8)
        n = len(types)
        nbrs: list[list[int]] = [[] for _ in range(n)]
        seen: set[tuple[int, int]] = set()
        for u, v in edges:
            if u == v:
                raise InvalidParameter(f"self-loop at vertex {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise InvalidParameter(f"edge ({u}, {v}) outside 0..{n - 1}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                continue
            seen.add(key)
            nbrs[u].append(v)
            nbrs[v].append(u)
        adj = [np.array(sorted(lst), dtype=np.int32) for lst in nbrs]
        return cls(types=types, adj=adj)

    def edges(self) -> Iterator[tuple[int, int]]:
        for u in range(self.n):
            for v in self.adj[u]:
                if u < v:
                    yield u, int(v)

    def n_edges(self) -> int:
        return sum(len(a) for a in self.adj) // 2

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adj], dtype=np.int64)

    def has_edge(self, u: int, v: int) -> bool:
        a = self.adj[u]
        i = int(np.searchsorted(a, v))
        return i < len(a) and a[i] == v

    def has_hh_edge(self) -> bool:
        for u in range(self.n):
            if self.types[u] == H_CODE and len(self.adj[u]) and (
                self.types[self.adj[u]] == H_CODE
            ).any():
                return True
        return False


@dataclass(frozen=True)
class Matching:
    """A set of vertex-disjoint compatible pairs, normalized as (u < v)."""

    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def from_pairs(cls, pairs) -> "Matching":
        norm = sorted((u, v) if u < v else (v, u) for u, v in pairs)
        return cls(pairs=tuple(norm))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def matched_vertices(self) -> set[int]:
        out: set[int] = set()
        for u, v in self.pairs:
            out.add(u)
            out.add(v)
        return out

    def n_matched_of_type(self, graph: CompatibilityGraph, type_code: int) -> int:
        return sum(1 for w in self.matched_vertices() if graph.types[w] == type_code)

    def validate(self, graph: CompatibilityGraph) -> None:
        seen: set[int] = set()
        for u, v in self.pairs:
            if u in seen or v in seen:
                raise InvalidParameter(f"vertex reused by pair ({u}, {v})")
            seen.update((u, v))
            if not graph.has_edge(u, v):
                raise InvalidParameter(f"pair ({u}, {v}) is not an edge of the graph")


def _round_count(x: float) -> int:
    return int(np.floor(x + 0.5))


def sample_static_pool(
    m: int, lam: float, model: CompatModel, seed: int
) -> CompatibilityGraph:
    """Draw a static pool with m easy and round((1+lam)*m) hard agents.

    Stochastic models realize every pairwise edge through the deterministic
    pair-coin stream keyed by ``seed``.  Matrix models sample agent profiles
    from rows carrying the matching label.
    """
    if m < 1:
        raise InvalidParameter(f"m must be >= 1, got {m}")
    if lam < -1:
        raise InvalidParameter(f"imbalance must be >= -1, got {lam}")
    n_h = _round_count((1.0 + lam) * m)
    if isinstance(model, MatrixModel):
        return _sample_matrix_pool(m, n_h, model, seed)
    if isinstance(model, HomogeneousModel):
        # A single agent class: the nominal E/H split collapses to one type.
        types = np.zeros(m + n_h, dtype=np.uint8)
    else:
        types = np.concatenate(
            [np.zeros(m, dtype=np.uint8), np.ones(n_h, dtype=np.uint8)]
        )
    return realized_graph(types, np.arange(len(types)), model, seed)


def _sample_matrix_pool(
    n_e: int, n_h: int, model: MatrixModel, seed: int
) -> CompatibilityGraph:
    codes = model.label_codes()
    e_rows = np.flatnonzero(codes == E_CODE)
    h_rows = np.flatnonzero(codes == H_CODE)
    if n_e > 0 and len(e_rows) == 0:
        raise InvalidParameter("matrix pool has no E-labeled rows to sample from")
    if n_h > 0 and len(h_rows) == 0:
        raise InvalidParameter("matrix pool has no H-labeled rows to sample from")
    rng = np.random.default_rng(seed)
    rows = np.concatenate(
        [
            rng.choice(e_rows, size=n_e, replace=True),
            rng.choice(h_rows, size=n_h, replace=True),
        ]
    )
    types = codes[rows]
    sub = model.bits[np.ix_(rows, rows)]
    iu, ju = np.nonzero(np.triu(sub, k=1))
    adj = _adj_from_edge_arrays(len(rows), iu, ju)
    return CompatibilityGraph(types=types, adj=adj)


def realized_graph(
    types: np.ndarray, ids: np.ndarray, model: CompatModel, stream_seed: int
) -> CompatibilityGraph:
    """Materialize the compatibility graph over agents with the given ids.

    Vertex k of the result corresponds to agent ids[k]; edges are the
    realized pair coins, so the result is consistent with compatible().
    """
    if isinstance(model, MatrixModel):
        sub = model.bits[np.ix_(ids, ids)]
        iu, ju = np.nonzero(np.triu(sub, k=1))
        return CompatibilityGraph(
            types=np.asarray(types, dtype=np.uint8),
            adj=_adj_from_edge_arrays(len(ids), iu, ju),
        )
    types = np.asarray(types, dtype=np.uint8)
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    if n < 2:
        return CompatibilityGraph(types=types, adj=[np.empty(0, np.int32)] * n)
    iu, ju = np.triu_indices(n, k=1)
    id_i, id_j = ids[iu], ids[ju]
    lo = np.minimum(id_i, id_j)
    hi = np.maximum(id_i, id_j)
    seed_u = np.uint64(stream_seed & ((1 << 64) - 1))
    klo = _pairhash._mix64_np(seed_u + (lo.astype(np.uint64) + np.uint64(1)) * _pairhash._GAMMA_U)
    khi = _pairhash._mix64_np(seed_u + (hi.astype(np.uint64) + np.uint64(1)) * _pairhash._GAMMA_U)
    u = _pairhash.pair_u64_np(klo, khi)
    thr = model.threshold_matrix()
    # group by type pair so the exact integer thresholds are preserved
    group = types[iu].astype(np.int64) * 2 + types[ju]
    ok = np.zeros(len(u), dtype=bool)
    for g in np.unique(group):
        mask = group == g
        ok[mask] = _pairhash.below_threshold_np(u[mask], thr[g >> 1][g & 1])
    return CompatibilityGraph(
        types=types, adj=_adj_from_edge_arrays(n, iu[ok], ju[ok])
    )


def _adj_from_edge_arrays(n: int, iu: np.ndarray, ju: np.ndarray) -> list[np.ndarray]:
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for u, v in zip(iu.tolist(), ju.tolist()):
        nbrs[u].append(v)
        nbrs[v].append(u)
    return [np.array(sorted(lst), dtype=np.int32) for lst in nbrs]


def smm(graph: CompatibilityGraph) -> float:
    """Normalized size of a maximum matching: matched agents / all agents."""
    from .matching import max_cardinality_matching

    if graph.n == 0:
        raise EmptyGraph("SMM is undefined on an empty graph")
    mu = max_cardinality_matching(graph)
    return 2.0 * mu.n_pairs / graph.n


def fwp(graph: CompatibilityGraph) -> float:
    """Fraction of agents without any compatible partner (isolated vertices).

    A vertex belongs to some matching iff it has at least one edge, so the
    isolated-vertex fraction equals the fraction never matched in any matching.
    """
    if graph.n == 0:
        raise EmptyGraph("FWP is undefined on an empty graph")
    return float(sum(1 for a in graph.adj if len(a) == 0)) / graph.n


def sequential_greedy_match(
    graph: CompatibilityGraph, order: Sequence[int]
) -> "Matching":
    """Visit vertices in the given order, pairing each with its first unmatched
    neighbor (lowest index).  Returns a maximal matching."""
    n = graph.n
    if sorted(order) != list(range(n)):
        raise InvalidParameter("order must be a permutation of the vertices")
    matched = np.full(n, -1, dtype=np.int64)
    pairs: list[tuple[int, int]] = []
    for v in order:
        if matched[v] != -1:
            continue
        for u in graph.adj[v]:
            if matched[u] == -1:
                matched[v] = u
                matched[u] = v
                pairs.append((v, int(u)))
                break
    return Matching.from_pairs(pairs)


def load_pool_matrix(path: str) -> MatrixModel:
    """Read a pool matrix file.

    Format: line 1 holds n; lines 2..n+1 hold ``id,type`` with type E or H;
    the final n lines hold n comma-separated 0/1 entries each.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"expected row count, got {lines[0]!r}", line=1) from None
    if n < 1:
        raise ParseError(f"row count must be >= 1, got {n}", line=1)
    if len(lines) < 1 + 2 * n:
        raise ParseError(
            f"expected {1 + 2 * n} lines for n={n}, found {len(lines)}",
            line=len(lines),
        )
    ids: list[str] = []
    labels: list[AgentType] = []
    for k in range(n):
        ln = 2 + k
        parts = lines[1 + k].split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 'id,type', got {lines[1 + k]!r}", line=ln)
        ids.append(parts[0].strip())
        try:
            labels.append(AgentType.parse(parts[1]))
        except ValueError as exc:
            raise ParseError(str(exc), line=ln) from None
    bits = np.zeros((n, n), dtype=bool)
    for k in range(n):
        ln = 2 + n + k
        parts = lines[1 + n + k].split(",")
        if len(parts) != n:
            raise ParseError(f"expected {n} entries, found {len(parts)}", line=ln)
        for j, tok in enumerate(parts):
            tok = tok.strip()
            if tok not in ("0", "1"):
                raise ParseError(f"matrix entries must be 0 or 1, got {tok!r}", line=ln)
            bits[k, j] = tok == "1"
    return MatrixModel(bits=bits, labels=tuple(labels), row_ids=tuple(ids))


def save_pool_matrix(model: MatrixModel, path: str) -> None:
    """Write a MatrixModel in the load_pool_matrix() file format."""
    n = model.n
    ids = model.row_ids if model.row_ids else tuple(str(i) for i in range(n))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{n}\n")
        for i in range(n):
            fh.write(f"{ids[i]},{model.labels[i].value}\n")
        for i in range(n):
            fh.write(",".join("1" if b else "0" for b in model.bits[i]) + "\n")
