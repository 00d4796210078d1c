"""Discrete-event simulator for the dynamic two-type matching market.

Easy agents arrive Poisson(m), hard agents Poisson((1+lam)*m); every agent
draws an exponential criticality clock (mean d) at arrival.  A policy hook
fires on arrival (greedy), on criticality (patient), or on a fixed period
(batching).  Events are processed exactly (no time discretization) from a
binary heap keyed (time, seq), so a run is a pure function of its config.

Random streams are split so that common-random-number comparisons work:
arrival times, types and criticality draws come from one stream consumed in
arrival order; pairwise compatibility coins are counter-based hashes of the
agent id pair; policy-internal randomness (search order, batch tie-breaks)
lives on separate streams.  Two policies run with the same seed therefore
see identical markets.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import IO, Optional, Union

import numpy as np

from . import _pairhash
from .compat import (
    AgentType,
    CompatibilityGraph,
    CompatModel,
    E_CODE,
    H_CODE,
    HomogeneousModel,
    MatrixModel,
    TwoTypeModel,
)
from .errors import InvalidConfig
from .matching import pool_matching_h_priority, saturate_left

OUTCOME_CENSORED = 0
OUTCOME_MATCHED = 1
OUTCOME_DEPARTED = 2
OUTCOME_REJECTED = 3

OUTCOME_NAMES = {
    OUTCOME_CENSORED: "censored",
    OUTCOME_MATCHED: "matched",
    OUTCOME_DEPARTED: "departed",
    OUTCOME_REJECTED: "rejected",
}

_EV_ARRIVAL = 0
_EV_CRITICAL = 1
_EV_BATCH = 2

_MASK = (1 << 64) - 1
_CHUNK = 32768


@dataclass(frozen=True)
class Greedy:
    """Match each agent on arrival if possible (H partners first)."""


@dataclass(frozen=True)
class Patient:
    """Match an agent only at its criticality instant (H partners first)."""


@dataclass(frozen=True)
class Batching:
    """Run an H-priority maximum matching over the pool every T days."""

    T: float

    def __post_init__(self) -> None:
        if not self.T > 0:
            raise InvalidConfig(f"batching period must be positive, got {self.T}")


Policy = Union[Greedy, Patient, Batching]


def policy_name(policy: Policy) -> str:
    if isinstance(policy, Greedy):
        return "greedy"
    if isinstance(policy, Patient):
        return "patient"
    return f"batching[T={policy.T:g}]"


@dataclass
class SimConfig:
    m: float  # E arrival rate (agents/day)
    lam: float  # imbalance: H arrival rate is (1+lam)*m
    d: float  # mean sojourn (days); criticality rate 1/d
    model: CompatModel
    policy: Policy
    horizon_arrivals: int
    warmup_agents: int = 0
    capacity_kappa: Optional[float] = None  # C = kappa * total arrival rate
    seed: int = 0
    checkpoint_stride: int = 8192

    def __post_init__(self) -> None:
        if not self.m > 0:
            raise InvalidConfig(f"m must be positive, got {self.m}")
        if not self.d > 0:
            raise InvalidConfig(f"d must be positive, got {self.d}")
        if self.lam < -1:
            raise InvalidConfig(f"imbalance must be >= -1, got {self.lam}")
        if self.horizon_arrivals < 1:
            raise InvalidConfig("horizon_arrivals must be >= 1")
        if not 0 <= self.warmup_agents < self.horizon_arrivals:
            raise InvalidConfig(
                f"need 0 <= warmup ({self.warmup_agents}) < horizon "
                f"({self.horizon_arrivals})"
            )
        if self.capacity_kappa is not None and not self.capacity_kappa > 0:
            raise InvalidConfig("capacity_kappa must be positive when set")
        if self.checkpoint_stride < 1:
            raise InvalidConfig("checkpoint_stride must be >= 1")

    @property
    def total_arrival_rate(self) -> float:
        # Matrix pools replay empirical profiles: one merged stream at rate m.
        if isinstance(self.model, MatrixModel):
            return self.m
        return (2.0 + self.lam) * self.m

    @property
    def capacity(self) -> float:
        if self.capacity_kappa is None:
            return float("inf")
        return self.capacity_kappa * self.total_arrival_rate


@dataclass
class SimTrace:
    """Per-agent records plus exact time-integrals of the pool sizes."""

    config: SimConfig
    types: np.ndarray  # uint8 per agent
    arrival: np.ndarray
    criticality: np.ndarray  # absolute clock time drawn at arrival
    exit: np.ndarray
    outcome: np.ndarray  # uint8 outcome codes
    partner: np.ndarray  # int64, -1 when none
    end_time: float
    warmup_time: float
    # pool-size integrals (exact, accumulated at every event)
    integral_h_warm: float
    integral_e_warm: float
    integral_h_end: float
    integral_e_end: float
    # decimated checkpoints: instantaneous counts + cumulative integrals
    ck_time: np.ndarray
    ck_h: np.ndarray
    ck_e: np.ndarray
    ck_integral_h: np.ndarray
    ck_integral_e: np.ndarray
    n_events: int
    rows: Optional[np.ndarray] = None  # matrix-model profile per agent

    @property
    def n_agents(self) -> int:
        return len(self.types)

    def window(self) -> tuple[float, float]:
        """Post-warmup measurement window (start, end)."""
        return self.warmup_time, self.end_time

    def mean_pool_postwarmup(self) -> tuple[float, float]:
        """Time-averaged (E pool, H pool) sizes over the post-warmup window."""
        span = self.end_time - self.warmup_time
        if span <= 0:
            return 0.0, 0.0
        return (
            (self.integral_e_end - self.integral_e_warm) / span,
            (self.integral_h_end - self.integral_h_warm) / span,
        )

    def to_csv(self, fh: IO[str]) -> None:
        """Write per-agent records; deterministic byte-for-byte given the trace."""
        fh.write("id,type,arrival,criticality,exit,outcome,partner_id,partner_type\n")
        types = self.types
        outc = self.outcome
        part = self.partner
        for i in range(self.n_agents):
            p = int(part[i])
            if p >= 0:
                ptxt = f"{p},{AgentType.from_code(int(types[p])).value}"
            else:
                ptxt = ","
            fh.write(
                f"{i},{AgentType.from_code(int(types[i])).value},"
                f"{self.arrival[i]!r},{self.criticality[i]!r},{self.exit[i]!r},"
                f"{OUTCOME_NAMES[int(outc[i])]},{ptxt}\n"
            )


class _BitBuffer:
    """Buffered uint64 stream with an unbiased-enough bounded-int draw."""

    __slots__ = ("_gen", "_buf", "_i")

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self._buf: list[int] = []
        self._i = 0

    def randbelow(self, k: int) -> int:
        i = self._i
        buf = self._buf
        if i >= len(buf):
            buf = self._gen.integers(0, 1 << 64, 8192, dtype=np.uint64).tolist()
            self._buf = buf
            i = 0
        self._i = i + 1
        return (buf[i] * k) >> 64


def run_simulation(config: SimConfig) -> SimTrace:
    """Run one exact-event simulation; deterministic given the config."""
    model = config.model
    horizon = config.horizon_arrivals
    warmup = config.warmup_agents
    d = config.d
    total_rate = config.total_arrival_rate
    capacity = config.capacity
    policy = config.policy
    is_greedy = isinstance(policy, Greedy)
    is_patient = isinstance(policy, Patient)
    is_batching = isinstance(policy, Batching)
    batch_T = policy.T if is_batching else 0.0

    ss = np.random.SeedSequence(config.seed)
    market_ss, scan_ss, batch_ss, compat_ss = ss.spawn(4)
    market_rng = np.random.Generator(np.random.PCG64(market_ss))
    scan_bits = _BitBuffer(np.random.Generator(np.random.PCG64(scan_ss)))
    batch_rng = np.random.Generator(np.random.PCG64(batch_ss))
    compat_seed = int(compat_ss.generate_state(1, np.uint64)[0])

    use_bits = isinstance(model, MatrixModel)
    if use_bits:
        bits = model.bits
        label_codes = model.label_codes()
        n_rows = model.n
        thr_mat = [[0, 0], [0, 0]]
    else:
        bits = None
        label_codes = None
        n_rows = 0
        thr_mat = model.threshold_matrix()
    homogeneous = isinstance(model, HomogeneousModel)

    p_easy = 1.0 / (2.0 + config.lam) if config.lam > -2 else 1.0

    # market draws, extended chunk by chunk in arrival order
    dt_list: list[float] = []
    crit_dur: list[float] = []
    tp: list[int] = []
    rows: list[int] = []
    keys: list[int] = []
    keys_arr = np.empty(horizon, dtype=np.uint64)

    def _extend_market() -> None:
        base = len(dt_list)
        k = min(_CHUNK, horizon - base)
        dt_list.extend(market_rng.exponential(1.0 / total_rate, k).tolist())
        tdraw = (market_rng.random(k) >= p_easy).astype(np.uint8)
        crit_dur.extend(market_rng.exponential(d, k).tolist())
        if use_bits:
            rchunk = market_rng.integers(0, n_rows, k)
            rows.extend(rchunk.tolist())
            tp.extend(label_codes[rchunk].tolist())
        elif homogeneous:
            tp.extend([0] * k)  # single agent class
        else:
            tp.extend(tdraw.tolist())
        kchunk = _pairhash.agent_keys(k, compat_seed, start=base)
        keys_arr[base : base + k] = kchunk
        keys.extend(kchunk.tolist())

    _extend_market()

    # per-agent records (python lists in the hot loop, arrays afterwards)
    exit_t = [0.0] * horizon
    outcome = [OUTCOME_CENSORED] * horizon
    partner = [-1] * horizon
    arrival_t = [0.0] * horizon

    # pools: id lists + positional index; which[aid] in (-1 none, E_CODE, H_CODE)
    hp: list[int] = []
    ep: list[int] = []
    pos = [-1] * horizon
    which = [-1] * horizon

    pair_u64 = _pairhash.pair_u64
    randbelow = scan_bits.randbelow

    def _search(aid: int, at: int) -> int:
        """H-first random-permutation scan of the pools; -1 when no match."""
        akey = keys[aid]
        arow = rows[aid] if use_bits else 0
        for pool, pt in ((hp, H_CODE), (ep, E_CODE)):
            L = len(pool)
            if L == 0:
                continue
            if use_bits:
                thr = None
                brow = bits[arow]
            else:
                thr = thr_mat[at][pt]
                if thr <= 0:
                    continue
            i = 0
            while i < L:
                j = i + randbelow(L - i)
                if j != i:
                    ci, cj = pool[i], pool[j]
                    pool[i] = cj
                    pool[j] = ci
                    pos[cj] = i
                    pos[ci] = j
                cand = pool[i]
                if use_bits:
                    ok = brow[rows[cand]]
                else:
                    ck = keys[cand]
                    ak = akey
                    if cand < aid:
                        ak, ck = ck, ak
                    ok = pair_u64(ak, ck) < thr
                if ok:
                    return cand
                i += 1
        return -1

    def _remove(aid: int) -> None:
        pool = hp if which[aid] == H_CODE else ep
        i = pos[aid]
        last = pool[-1]
        pool[i] = last
        pos[last] = i
        pool.pop()
        pos[aid] = -1
        which[aid] = -1

    def _join(aid: int, at: int) -> None:
        pool = hp if at == H_CODE else ep
        pos[aid] = len(pool)
        pool.append(aid)
        which[aid] = at

    def _record_match(a: int, b: int, t: float) -> None:
        exit_t[a] = t
        exit_t[b] = t
        outcome[a] = OUTCOME_MATCHED
        outcome[b] = OUTCOME_MATCHED
        partner[a] = b
        partner[b] = a

    thr_p_int = 0 if use_bits else thr_mat[E_CODE][H_CODE]
    thr_q_int = 0 if use_bits else thr_mat[E_CODE][E_CODE]

    def _batch_match(t: float) -> None:
        x, y = len(hp), len(ep)
        if x + y < 2:
            return
        pairs: Optional[list[tuple[int, int]]] = None
        if not use_bits and not homogeneous and y > 0 and x > 0:
            pairs = _batch_fast_two_type(
                hp, ep, keys_arr, thr_p_int, batch_rng
            )
        if pairs is None:
            pairs = _batch_generic(
                hp, ep, tp, keys_arr, rows, model, batch_rng
            )
        for a, b in pairs:
            _record_match(a, b, t)
            _remove(a)
            _remove(b)

    # event heap: (time, seq, kind, agent id)
    heap: list[tuple[float, int, int, int]] = []
    push = heapq.heappush
    pop = heapq.heappop
    seq = 0
    push(heap, (dt_list[0], seq, _EV_ARRIVAL, 0))
    seq += 1
    if is_batching:
        push(heap, (batch_T, seq, _EV_BATCH, -1))
        seq += 1

    acc_h = 0.0
    acc_e = 0.0
    last_t = 0.0
    warm_time = 0.0
    warm_acc_h = 0.0
    warm_acc_e = 0.0
    n_events = 0
    stride = config.checkpoint_stride
    ck_time: list[float] = []
    ck_h: list[int] = []
    ck_e: list[int] = []
    ck_ih: list[float] = []
    ck_ie: list[float] = []
    t_end = 0.0

    while heap:
        t, _, kind, aid = pop(heap)
        if t > last_t:
            span = t - last_t
            acc_h += span * len(hp)
            acc_e += span * len(ep)
            last_t = t
        n_events += 1
        if n_events % stride == 0:
            ck_time.append(t)
            ck_h.append(len(hp))
            ck_e.append(len(ep))
            ck_ih.append(acc_h)
            ck_ie.append(acc_e)

        if kind == _EV_ARRIVAL:
            if aid == warmup:
                warm_time = t
                warm_acc_h = acc_h
                warm_acc_e = acc_e
            arrival_t[aid] = t
            at = tp[aid]
            if is_greedy:
                mate = _search(aid, at)
                if mate >= 0:
                    _record_match(aid, mate, t)
                    _remove(mate)
                elif len(hp) + len(ep) >= capacity:
                    outcome[aid] = OUTCOME_REJECTED
                    exit_t[aid] = t
                else:
                    _join(aid, at)
                    push(heap, (t + crit_dur[aid], seq, _EV_CRITICAL, aid))
                    seq += 1
            else:
                if len(hp) + len(ep) >= capacity:
                    outcome[aid] = OUTCOME_REJECTED
                    exit_t[aid] = t
                else:
                    _join(aid, at)
                    push(heap, (t + crit_dur[aid], seq, _EV_CRITICAL, aid))
                    seq += 1
            nxt = aid + 1
            if nxt >= horizon:
                t_end = t
                break
            if nxt >= len(dt_list):
                _extend_market()
            push(heap, (t + dt_list[nxt], seq, _EV_ARRIVAL, nxt))
            seq += 1

        elif kind == _EV_CRITICAL:
            if pos[aid] < 0:
                continue  # already left with a match
            _remove(aid)
            if is_patient:
                mate = _search(aid, tp[aid])
                if mate >= 0:
                    _record_match(aid, mate, t)
                    _remove(mate)
                else:
                    outcome[aid] = OUTCOME_DEPARTED
                    exit_t[aid] = t
            else:
                # greedy pool holds no compatible pair; batching matches only
                # at ticks: the critical agent leaves unmatched either way
                outcome[aid] = OUTCOME_DEPARTED
                exit_t[aid] = t

        else:  # batch tick
            _batch_match(t)
            push(heap, (t + batch_T, seq, _EV_BATCH, -1))
            seq += 1

    for aid in hp:
        exit_t[aid] = t_end
    for aid in ep:
        exit_t[aid] = t_end

    return SimTrace(
        config=config,
        types=np.array(tp[:horizon], dtype=np.uint8),
        arrival=np.array(arrival_t),
        criticality=np.array(arrival_t) + np.array(crit_dur[:horizon]),
        exit=np.array(exit_t),
        outcome=np.array(outcome, dtype=np.uint8),
        partner=np.array(partner, dtype=np.int64),
        end_time=t_end,
        warmup_time=warm_time,
        integral_h_warm=warm_acc_h,
        integral_e_warm=warm_acc_e,
        integral_h_end=acc_h,
        integral_e_end=acc_e,
        ck_time=np.array(ck_time),
        ck_h=np.array(ck_h, dtype=np.int64),
        ck_e=np.array(ck_e, dtype=np.int64),
        ck_integral_h=np.array(ck_ih),
        ck_integral_e=np.array(ck_ie),
        n_events=n_events,
        rows=np.array(rows[:horizon], dtype=np.int64) if use_bits else None,
    )


def _batch_fast_two_type(
    hp: list[int],
    ep: list[int],
    keys_arr: np.ndarray,
    thr_p: int,
    rng: np.random.Generator,
) -> Optional[list[tuple[int, int]]]:
    """Match every pooled E agent to a distinct compatible H agent if possible.

    Pools with no H-H edges make the E side a vertex cover, so a full E-side
    assignment is the lexicographic (cardinality, H-count) optimum and E-E
    pairs cannot improve it.  Returns None when saturation fails; the caller
    then falls back to the general solver.
    """
    h_ids = np.array(hp, dtype=np.int64)
    e_ids = np.array(ep, dtype=np.int64)
    y, x = len(e_ids), len(h_ids)
    if y > x:
        return None
    lo = np.minimum(e_ids[:, None], h_ids[None, :])
    hi = np.maximum(e_ids[:, None], h_ids[None, :])
    u = _pairhash.pair_u64_np(keys_arr[lo], keys_arr[hi])
    adj = _pairhash.below_threshold_np(u, thr_p)
    neigh = [np.flatnonzero(adj[r]) for r in range(y)]
    if any(len(nb) == 0 for nb in neigh):
        return None
    match_l, _ = saturate_left(neigh, x, rng=rng)
    if (match_l < 0).any():
        return None
    return [(int(e_ids[i]), int(h_ids[match_l[i]])) for i in range(y)]


def _batch_generic(
    hp: list[int],
    ep: list[int],
    tp: list[int],
    keys_arr: np.ndarray,
    rows: list[int],
    model: CompatModel,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Exact H-priority matching over the pooled agents (general path)."""
    ids = np.array(hp + ep, dtype=np.int64)
    n = len(ids)
    types = np.array([tp[a] for a in ids.tolist()], dtype=np.uint8)
    if isinstance(model, MatrixModel):
        prof = np.array([rows[a] for a in ids.tolist()], dtype=np.int64)
        sub = model.bits[np.ix_(prof, prof)]
        iu, ju = np.nonzero(np.triu(sub, k=1))
    else:
        iu, ju = np.triu_indices(n, k=1)
        id_i, id_j = ids[iu], ids[ju]
        lo = np.minimum(id_i, id_j)
        hi = np.maximum(id_i, id_j)
        u = _pairhash.pair_u64_np(keys_arr[lo], keys_arr[hi])
        thr = model.threshold_matrix()
        group = types[iu].astype(np.int64) * 2 + types[ju]
        ok = np.zeros(len(u), dtype=bool)
        for g in np.unique(group):
            mask = group == g
            ok[mask] = _pairhash.below_threshold_np(u[mask], thr[g >> 1][g & 1])
        iu, ju = iu[ok], ju[ok]
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for a, b in zip(iu.tolist(), ju.tolist()):
        nbrs[a].append(b)
        nbrs[b].append(a)
    graph = CompatibilityGraph(
        types=types, adj=[np.array(sorted(l), dtype=np.int32) for l in nbrs]
    )
    matching = pool_matching_h_priority(graph, rng)
    return [(int(ids[u]), int(ids[v])) for u, v in matching.pairs]
