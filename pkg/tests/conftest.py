"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from dynmatch.compat import AgentType, CompatibilityGraph
from dynmatch.sim import OUTCOME_DEPARTED, OUTCOME_MATCHED, SimTrace


def random_typed_graph(
    rng: np.random.Generator, n_max: int = 12, edge_p: float | None = None
) -> CompatibilityGraph:
    n = int(rng.integers(2, n_max + 1))
    types = rng.integers(0, 2, n).astype(np.uint8)
    p = edge_p if edge_p is not None else float(rng.uniform(0.05, 0.6))
    edges = [
        (i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p
    ]
    return CompatibilityGraph.from_edges(types, edges)


def type_measures(trace: SimTrace, type_: AgentType, warmup: int | None = None):
    """(match_rate, mean_matching_time, mean_waiting, n_completed) for a type."""
    warmup = trace.config.warmup_agents if warmup is None else warmup
    post = np.arange(trace.n_agents) >= warmup
    sel = post & (trace.types == type_.code)
    matched = sel & (trace.outcome == OUTCOME_MATCHED)
    departed = sel & (trace.outcome == OUTCOME_DEPARTED)
    n_m, n_d = int(matched.sum()), int(departed.sum())
    waits = trace.exit - trace.arrival
    q = n_m / (n_m + n_d) if n_m + n_d else float("nan")
    mt = float(waits[matched].mean()) if n_m else float("nan")
    w = float(waits[matched | departed].mean()) if n_m + n_d else float("nan")
    return q, mt, w, n_m + n_d


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
