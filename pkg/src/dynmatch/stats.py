"""Aggregate simulation traces into the market performance measures.

Match rate, waiting time (time in market whether matched or not) and
matching time (same, conditioned on matching) are computed per agent type
over post-warmup completions.  Censored-at-end records are excluded
everywhere; capacity rejections are reported as a separate rate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Optional, Sequence

import numpy as np

from .compat import AgentType, E_CODE, H_CODE
from .errors import NoSamples
from .sim import (
    OUTCOME_DEPARTED,
    OUTCOME_MATCHED,
    OUTCOME_REJECTED,
    SimTrace,
)

HIST_BINS = 100


@dataclass
class TypeStats:
    match_rate: float
    mean_waiting: float  # over matched and departed agents
    mean_matching_time: Optional[float]  # over matched agents only
    mean_waiting_unmatched: Optional[float]  # over departed agents only
    n_matched: int
    n_departed: int
    n_rejected: int
    n_censored: int
    arrival_rate: float  # admitted post-warmup arrivals per day
    pool_mean: float  # time-averaged number waiting
    littles_error: float  # |rate * mean_waiting - pool_mean| / pool_mean
    waiting_hist: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)
    matching_hist: tuple[np.ndarray, np.ndarray] = field(repr=False, default=None)

    @property
    def n_total(self) -> int:
        return self.n_matched + self.n_departed


@dataclass
class Report:
    per_type: dict[AgentType, TypeStats]
    warmup_agents: int
    window: tuple[float, float]

    def __getitem__(self, t: AgentType) -> TypeStats:
        return self.per_type[t]

    def flat_dict(self) -> dict[str, float]:
        out: dict[str, float] = {
            "window_start": self.window[0],
            "window_end": self.window[1],
        }
        for t, s in self.per_type.items():
            k = t.value
            out[f"{k}_match_rate"] = s.match_rate
            out[f"{k}_mean_waiting"] = s.mean_waiting
            out[f"{k}_mean_matching_time"] = (
                s.mean_matching_time if s.mean_matching_time is not None else float("nan")
            )
            out[f"{k}_mean_waiting_unmatched"] = (
                s.mean_waiting_unmatched
                if s.mean_waiting_unmatched is not None
                else float("nan")
            )
            out[f"{k}_n_matched"] = s.n_matched
            out[f"{k}_n_departed"] = s.n_departed
            out[f"{k}_n_rejected"] = s.n_rejected
            out[f"{k}_n_censored"] = s.n_censored
            out[f"{k}_arrival_rate"] = s.arrival_rate
            out[f"{k}_pool_mean"] = s.pool_mean
            out[f"{k}_littles_error"] = s.littles_error
        return out

    def to_json(self, fh: IO[str]) -> None:
        json.dump(self.flat_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass
class KSResult:
    statistic: float  # sup-distance in [0, 1]
    n: int
    mle_rate: float  # 1 / sample mean


def _histogram(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(samples) == 0:
        edges = np.linspace(0.0, 1.0, HIST_BINS + 1)
        return np.zeros(HIST_BINS, dtype=np.int64), edges
    top = float(samples.max())
    if top <= 0:
        top = 1.0
    counts, edges = np.histogram(samples, bins=HIST_BINS, range=(0.0, top))
    return counts, edges


def summarize(trace: SimTrace, warmup_agents: Optional[int] = None) -> Report:
    """Reduce a trace to per-type performance measures.

    Raises NoSamples when a type that arrived post-warmup has no completed
    (matched or departed) records.
    """
    if warmup_agents is None:
        warmup_agents = trace.config.warmup_agents
    n = trace.n_agents
    post = np.arange(n) >= warmup_agents
    t_w, t_end = trace.warmup_time, trace.end_time
    span = t_end - t_w
    if span <= 0 or not post.any():
        raise NoSamples("no post-warmup records in trace")
    waits = trace.exit - trace.arrival
    pool_means = dict(zip((E_CODE, H_CODE), (np.nan, np.nan)))
    mean_e, mean_h = trace.mean_pool_postwarmup()
    pool_means[E_CODE] = mean_e
    pool_means[H_CODE] = mean_h

    per_type: dict[AgentType, TypeStats] = {}
    for code in (E_CODE, H_CODE):
        is_t = post & (trace.types == code)
        n_arrived = int(is_t.sum())
        if n_arrived == 0:
            continue  # type absent from this market (e.g. homogeneous pools)
        matched = is_t & (trace.outcome == OUTCOME_MATCHED)
        departed = is_t & (trace.outcome == OUTCOME_DEPARTED)
        rejected = is_t & (trace.outcome == OUTCOME_REJECTED)
        n_m, n_d, n_r = int(matched.sum()), int(departed.sum()), int(rejected.sum())
        n_c = n_arrived - n_m - n_d - n_r
        if n_m + n_d == 0:
            raise NoSamples(
                f"type {AgentType.from_code(code).value} has no post-warmup completions"
            )
        w_completed = waits[matched | departed]
        w_matched = waits[matched]
        w_departed = waits[departed]
        mean_w = float(w_completed.mean())
        rate = (n_m + n_d + n_c) / span  # admitted arrivals per day
        pool_mean = pool_means[code]
        if pool_mean > 0:
            lerr = abs(rate * mean_w - pool_mean) / pool_mean
        else:
            lerr = 0.0 if rate * mean_w == 0 else float("inf")
        per_type[AgentType.from_code(code)] = TypeStats(
            match_rate=n_m / (n_m + n_d),
            mean_waiting=mean_w,
            mean_matching_time=float(w_matched.mean()) if n_m else None,
            mean_waiting_unmatched=float(w_departed.mean()) if n_d else None,
            n_matched=n_m,
            n_departed=n_d,
            n_rejected=n_r,
            n_censored=n_c,
            arrival_rate=rate,
            pool_mean=pool_mean,
            littles_error=lerr,
            waiting_hist=_histogram(w_completed),
            matching_hist=_histogram(w_matched),
        )
    if not per_type:
        raise NoSamples("trace has no post-warmup arrivals of any type")
    return Report(per_type=per_type, warmup_agents=warmup_agents, window=(t_w, t_end))


def waiting_samples(
    trace: SimTrace,
    type_: AgentType,
    warmup_agents: Optional[int] = None,
    matched_only: bool = False,
) -> np.ndarray:
    """Post-warmup waiting (or matching) time samples for one agent type."""
    if warmup_agents is None:
        warmup_agents = trace.config.warmup_agents
    post = np.arange(trace.n_agents) >= warmup_agents
    sel = post & (trace.types == type_.code)
    if matched_only:
        sel &= trace.outcome == OUTCOME_MATCHED
    else:
        sel &= (trace.outcome == OUTCOME_MATCHED) | (trace.outcome == OUTCOME_DEPARTED)
    return trace.exit[sel] - trace.arrival[sel]


def ks_exponential(samples: Sequence[float], rate: Optional[float] = None) -> KSResult:
    """One-sample Kolmogorov-Smirnov sup-distance against Exp(rate).

    The rate defaults to the maximum-likelihood estimate 1/mean.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(x)
    if n == 0:
        raise NoSamples("KS test needs at least one sample")
    if (x < 0).any():
        raise NoSamples("durations must be non-negative")
    mean = float(x.mean())
    mle = 1.0 / mean if mean > 0 else float("inf")
    if rate is None:
        rate = mle
    if rate == float("inf"):
        stat = 1.0  # degenerate mass at zero
    else:
        cdf = 1.0 - np.exp(-rate * x)
        i = np.arange(1, n + 1, dtype=np.float64)
        stat = float(max((i / n - cdf).max(), (cdf - (i - 1) / n).max()))
    return KSResult(statistic=stat, n=n, mle_rate=mle)


def littles_law_check(
    trace: SimTrace, warmup_agents: Optional[int] = None
) -> dict[AgentType, float]:
    """Relative error |rate * W - L| / L of Little's law per type."""
    report = summarize(trace, warmup_agents)
    return {t: s.littles_error for t, s in report.per_type.items()}


def dominance_check(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Largest violation of 'a is stochastically <= b' over a merged grid.

    Returns max(0, max_x(ECDF_b(x) - ECDF_a(x))): zero means the empirical
    CDFs are consistent with first-order dominance of b's values over a's.
    """
    a = np.sort(np.asarray(sample_a, dtype=np.float64))
    b = np.sort(np.asarray(sample_b, dtype=np.float64))
    if len(a) == 0 or len(b) == 0:
        raise NoSamples("dominance check needs two nonempty samples")
    grid = np.concatenate([a, b])
    grid.sort()
    cdf_a = np.searchsorted(a, grid, side="right") / len(a)
    cdf_b = np.searchsorted(b, grid, side="right") / len(b)
    return float(max(0.0, (cdf_b - cdf_a).max()))


def report_csv_header(prefix_cols: Sequence[str] = ()) -> list[str]:
    """Column order for one-row-per-run CSV emission."""
    cols = list(prefix_cols)
    for t in ("E", "H"):
        cols += [
            f"{t}_match_rate",
            f"{t}_mean_waiting",
            f"{t}_mean_matching_time",
            f"{t}_mean_waiting_unmatched",
            f"{t}_n_matched",
            f"{t}_n_departed",
            f"{t}_n_rejected",
            f"{t}_n_censored",
            f"{t}_arrival_rate",
            f"{t}_pool_mean",
            f"{t}_littles_error",
        ]
    return cols


def report_csv_row(report: Report, prefix_vals: Sequence[object] = ()) -> list[str]:
    flat = report.flat_dict()
    row = [str(v) for v in prefix_vals]
    for col in report_csv_header():
        v = flat.get(col, float("nan"))
        if isinstance(v, float):
            row.append(repr(v))
        else:
            row.append(str(v))
    return row
