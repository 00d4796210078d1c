"""Closed-form predictions, bounds, and numerical Markov-chain oracles.

Large-market limits for the greedy and patient policies, the batching
bounds, the universal upper bound on any policy, and the one- and
two-dimensional chains whose stationary distributions certify the greedy
pool dynamics.  Chain time units are normalized to a unit criticality rate
(d = 1), matching the construction they come from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidParameter, SolveFailure, TruncationTooTight


@dataclass(frozen=True)
class Predictions:
    """Per-type match rates and waiting times (days); dist_rate_H is the rate
    of the limiting exponential waiting-time law when one is defined."""

    q_H: float
    q_E: float
    w_H: float
    w_E: float
    dist_rate_H: Optional[float] = None


def greedy_limits(lam: float, d: float) -> Predictions:
    """Large-market greedy limits: q=(1/(1+lam), 1), w=(lam*d/(1+lam), 0),
    H waiting exponential with rate (1+lam)/(lam*d)."""
    _check_pos("lam", lam)
    _check_pos("d", d)
    return Predictions(
        q_H=1.0 / (1.0 + lam),
        q_E=1.0,
        w_H=lam * d / (1.0 + lam),
        w_E=0.0,
        dist_rate_H=(1.0 + lam) / (lam * d),
    )


def patient_limits(lam: float, d: float) -> Predictions:
    """Large-market patient limits: same match rates as greedy, H waiting
    exponential with mean d."""
    _check_pos("lam", lam)
    _check_pos("d", d)
    return Predictions(
        q_H=1.0 / (1.0 + lam),
        q_E=1.0,
        w_H=d,
        w_E=0.0,
        dist_rate_H=1.0 / d,
    )


def batching_bounds(lam: float, d: float, T: float) -> Predictions:
    """Batching with period T: upper bounds on match rates, lower bounds on
    waiting times (w = d * (1 - q) per type)."""
    _check_pos("lam", lam)
    _check_pos("d", d)
    _check_pos("T", T)
    g = T / d
    q_e = (1.0 - math.exp(-g)) / g
    q_h = q_e / (1.0 + lam)
    return Predictions(
        q_H=q_h,
        q_E=q_e,
        w_H=d * (1.0 - q_h),
        w_E=d * (1.0 - q_e),
        dist_rate_H=None,
    )


def batching_waiting_integral_form(lam: float, d: float, T: float) -> float:
    """H waiting lower bound in its round-integral form; algebraically equal
    to d * (1 - q_H) from batching_bounds (regression anchor)."""
    g = 1.0 / d
    return (g * T * (1.0 + lam) + math.exp(-g * T) - 1.0) / (g * g * (1.0 + lam) * T)


def any_policy_upper_bound(lam: float, d: float) -> Predictions:
    """No policy can beat these asymptotically: q_H at most 1/(1+lam) and H
    waiting/matching time at least lam*d/(1+lam)."""
    if lam < 0:
        raise InvalidParameter(f"imbalance must be >= 0, got {lam}")
    _check_pos("d", d)
    return Predictions(
        q_H=1.0 / (1.0 + lam),
        q_E=1.0,
        w_H=lam * d / (1.0 + lam),
        w_E=0.0,
        dist_rate_H=None,
    )


def greedy_loss_ratio_bound(p: float, lam: float, m: float) -> float:
    """Upper bound exp(-p*lam*m/2) + exp(-lam*m) on the greedy loss ratio.

    Can exceed 1 for thin markets; clamp when reporting.
    """
    _check_pos("p", p)
    _check_pos("lam", lam)
    _check_pos("m", m)
    return math.exp(-p * lam * m / 2.0) + math.exp(-lam * m)


def small_lambda_limits(lam: float, d: float) -> Predictions:
    """E-majority markets (lam < 0): all match rates approach 1 and waiting
    times vanish under both greedy and patient matching."""
    if not -1.0 <= lam < 0.0:
        raise InvalidParameter(f"lam must be in [-1, 0), got {lam}")
    _check_pos("d", d)
    return Predictions(q_H=1.0, q_E=1.0, w_H=0.0, w_E=0.0, dist_rate_H=None)


def unmatched_h_waiting_candidates(lam: float, d: float) -> tuple[float, float]:
    """Two candidate values for E[wait | H unmatched] under greedy.

    The memoryless argument gives lam*d/(1+lam) (the same law as matched
    agents); a published alternative gives (1 + lam - 1/(1+lam)) * d.  Both
    are exposed so measurements can arbitrate.
    """
    _check_pos("lam", lam)
    _check_pos("d", d)
    memoryless = lam * d / (1.0 + lam)
    alternative = (1.0 + lam - 1.0 / (1.0 + lam)) * d
    return memoryless, alternative


def _check_pos(name: str, value: float) -> None:
    if not value > 0:
        raise InvalidParameter(f"{name} must be positive, got {value}")


# ---------------------------------------------------------------------------
# Birth-death chains bounding the greedy H pool (unit criticality rate)
# ---------------------------------------------------------------------------


@dataclass
class BirthDeathChain:
    """Truncated birth-death rate family on integer states [lo, hi].

    ``left(x)`` and ``right(x)`` are the transition rates from x to x-1 and
    x+1; they must remain evaluable just outside the truncation so boundary
    mass can be estimated.  Natural boundaries disable that estimate.
    """

    lo: int
    hi: int
    left: Callable[[int], float]
    right: Callable[[int], float]
    lo_natural: bool = False
    hi_natural: bool = False

    def __post_init__(self) -> None:
        if self.lo >= self.hi:
            raise InvalidParameter(f"need lo < hi, got [{self.lo}, {self.hi}]")

    def widened(self, factor: int = 2) -> "BirthDeathChain":
        span = self.hi - self.lo
        lo = self.lo if self.lo_natural else self.lo - span * (factor - 1) // 2
        hi = self.hi + span * (factor - 1) // 2
        return BirthDeathChain(
            lo=lo,
            hi=hi,
            left=self.left,
            right=self.right,
            lo_natural=self.lo_natural,
            hi_natural=self.hi_natural,
        )


@dataclass
class BDStationary:
    states: np.ndarray
    pmf: np.ndarray
    tail_mass_estimate: float

    def mean(self) -> float:
        return float(np.dot(self.states, self.pmf))

    def variance(self) -> float:
        mu = self.mean()
        return float(np.dot((self.states - mu) ** 2, self.pmf))

    def mass_beyond(self, center: float, radius: float) -> float:
        out = np.abs(self.states - center) > radius
        return float(self.pmf[out].sum())


def mu_chain(m: float, lam: float, p: float, halfwidth: Optional[int] = None) -> BirthDeathChain:
    """Upper-bounding chain for the greedy H pool: left rate
    m*(1-(1-p)^x) + x, right rate m*(1+lam), states x >= 0.

    The left rate's compatibility term uses the E-H probability; pass the
    E-E probability instead for the notation-variant sensitivity check.
    """
    _check_pos("m", m)
    _check_pos("lam", lam)
    if not 0.0 < p <= 1.0:
        raise InvalidParameter(f"p must be in (0, 1], got {p}")
    center = int(round(lam * m))
    w = halfwidth if halfwidth is not None else _default_halfwidth(m)
    lo = max(0, center - w)
    omp = 1.0 - p

    def left(x: int) -> float:
        return m * (1.0 - omp**x) + x

    def right(x: int) -> float:
        return m * (1.0 + lam)

    return BirthDeathChain(
        lo=lo, hi=center + w, left=left, right=right, lo_natural=(lo == 0)
    )


def ml_chain(m: float, lam: float, halfwidth: Optional[int] = None) -> BirthDeathChain:
    """Lower-bounding chain for the greedy H pool minus the E pool: left rate
    m + max(x, 0), right rate (1+lam)*m, states over the integers."""
    _check_pos("m", m)
    _check_pos("lam", lam)
    center = int(round(lam * m))
    w = halfwidth if halfwidth is not None else _default_halfwidth(m)
    # below zero the pmf decays geometrically at 1/(1+lam) per step
    depth = int(math.ceil(40.0 / math.log1p(lam))) + 20

    def left(x: int) -> float:
        return m + max(x, 0)

    def right(x: int) -> float:
        return (1.0 + lam) * m

    return BirthDeathChain(
        lo=min(-depth, center - w), hi=center + w, left=left, right=right
    )


def _default_halfwidth(m: float) -> int:
    m = max(m, 3.0)
    return int(math.ceil(12.0 * math.sqrt(m * math.log(m)))) + 50


def bd_stationary(chain: BirthDeathChain, tail_tol: float = 1e-9) -> BDStationary:
    """Stationary pmf via detailed balance pi(x+1)/pi(x) = r(x)/l(x+1).

    Raises TruncationTooTight when the geometric boundary-mass estimate
    exceeds ``tail_tol``.
    """
    states = np.arange(chain.lo, chain.hi + 1, dtype=np.int64)
    n = len(states)
    log_ratio = np.empty(n - 1)
    for i, x in enumerate(range(chain.lo, chain.hi)):
        r = chain.right(x)
        l_next = chain.left(x + 1)
        if r <= 0 or l_next <= 0:
            raise InvalidParameter(
                f"chain not irreducible: r({x})={r}, l({x + 1})={l_next}"
            )
        log_ratio[i] = math.log(r) - math.log(l_next)
    log_pi = np.concatenate([[0.0], np.cumsum(log_ratio)])
    log_pi -= log_pi.max()
    pmf = np.exp(log_pi)
    pmf /= pmf.sum()

    tail = 0.0
    if not chain.hi_natural:
        rho = chain.right(chain.hi) / chain.left(chain.hi + 1)
        tail += pmf[-1] * rho / (1.0 - rho) if rho < 1.0 else float("inf")
    if not chain.lo_natural:
        rho = chain.left(chain.lo) / chain.right(chain.lo - 1)
        tail += pmf[0] * rho / (1.0 - rho) if rho < 1.0 else float("inf")
    if tail > tail_tol:
        raise TruncationTooTight(
            f"boundary mass estimate {tail:.3e} exceeds {tail_tol:.1e}"
        )
    return BDStationary(states=states, pmf=pmf, tail_mass_estimate=tail)


def bd_stationary_adaptive(
    chain: BirthDeathChain, tail_tol: float = 1e-9, max_widenings: int = 6
) -> BDStationary:
    """bd_stationary with automatic truncation widening on failure."""
    for _ in range(max_widenings):
        try:
            return bd_stationary(chain, tail_tol)
        except TruncationTooTight:
            chain = chain.widened()
    return bd_stationary(chain, tail_tol)


# ---------------------------------------------------------------------------
# Two-dimensional greedy chain (x hard, y easy waiting; unit departure rate)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ctmc2D:
    """Greedy pool chain on {(x, y): x, y >= 0, x + y <= C}.

    With M_x = (1-p)^x and N_y = (1-q)^y the rates out of (x, y) are
      up    m * M_x * N_y            (E arrival joins the pool)
      right m * (1+lam) * N_y        (H arrival joins the pool)
      down  m * M_x * (1 - N_y) + m * (1+lam) * (1 - N_y) + y
      left  m * (1 - M_x) + x
    gated to zero at the boundary of the state space.
    """

    m: float
    lam: float
    p: float
    q: float
    C: int

    def __post_init__(self) -> None:
        _check_pos("m", self.m)
        _check_pos("lam", self.lam)
        if not 0.0 <= self.p <= 1.0 or not 0.0 <= self.q <= 1.0:
            raise InvalidParameter("p and q must be probabilities")
        if not 1 <= self.C <= 250:
            raise InvalidParameter(
                f"capacity {self.C} outside 1..250 (direct solve limit)"
            )

    def rates(self, x: int, y: int) -> tuple[float, float, float, float]:
        """(up, right, down, left) rates out of state (x, y)."""
        m, lam = self.m, self.lam
        mx = (1.0 - self.p) ** x
        ny = (1.0 - self.q) ** y
        room = x + y < self.C
        up = m * mx * ny if room else 0.0
        right = m * (1.0 + lam) * ny if room else 0.0
        down = m * mx * (1.0 - ny) + m * (1.0 + lam) * (1.0 - ny) + y if y > 0 else 0.0
        left = m * (1.0 - mx) + x if x > 0 else 0.0
        return up, right, down, left


def greedy_ctmc(m: float, lam: float, p: float, q: float, C: int) -> Ctmc2D:
    return Ctmc2D(m=m, lam=lam, p=p, q=q, C=C)


@dataclass
class Ctmc2DStationary:
    chain: Ctmc2D
    states: list[tuple[int, int]]
    pmf: np.ndarray
    residual_inf: float  # max |pi Q|

    def mean_xy(self) -> tuple[float, float]:
        xs = np.array([s[0] for s in self.states], dtype=np.float64)
        ys = np.array([s[1] for s in self.states], dtype=np.float64)
        return float(np.dot(xs, self.pmf)), float(np.dot(ys, self.pmf))

    def marginal_x(self) -> np.ndarray:
        out = np.zeros(self.chain.C + 1)
        for (x, _), pr in zip(self.states, self.pmf):
            out[x] += pr
        return out

    def marginal_y(self) -> np.ndarray:
        out = np.zeros(self.chain.C + 1)
        for (_, y), pr in zip(self.states, self.pmf):
            out[y] += pr
        return out


def ctmc_stationary_2d(chain: Ctmc2D) -> Ctmc2DStationary:
    """Exact stationary distribution by direct sparse solve of pi Q = 0 with
    the normalization row replacing one balance equation."""
    C = chain.C
    states: list[tuple[int, int]] = []
    index: dict[tuple[int, int], int] = {}
    for x in range(C + 1):
        for y in range(C + 1 - x):
            index[(x, y)] = len(states)
            states.append((x, y))
    n = len(states)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for (x, y), i in index.items():
        up, right, down, left = chain.rates(x, y)
        total = 0.0
        for rate, nxt in (
            (up, (x, y + 1)),
            (right, (x + 1, y)),
            (down, (x, y - 1)),
            (left, (x - 1, y)),
        ):
            if rate > 0.0:
                j = index[nxt]
                rows.append(i)
                cols.append(j)
                vals.append(rate)
                total += rate
        rows.append(i)
        cols.append(i)
        vals.append(-total)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A = sp.lil_matrix(Q.T)
    A[0, :] = 1.0  # normalization replaces one (redundant) balance row
    b = np.zeros(n)
    b[0] = 1.0
    try:
        pi = spla.spsolve(sp.csc_matrix(A), b)
    except Exception as exc:  # pragma: no cover - ergodic chains should solve
        raise SolveFailure(f"stationary solve failed: {exc}") from exc
    if not np.isfinite(pi).all() or pi.min() < -1e-9:
        raise SolveFailure("stationary solve produced an invalid distribution")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    residual = float(np.abs(pi @ Q).max())
    return Ctmc2DStationary(chain=chain, states=states, pmf=pi, residual_inf=residual)
