"""Closed-form success and failure estimates for the hash-addressed store.

All quantities describe the oldest-key scenario: a key was written to
`copies` distinct slots, then `load * slots` further distinct keys were
written before the query. Per-slot overwrites follow the Poisson
approximation of the underlying binomial process, and key checksums are
treated as uniform over 2**checksum_bits values.

Failure modes:
  * empty return, nothing matches: every copy was overwritten and none of
    the overwriters' checksums collide with the key's.
  * empty return, ambiguity: two or more distinct values carry the right
    checksum. Only bounds exist because distinct overwriters may or may
    not carry equal values.
  * return error: every copy was overwritten and the surviving checksum
    matches exactly one (wrong) value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class AnalyticParams:
    """Load/copies/checksum triple; load is keys-written-since over slots."""

    load: float
    copies: int
    checksum_bits: int = 32

    def __post_init__(self):
        if self.load < 0:
            raise ValueError("load must be non-negative")
        if self.copies < 1:
            raise ValueError("copies must be at least 1")
        if not 1 <= self.checksum_bits <= 64:
            raise ValueError("checksum_bits must be in [1, 64]")

    @classmethod
    def from_counts(cls, keys: int, slots: int, copies: int,
                    checksum_bits: int = 32) -> "AnalyticParams":
        return cls(keys / slots, copies, checksum_bits)


@dataclass(frozen=True)
class ProbabilityInterval:
    lower: float
    upper: float

    def __post_init__(self):
        if not 0.0 <= self.lower <= self.upper <= 1.0:
            raise ValueError(f"ill-formed interval [{self.lower}, {self.upper}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, p: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= p <= self.upper + slack


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def p_slot_overwritten(load: float, copies: int) -> float:
    """Probability that one particular slot was overwritten."""
    return -math.expm1(-load * copies)


def p_empty_all_overwritten(load: float, copies: int, checksum_bits: int) -> float:
    """All copies overwritten and the key checksum nowhere reproduced."""
    ow = p_slot_overwritten(load, copies)
    if ow == 0.0:
        return 0.0
    log_no_collision = math.log1p(-math.ldexp(1.0, -checksum_bits))
    return math.exp(copies * (math.log(ow) + log_no_collision))


def p_empty_ambiguity_bounds(load: float, copies: int,
                             checksum_bits: int) -> ProbabilityInterval:
    """Bounds on an empty return caused by >= 2 distinct matching values.

    The lower bound sums over j in [1, copies): j copies overwritten, the
    rest intact, and at least one overwriter hitting the key checksum. The
    upper bound adds the all-overwritten case with two or more checksum
    hits. Terms are assembled in log space so large copy counts stay finite.
    """
    n = copies
    ow = p_slot_overwritten(load, n)
    if ow == 0.0:
        return ProbabilityInterval(0.0, 0.0)
    log_ow = math.log(ow)
    log_keep = math.log1p(-math.ldexp(1.0, -checksum_bits))  # log(1 - 2^-b)
    lower = 0.0
    for j in range(1, n):
        # P(some of j overwriters matches) = 1 - (1-2^-b)^j
        collide = -math.expm1(j * log_keep)
        if collide == 0.0:
            continue
        log_term = (_log_comb(n, j) + j * log_ow - load * n * (n - j)
                    + math.log(collide))
        lower += math.exp(log_term)
    # all overwritten, two or more checksum hits among n independent writers
    at_least_one = -math.expm1(n * log_keep)
    exactly_one = n * math.ldexp(1.0, -checksum_bits) * math.exp((n - 1) * log_keep)
    two_plus = max(at_least_one - exactly_one, 0.0)
    upper = lower + math.exp(n * log_ow) * two_plus
    return ProbabilityInterval(min(lower, 1.0), min(upper, 1.0))


def p_return_error_bounds(load: float, copies: int,
                          checksum_bits: int) -> ProbabilityInterval:
    """Bounds on answering with a wrong value.

    Needs every copy overwritten; the lower bound takes exactly one
    overwriter matching the checksum, the upper at least one.
    """
    n = copies
    ow = p_slot_overwritten(load, n)
    if ow == 0.0:
        return ProbabilityInterval(0.0, 0.0)
    log_keep = math.log1p(-math.ldexp(1.0, -checksum_bits))
    all_ow = math.exp(n * math.log(ow))
    exactly_one = n * math.ldexp(1.0, -checksum_bits) * math.exp((n - 1) * log_keep)
    at_least_one = -math.expm1(n * log_keep)
    lower = all_ow * exactly_one
    # at one copy the bounds coincide; keep rounding from crossing them
    return ProbabilityInterval(lower, max(all_ow * at_least_one, lower))


def p_query_success(load: float, copies: int,
                    checksum_bits: int = 32) -> ProbabilityInterval:
    """One minus all the empty-return and error terms, as an interval."""
    base = p_empty_all_overwritten(load, copies, checksum_bits)
    amb = p_empty_ambiguity_bounds(load, copies, checksum_bits)
    err = p_return_error_bounds(load, copies, checksum_bits)
    lo = 1.0 - base - amb.upper - err.upper
    hi = 1.0 - base - amb.lower - err.lower
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, lo), 1.0)
    return ProbabilityInterval(lo, hi)


# -- numeric helpers ----------------------------------------------------------

def _adaptive_simpson(f, a: float, b: float, tol: float) -> float:
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth > 40 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, fa, m, fm, lm, flm, left, tol / 2.0, depth + 1)
                + recurse(m, fm, b, fb, rm, frm, right, tol / 2.0, depth + 1))

    return recurse(a, fa, b, fb, m, fm, whole, tol, 0)


def avg_success_over_ages(max_load: float, copies: int, checksum_bits: int = 32,
                          include_checksum: bool = False) -> float:
    """Mean success over key ages uniform in [0, max_load].

    The integrand defaults to the redundancy-only success 1-(1-e^{-xN})^N;
    with include_checksum the interval midpoint of p_query_success is used
    instead (a negligible correction at 32-bit checksums).
    """
    if max_load < 0:
        raise ValueError("max_load must be non-negative")
    if max_load == 0.0:
        return 1.0
    n = copies
    if include_checksum:
        f = lambda x: p_query_success(x, n, checksum_bits).midpoint
    else:
        f = lambda x: 1.0 - p_slot_overwritten(x, n) ** n
    return _adaptive_simpson(f, 0.0, max_load, 1e-8) / max_load


def avg_success_with_fill(max_load: float, copies: int, fill_prob: float) -> float:
    """Age-averaged success when each copy slot was only filled with some
    probability (redundant reports drawn with replacement, datagrams lost).

    Treats the copies as independently present with probability fill_prob
    and then subject to the usual overwrites: per-age success is
    1 - (1 - fill_prob * e^{-x*copies})^copies.
    """
    if not 0.0 <= fill_prob <= 1.0:
        raise ValueError("fill_prob must be a probability")
    if max_load < 0:
        raise ValueError("max_load must be non-negative")
    n = copies
    f = lambda x: 1.0 - (1.0 - fill_prob * math.exp(-x * n)) ** n
    if max_load == 0.0:
        return f(0.0)
    return _adaptive_simpson(f, 0.0, max_load, 1e-8) / max_load


def report_fill_probability(copies: int, reports: int, delivery_prob: float = 1.0) -> float:
    """Chance one particular copy slot received at least one report.

    Each of `reports` redundant reports picks a copy uniformly and arrives
    with delivery_prob; the complement is the coupon-collector miss term.
    """
    return 1.0 - (1.0 - delivery_prob / copies) ** reports


def invert_load_for_success(target: float, copies: int,
                            checksum_bits: int = 32) -> float:
    """The load at which oldest-key success equals `target` (bisection).

    Success is strictly decreasing in load from 1 toward 0, so any target in
    (0, 1) is reachable; anything else is a domain error.
    """
    if not 0.0 < target < 1.0:
        raise ValueError("target success must lie strictly between 0 and 1")

    def f(load: float) -> float:
        return p_query_success(load, copies, checksum_bits).midpoint

    lo, hi = 0.0, 1.0
    while f(hi) > target:
        hi *= 2.0
        if hi > 1e9:
            raise ValueError(f"success target {target} not reachable")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - target) < 1e-12:
            return mid
        if val > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def optimal_copies(load: float, candidates=(1, 2, 3, 4), checksum_bits: int = 32,
                   age_averaged: bool = True) -> int:
    """The copy count maximizing success at this load."""
    if age_averaged:
        score = lambda n: avg_success_over_ages(load, n, checksum_bits)
    else:
        score = lambda n: p_query_success(load, n, checksum_bits).midpoint
    return max(candidates, key=score)


def copies_crossover(n_low: int, n_high: int, lo: float, hi: float,
                     checksum_bits: int = 32, age_averaged: bool = True,
                     tol: float = 1e-9) -> float:
    """Load at which n_high stops beating n_low (bisection on the gap).

    The bracket [lo, hi] must straddle the crossing: n_high ahead at lo,
    n_low ahead at hi.
    """
    if age_averaged:
        gap = lambda a: (avg_success_over_ages(a, n_high, checksum_bits)
                         - avg_success_over_ages(a, n_low, checksum_bits))
    else:
        gap = lambda a: (p_query_success(a, n_high, checksum_bits).midpoint
                         - p_query_success(a, n_low, checksum_bits).midpoint)
    glo, ghi = gap(lo), gap(hi)
    if not (glo > 0 > ghi):
        raise ValueError(f"bracket [{lo}, {hi}] does not straddle the crossing")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
