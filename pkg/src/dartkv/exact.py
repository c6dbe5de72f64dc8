"""Exact outcome probabilities for small regions, without Poisson shortcuts.

Models the same oldest-key scenario as the analytic module but exactly: the
probed key occupies `copies` distinct slots of a `slots`-sized region, then
`later_keys` distinct keys are written, each to a uniformly random set of
`copies` distinct slots, each carrying an independent uniform checksum and
a value distinct from every other key's.

What a query sees at that point is fully determined by, per probed slot,
whether it was overwritten and which key wrote it last. Scanning writers in
reverse order, the reachable configurations collapse to a pair (free slots
remaining, number of distinct last-writers so far); the transition when one
more writer is examined is hypergeometric in how many free slots its
address set covers. Enumerating this chain is exact and takes
O(later_keys * copies^2) work, which the public probabilities are then read
off from by integrating the independent checksum coin-flips per writer.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb


@dataclass(frozen=True)
class ExactOutcome:
    success: float
    empty_no_match: float
    empty_ambiguity: float
    return_error: float

    @property
    def empty_total(self) -> float:
        return self.empty_no_match + self.empty_ambiguity

    @property
    def answered(self) -> float:
        return self.success + self.return_error


def exact_query_outcome(slots: int, later_keys: int, copies: int,
                        checksum_bits: int) -> ExactOutcome:
    if copies < 1 or slots < copies:
        raise ValueError("need slots >= copies >= 1")
    if later_keys < 0:
        raise ValueError("later_keys must be non-negative")
    n = copies
    m = slots

    # P(one writer's address set covers exactly h of a fixed f-slot subset)
    total = comb(m, n)
    hyper = [[comb(f, h) * comb(m - f, n - h) / total if n - h <= m - f else 0.0
              for h in range(n + 1)]
             for f in range(n + 1)]

    # state: (free probed slots, distinct last-writers), scanned in reverse
    states = {(n, 0): 1.0}
    for _ in range(later_keys):
        nxt: dict[tuple[int, int], float] = {}
        for (free, writers), p in states.items():
            if free == 0:
                nxt[(0, writers)] = nxt.get((0, writers), 0.0) + p
                continue
            for hit, ph in enumerate(hyper[free]):
                if ph == 0.0:
                    continue
                key = (free - hit, writers + (1 if hit else 0))
                nxt[key] = nxt.get(key, 0.0) + p * ph
        states = nxt

    c = 2.0 ** -checksum_bits
    keep = 1.0 - c
    success = empty_no = ambiguity = error = 0.0
    for (free, writers), p in states.items():
        none_match = keep ** writers
        if free > 0:
            # the original value is present; any matching writer (distinct
            # value) makes the read ambiguous
            success += p * none_match
            ambiguity += p * (1.0 - none_match)
        else:
            one_match = writers * c * keep ** (writers - 1) if writers else 0.0
            empty_no += p * none_match
            error += p * one_match
            ambiguity += p * (1.0 - none_match - one_match)
    return ExactOutcome(success, empty_no, ambiguity, error)
