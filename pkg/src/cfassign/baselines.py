"""Reference assignment strategies used for comparison.

Three baselines share one result type: exhaustive enumeration of all
exactly-U per-AP user subsets (the optimality bound), uniformly random
feasible assignments, and a deterministic greedy serial dictatorship.
"""

import dataclasses
import itertools
import math

import numpy as np

from .training import sum_rate

DEFAULT_ENUMERATION_BUDGET = 10_000_000
GSD_VARIANT = "user_dictator_v1"
_CHUNK = 4096


@dataclasses.dataclass(frozen=True)
class AssignmentResult:
    """A binary assignment with its objective value.

    assignment is a K x N 0/1 float matrix (None when unavailable),
    enumerated_count is nonzero only for exhaustive search, and available
    is False when the enumeration budget was exceeded.
    """

    assignment: object
    sum_rate: float
    feasible: bool
    available: bool = True
    enumerated_count: int = 0


def check_feasible(assignment, max_served_users, min_serving_aps):
    s = np.asarray(assignment)
    if not np.all((s == 0.0) | (s == 1.0)):
        return False
    if np.any(s.sum(axis=0) > max_served_users):
        return False
    return bool(np.all(s.sum(axis=1) >= min_serving_aps))


def _validate_instance(gains, max_served_users, min_serving_aps):
    g = np.asarray(gains, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("gains must be a K x N matrix")
    if np.any(g < 0.0):
        raise ValueError("gains must be nonnegative")
    n_users, n_aps = g.shape
    if not 1 <= max_served_users <= n_users:
        raise ValueError("per-AP user limit out of range")
    if min_serving_aps < 0:
        raise ValueError("per-user AP minimum must be nonnegative")
    return g, n_users, n_aps


def _require_feasible(n_users, n_aps, max_served_users, min_serving_aps):
    if min_serving_aps > n_aps:
        raise ValueError("each user needs more serving APs than exist")
    if n_users * min_serving_aps > n_aps * max_served_users:
        raise ValueError("total demand exceeds total AP capacity")


def exhaustive(gains, max_served_users, min_serving_aps, sigma2,
               require_lower=True, budget=DEFAULT_ENUMERATION_BUDGET):
    """Enumerate every per-AP choice of exactly max_served_users users.

    Keeps the first maximum in enumeration order (AP 0 outermost, subsets
    lexicographic).  With require_lower, assignments leaving any user below
    min_serving_aps are skipped.  When the candidate count exceeds budget
    the result is marked unavailable; when require_lower filters out every
    candidate the result carries a None assignment.
    """
    g, n_users, n_aps = _validate_instance(gains, max_served_users,
                                           min_serving_aps)
    if sigma2 <= 0.0:
        raise ValueError("noise power must be positive")
    subsets = list(itertools.combinations(range(n_users), max_served_users))
    n_sub = len(subsets)
    total = n_sub ** n_aps
    if total > budget:
        return AssignmentResult(assignment=None, sum_rate=float("nan"),
                                feasible=False, available=False,
                                enumerated_count=0)
    members = np.zeros((n_sub, n_users))
    for j, sub in enumerate(subsets):
        members[j, list(sub)] = 1.0

    best_rate = -np.inf
    best_flat = -1
    radix = n_sub ** np.arange(n_aps - 1, -1, -1)
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        digits = (flat[:, None] // radix) % n_sub
        power = np.zeros((len(flat), n_users))
        counts = np.zeros((len(flat), n_users))
        for n in range(n_aps):
            picked = members[digits[:, n]]
            power += picked * g[:, n]
            counts += picked
        rates = np.log2(1.0 + power / sigma2).sum(axis=1)
        if require_lower:
            rates[np.any(counts < min_serving_aps, axis=1)] = -np.inf
        j = int(np.argmax(rates))
        if rates[j] > best_rate:
            best_rate = float(rates[j])
            best_flat = int(flat[j])
    if not np.isfinite(best_rate):
        return AssignmentResult(assignment=None, sum_rate=float("nan"),
                                feasible=False, available=True,
                                enumerated_count=total)
    digits = (best_flat // radix) % n_sub
    s = np.zeros((n_users, n_aps))
    for n in range(n_aps):
        s[:, n] = members[digits[n]]
    return AssignmentResult(
        assignment=s, sum_rate=sum_rate(g, s, sigma2),
        feasible=check_feasible(s, max_served_users, min_serving_aps),
        enumerated_count=total)


def _repair_deficits(s, gains, min_serving_aps):
    """Move slots from surplus users to deficient ones, in place.

    Column sums are preserved.  For any deficient user some other user sits
    above the minimum at an AP not serving the deficient one, so each swap
    makes progress; slots go to the deficient user's best such AP first.
    """
    n_users, n_aps = s.shape
    while True:
        rows = s.sum(axis=1)
        deficient = np.flatnonzero(rows < min_serving_aps)
        if deficient.size == 0:
            return
        k = int(deficient[0])
        order = np.argsort(-gains[k], kind="stable")
        moved = False
        for n in order:
            if s[k, n] == 1.0:
                continue
            served = np.flatnonzero(s[:, n] == 1.0)
            donors = served[rows[served] > min_serving_aps]
            if donors.size == 0:
                continue
            j = donors[np.argmax(rows[donors])]
            s[j, n] = 0.0
            s[k, n] = 1.0
            moved = True
            break
        if not moved:
            raise RuntimeError("no surplus slot reachable during repair")


def random_assignment(gains, max_served_users, min_serving_aps, rng,
                      sigma2=1.0, max_retries=100):
    """Uniform per-AP subsets of size max_served_users, resampled until the
    per-user minimum holds; after max_retries the last draw is repaired."""
    g, n_users, n_aps = _validate_instance(gains, max_served_users,
                                           min_serving_aps)
    _require_feasible(n_users, n_aps, max_served_users, min_serving_aps)
    # per-AP uniform subsets: the lowest random keys win each AP's slots;
    # all attempts drawn up front, the first feasible one is kept
    keys = rng.random((max_retries + 1, n_aps, n_users))
    picked = np.argpartition(keys, max_served_users - 1,
                             axis=2)[:, :, :max_served_users]
    mats = np.zeros((max_retries + 1, n_users, n_aps))
    a = np.arange(max_retries + 1)[:, None]
    n = np.arange(n_aps)[None, :, None]
    mats[a[:, :, None], picked, n] = 1.0
    ok = np.flatnonzero(mats.sum(axis=2).min(axis=1) >= min_serving_aps)
    s = mats[ok[0]] if ok.size else mats[-1]
    if not ok.size:
        _repair_deficits(s, g, min_serving_aps)
    return AssignmentResult(
        assignment=s, sum_rate=sum_rate(g, s, sigma2),
        feasible=check_feasible(s, max_served_users, min_serving_aps))


def gsd(gains, max_served_users, min_serving_aps, sigma2=1.0):
    """Greedy serial dictatorship (variant user_dictator_v1).

    Users ordered by best gain claim their top APs with spare capacity up
    to the per-user minimum; leftover capacity is filled by descending gain
    over unassigned pairs; a surplus swap fixes any user still short.
    """
    g, n_users, n_aps = _validate_instance(gains, max_served_users,
                                           min_serving_aps)
    _require_feasible(n_users, n_aps, max_served_users, min_serving_aps)
    s = np.zeros((n_users, n_aps))
    capacity = np.full(n_aps, max_served_users)
    order = np.argsort(-g.max(axis=1), kind="stable")
    for k in order:
        ranked = np.argsort(-g[k], kind="stable")
        claimed = 0
        for n in ranked:
            if claimed == min_serving_aps:
                break
            if capacity[n] > 0:
                s[k, n] = 1.0
                capacity[n] -= 1
                claimed += 1
    pairs = np.dstack(np.unravel_index(np.argsort(-g, axis=None,
                                                  kind="stable"), g.shape))[0]
    for k, n in pairs:
        if capacity[n] > 0 and s[k, n] == 0.0:
            s[k, n] = 1.0
            capacity[n] -= 1
    if np.any(s.sum(axis=1) < min_serving_aps):
        _repair_deficits(s, g, min_serving_aps)
    return AssignmentResult(
        assignment=s, sum_rate=sum_rate(g, s, sigma2),
        feasible=check_feasible(s, max_served_users, min_serving_aps))
