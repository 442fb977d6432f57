"""0/1 knapsack solvers for the per-server placement subproblems.

``dp_knapsack`` is the classic table DP with traceback. When experts share
only a few distinct byte sizes, ``accelerated_knapsack`` groups items by
size: within a group, the best value at any capacity is a prefix sum of
the values sorted descending, which is a step-concave sequence; groups are
folded together with (max,+) convolutions. Both solvers optimize the exact
same program and must agree in value.

Capacities and weights are quantized to a grid whose unit is the gcd of
the item byte sizes, with a fallback unit when that grid would be too
fine; fallback-quantized weights round up so feasibility is never
overstated.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import gcd, inf

import numpy as np

__all__ = [
    "ItemValue",
    "KnapsackResult",
    "dp_knapsack",
    "accelerated_knapsack",
    "group_prefix_sequence",
]

DEFAULT_FALLBACK_UNIT = 1 << 20  # 1 MiB
MAX_GRID_CELLS = 200_000_000  # dp table size guard


@dataclass(frozen=True)
class ItemValue:
    """A candidate expert for one server's knapsack.

    ``kind`` records whether the expert belongs to a top-1 model (its
    subproblem contribution is modular) or a top-K>1 model (supermodular);
    the solvers treat both identically, the tag feeds curvature reporting.
    """

    expert: int
    weight: float
    value: float
    kind: str = "modular"

    def __post_init__(self):
        if self.weight <= 0:
            raise ValueError(f"item {self.expert}: weight must be > 0")
        if self.value < 0:
            raise ValueError(f"item {self.expert}: value must be >= 0")


@dataclass(frozen=True)
class KnapsackResult:
    selected: tuple[int, ...]  # indices into the input item list
    value: float
    unit: int


def _quantize(items, capacity: float, unit: int | None):
    weights = [int(round(it.weight)) for it in items]
    if any(w <= 0 for w in weights):
        raise ValueError("item weights must be positive")
    cap = int(capacity)
    if unit is None:
        u = 0
        for w in weights:
            u = gcd(u, w)
        u = max(u, 1)
        if cap // u > 10_000_000:
            u = DEFAULT_FALLBACK_UNIT
    else:
        u = int(unit)
        if u <= 0:
            raise ValueError("unit must be positive")
    # Round weights up under the fallback unit so quantization never admits
    # an infeasible set.
    wq = [-(-w // u) for w in weights]
    return wq, cap // u, u


def dp_knapsack(items: list[ItemValue], capacity: float, unit: int | None = None) -> KnapsackResult:
    """Exact 0/1 knapsack; ties prefer not taking an item."""
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    if not items:
        return KnapsackResult((), 0.0, 1)
    wq, capq, u = _quantize(items, capacity, unit)
    if capq <= 0:
        return KnapsackResult((), 0.0, u)
    n = len(items)
    if (n + 1) * (capq + 1) > MAX_GRID_CELLS:
        raise ValueError(
            f"dp table {n + 1} x {capq + 1} exceeds the size guard; pass a coarser unit"
        )
    table = np.zeros((n + 1, capq + 1))
    for i, it in enumerate(items, start=1):
        w = wq[i - 1]
        prev = table[i - 1]
        row = prev.copy()
        if w <= capq:
            np.maximum(prev[w:], prev[:-w] + it.value, out=row[w:])
        table[i] = row
    selected = []
    q = capq
    for i in range(n, 0, -1):
        if table[i][q] != table[i - 1][q]:
            selected.append(i - 1)
            q -= wq[i - 1]
    selected.reverse()
    return KnapsackResult(tuple(selected), float(table[n][capq]), u)


def group_prefix_sequence(values: list[float], step: int, capq: int) -> np.ndarray:
    """Best same-weight-group value at every grid capacity 0..capq.

    With all items of one weight, capacity q holds q // step items, and the
    optimum is the prefix sum of the values sorted descending: a step-concave
    sequence (second differences along the step grid are <= 0).
    """
    ordered = sorted(values, reverse=True)
    prefix = np.concatenate([[0.0], np.cumsum(ordered)])
    counts = np.minimum(np.arange(capq + 1) // step, len(values))
    return prefix[counts]


def _fold_scan(running: np.ndarray, prefix: np.ndarray, step: int):
    """(max,+) fold of a step-concave group into the running sequence.

    Direct scan over the group's item counts, vectorized per count. Ties
    keep the smallest count. Returns (new running sequence, chosen counts).
    """
    capq = running.size - 1
    out = running.copy()
    counts = np.zeros(capq + 1, dtype=np.int64)
    n = prefix.size - 1
    for l in range(1, n + 1):
        shift = l * step
        if shift > capq:
            break
        cand = running[: capq + 1 - shift] + prefix[l]
        better = cand > out[shift:]
        out[shift:][better] = cand[better]
        counts[shift:][better] = l
    return out, counts


def _fold_monotone(running: np.ndarray, prefix: np.ndarray, step: int):
    """Same fold via divide-and-conquer on the monotone argmax.

    Per residue class modulo the group weight, the matrix
    M[j][i] = running[i*step + r] + prefix[j - i] is inverse-Monge because
    the prefix sequence is concave, so the best i is nondecreasing in j.
    """
    capq = running.size - 1
    out = running.copy()
    counts = np.zeros(capq + 1, dtype=np.int64)
    n = prefix.size - 1
    for r in range(min(step, capq + 1)):
        y = running[r::step]
        L = y.size
        best = np.empty(L)
        arg = np.empty(L, dtype=np.int64)

        def solve(jlo, jhi, ilo, ihi):
            if jlo > jhi:
                return
            j = (jlo + jhi) // 2
            lo = max(ilo, j - n)
            hi = min(ihi, j)
            bv = -inf
            bi = lo
            for i in range(lo, hi + 1):
                v = y[i] + prefix[j - i]
                if v >= bv:  # ties keep the largest i == smallest count
                    bv = v
                    bi = i
            best[j] = bv
            arg[j] = bi
            solve(jlo, j - 1, ilo, bi)
            solve(j + 1, jhi, bi, ihi)

        solve(0, L - 1, 0, L - 1)
        idx = r + np.arange(L) * step
        out[idx] = best
        counts[idx] = np.arange(L) - arg
    return out, counts


def accelerated_knapsack(
    items: list[ItemValue],
    capacity: float,
    unit: int | None = None,
    method: str = "scan",
) -> KnapsackResult:
    """Knapsack over items grouped by equal weight, folded by (max,+) convolution.

    Exactly matches :func:`dp_knapsack` in value. ``method`` picks the fold
    implementation: "scan" (vectorized direct scan) or "monotone" (argmax
    divide-and-conquer exploiting step concavity); both give identical
    sequences.
    """
    if capacity < 0:
        raise ValueError(f"capacity must be >= 0, got {capacity}")
    if method not in ("scan", "monotone"):
        raise ValueError(f"unknown fold method: {method!r}")
    if not items:
        return KnapsackResult((), 0.0, 1)
    wq, capq, u = _quantize(items, capacity, unit)
    if capq <= 0:
        return KnapsackResult((), 0.0, u)

    groups: dict[int, list[int]] = {}
    for i, w in enumerate(wq):
        groups.setdefault(w, []).append(i)
    fold = _fold_scan if method == "scan" else _fold_monotone

    running = np.zeros(capq + 1)
    chosen_counts = []
    group_keys = sorted(groups)
    for w in group_keys:
        member_idx = sorted(groups[w], key=lambda i: (-items[i].value, i))
        prefix = np.concatenate([[0.0], np.cumsum([items[i].value for i in member_idx])])
        running, counts = fold(running, prefix, w)
        chosen_counts.append((w, member_idx, counts))

    value = float(running[capq])
    selected: list[int] = []
    q = capq
    for w, member_idx, counts in reversed(chosen_counts):
        take = int(counts[q])
        selected.extend(member_idx[:take])
        q -= take * w
    selected.sort()
    return KnapsackResult(tuple(selected), value, u)
