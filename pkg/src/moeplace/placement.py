"""Placement optimizers and their analysis machinery.

* ``greedy_k1``: global density greedy (marginal gain per byte). Carries a
  (1 - 1/e) guarantee when every model is top-1; runs on any instance.
* ``successive_placement``: solves one knapsack per server in order, each
  over singleton marginal values against the already-fixed servers, with
  the DP or the grouped max-plus solver. The per-server true gains
  telescope to the global objective exactly.
* ``supermodular_curvature``: curvature of the supermodular (top-K>1)
  part of a server subproblem; drives the (1 - kappa)/2 global bound.
* ``lfu_placement`` / ``random_placement``: baselines.
* ``brute_force_optimal``: exhaustive oracle for small instances.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance, Placement
from .knapsack import ItemValue, accelerated_knapsack, dp_knapsack
from .latency import EvalState, LatencyModel
from .network import distance

__all__ = [
    "GreedyResult",
    "ServerRecord",
    "SuccessiveResult",
    "CurvatureReport",
    "ClosedFormCurvature",
    "greedy_k1",
    "subproblem_item_values",
    "successive_placement",
    "supermodular_curvature",
    "supermodular_part_gain",
    "curvature_closed_form",
    "curvature_report",
    "lfu_placement",
    "random_placement",
    "brute_force_optimal",
    "find_nonsubmodular_witnesses",
]


@dataclass(frozen=True)
class GreedyResult:
    placement: Placement
    objective: float
    steps: int


@dataclass(frozen=True)
class ServerRecord:
    server_id: int
    selected: tuple[int, ...]
    surrogate_value: float  # knapsack optimum over singleton values
    gain: float  # true subproblem gain of the fixed selection
    kappa: float | None = None


@dataclass(frozen=True)
class SuccessiveResult:
    placement: Placement
    objective: float
    records: tuple[ServerRecord, ...]
    solver: str
    server_order: tuple[int, ...]

    @property
    def telescoped(self) -> float:
        return sum(r.gain for r in self.records)


def _server_capacity(instance: Instance) -> dict[int, float]:
    return {s.server_id: s.capacity_bytes for s in instance.servers}


def greedy_k1(instance: Instance, model: LatencyModel | None = None) -> GreedyResult:
    """Density greedy: repeatedly add the feasible (server, expert) pair with
    the highest marginal gain per byte; ties go to the lowest (server, index).

    Every step re-evaluates the marginal of each feasible candidate, but
    each evaluation touches only the demand terms containing that expert
    (the incremental state keeps all other term latencies cached).
    """
    model = model or LatencyModel(instance)
    state = EvalState(model)
    cat = instance.catalog
    E = model.E
    sizes = [cat.expert_bytes_of(g) for g in range(E)]
    capacity = _server_capacity(instance)

    steps = 0
    while True:
        best_density = -1.0
        best = None
        for n in model.server_ids:
            rem = capacity[n] - state.used[n]
            bit = 1 << model.bitpos[n]
            for g in range(E):
                if sizes[g] > rem or state.mask[g] & bit:
                    continue
                gain = state.gain(n, g) if model.terms_by_expert[g] else 0.0
                density = gain / sizes[g]
                if density > best_density:
                    best_density = density
                    best = (n, g)
        if best is None:
            break
        state.add(*best)
        steps += 1
    return GreedyResult(state.placement(), state.objective, steps)


def subproblem_item_values(
    instance: Instance,
    server_id: int,
    prior: Placement,
    model: LatencyModel | None = None,
    state: EvalState | None = None,
) -> list[ItemValue]:
    """Singleton marginal value of every candidate expert on one server,
    measured against the fixed placements of the already-processed servers."""
    model = model or LatencyModel(instance)
    if state is None:
        state = EvalState(model, prior)
    cat = instance.catalog
    bit = 1 << model.bitpos[server_id]
    items = []
    for g in range(model.E):
        if state.mask[g] & bit:
            continue
        value = max(state.gain(server_id, g), 0.0) if model.terms_by_expert[g] else 0.0
        spec = cat.model_of(g)
        kind = "modular" if spec.top_k == 1 else "supermodular"
        items.append(ItemValue(g, spec.expert_bytes, value, kind))
    return items


def successive_placement(
    instance: Instance,
    solver: str = "dp",
    server_order: str = "id",
    compute_curvature: bool = False,
    model: LatencyModel | None = None,
) -> SuccessiveResult:
    """Per-server successive decomposition with an exact knapsack per step.

    ``solver`` is "dp" or "accel". ``server_order`` is "id" (default) or
    "capacity_desc" (experimental knob). With ``compute_curvature`` each
    server record carries the curvature of its subproblem's supermodular
    part, evaluated against the same prior the knapsack saw.
    """
    if solver not in ("dp", "accel"):
        raise ValueError(f"unknown solver: {solver!r}")
    model = model or LatencyModel(instance)
    state = EvalState(model)
    capacity = _server_capacity(instance)
    if server_order == "id":
        order = tuple(model.server_ids)
    elif server_order == "capacity_desc":
        order = tuple(sorted(model.server_ids, key=lambda n: (-capacity[n], n)))
    else:
        raise ValueError(f"unknown server_order: {server_order!r}")

    solve = dp_knapsack if solver == "dp" else accelerated_knapsack
    records = []
    for n in order:
        kappa = None
        if compute_curvature:
            kappa = supermodular_curvature(
                instance, n, state.placement(), model=model, state=state
            )
        all_items = subproblem_item_values(instance, n, state.placement(), model, state)
        # Zero-value items are never selected (ties prefer not taking), so
        # they can be dropped before the solve.
        items = [it for it in all_items if it.value > 0.0 and it.weight <= capacity[n]]
        result = solve(items, capacity[n])
        before = state.objective
        for idx in result.selected:
            state.add(n, items[idx].expert)
        records.append(
            ServerRecord(
                server_id=n,
                selected=tuple(sorted(items[idx].expert for idx in result.selected)),
                surrogate_value=result.value,
                gain=state.objective - before,
                kappa=kappa,
            )
        )
    return SuccessiveResult(state.placement(), state.objective, tuple(records), solver, order)


def supermodular_curvature(
    instance: Instance,
    server_id: int,
    prior: Placement,
    model: LatencyModel | None = None,
    state: EvalState | None = None,
) -> float:
    """Curvature of the top-K>1 part of server ``server_id``'s subproblem.

    kappa = 1 - min_z g(z | empty) / g(z | V minus z) over candidate experts
    z with a positive denominator, where g restricts the subproblem gain to
    top-K>1 demand terms. Returns 0 when the supermodular part is vacuous.
    """
    model = model or LatencyModel(instance)
    if state is None:
        state = EvalState(model, prior)
    bit = 1 << model.bitpos[server_id]
    k2_terms = [ti for ti, t in enumerate(model.terms) if t.k > 1]
    if not k2_terms:
        return 0.0
    k2_set = set(k2_terms)
    candidates = sorted(
        {
            g
            for ti in k2_terms
            for g in model.terms[ti].needed
            if not state.mask[g] & bit
        }
    )
    if not candidates:
        return 0.0

    terms = model.terms
    mask = state.mask

    def k2_gain_single(g: int) -> float:
        old = mask[g]
        mask[g] = old | bit
        delta = 0.0
        for ti in model.terms_by_expert[g]:
            if ti in k2_set:
                t = terms[ti]
                delta += t.w * (state.cur[ti] - model.term_latency(t, mask))
        mask[g] = old
        return delta

    # g(z | empty) for every candidate, against the prior.
    num = {g: k2_gain_single(g) for g in candidates}

    # Full-set latencies: all candidates placed on the server.
    saved = {g: mask[g] for g in candidates}
    for g in candidates:
        mask[g] |= bit
    full_lat = {}
    touched = sorted({ti for g in candidates for ti in model.terms_by_expert[g] if ti in k2_set})
    for ti in touched:
        full_lat[ti] = model.term_latency(terms[ti], mask)

    ratio_min = None
    for z in candidates:
        # g(z | V minus z) = g(V) - g(V minus z), from re-evaluating only
        # the terms containing z with z's bit cleared.
        mask[z] = saved[z]
        denom = 0.0
        for ti in model.terms_by_expert[z]:
            if ti in k2_set:
                t = terms[ti]
                denom += t.w * (model.term_latency(t, mask) - full_lat[ti])
        mask[z] |= bit
        if denom <= 0.0:
            continue
        r = num[z] / denom
        if ratio_min is None or r < ratio_min:
            ratio_min = r
    for g in candidates:
        mask[g] = saved[g]
    if ratio_min is None:
        return 0.0
    return min(max(1.0 - ratio_min, 0.0), 1.0)


def supermodular_part_gain(
    instance: Instance,
    server_id: int,
    prior: Placement,
    experts,
    model: LatencyModel | None = None,
    state: EvalState | None = None,
) -> float:
    """Gain of placing ``experts`` on one server, restricted to top-K>1 demand
    terms: the supermodular component g of the server's subproblem."""
    model = model or LatencyModel(instance)
    if state is None:
        state = EvalState(model, prior)
    bit = 1 << model.bitpos[server_id]
    mask = state.mask
    experts = sorted(set(experts))
    saved = {g: mask[g] for g in experts}
    for g in experts:
        mask[g] |= bit
    delta = 0.0
    touched = sorted({ti for g in experts for ti in model.terms_by_expert[g]})
    for ti in touched:
        t = model.terms[ti]
        if t.k > 1:
            delta += t.w * (state.cur[ti] - model.term_latency(t, mask))
    for g in experts:
        mask[g] = saved[g]
    return delta


@dataclass(frozen=True)
class ClosedFormCurvature:
    value: float | None
    diagnostic: str
    model_id: str = ""
    server_pair: tuple[int, int] = (0, 0)


def curvature_closed_form(instance: Instance) -> ClosedFormCurvature:
    """Closed-form curvature estimate from the closest server pair and the
    model with the largest edge compute latency."""
    if len(instance.servers) < 2:
        raise ValueError("closed-form curvature estimate needs at least 2 servers")
    servers = sorted(instance.servers, key=lambda s: s.server_id)
    best_pair = None
    best_d = None
    for i, a in enumerate(servers):
        for b in servers[i + 1 :]:
            d = distance(a.position, b.position)
            if best_d is None or d < best_d:
                best_d = d
                best_pair = (a, b)
    a, b = best_pair
    m_hat = max(
        instance.catalog.models,
        key=lambda spec: (
            spec.expert_flops
            / min(a.per_expert_compute_flops, b.per_expert_compute_flops)
        ),
    )
    cpe = m_hat.expert_flops / min(a.per_expert_compute_flops, b.per_expert_compute_flops)
    t_bh = instance.link.backhaul_hop(a.server_id, b.server_id).latency(m_hat.embedding_bytes)
    denom = 2.0 * t_bh - cpe
    if denom <= 0.0:
        return ClosedFormCurvature(
            None,
            f"undefined: edge compute latency {cpe} is at least twice the backhaul "
            f"latency {t_bh} between servers {a.server_id} and {b.server_id}",
            m_hat.model_id,
            (a.server_id, b.server_id),
        )
    value = (t_bh - cpe) / denom
    return ClosedFormCurvature(value, "", m_hat.model_id, (a.server_id, b.server_id))


@dataclass(frozen=True)
class CurvatureReport:
    per_server: dict[int, float]
    kappa_max: float
    closed_form: float | None
    closed_form_diagnostic: str
    implied_bound: float


def curvature_report(instance: Instance, solver: str = "dp") -> CurvatureReport:
    """Empirical per-server curvatures along a successive run, the closed-form
    estimate, and the implied (1 - kappa_max)/2 bound."""
    run = successive_placement(instance, solver=solver, compute_curvature=True)
    per_server = {r.server_id: r.kappa for r in run.records}
    kappa_max = max(per_server.values()) if per_server else 0.0
    if len(instance.servers) >= 2:
        cf = curvature_closed_form(instance)
    else:
        cf = ClosedFormCurvature(None, "single-server instance")
    return CurvatureReport(
        per_server=per_server,
        kappa_max=kappa_max,
        closed_form=cf.value,
        closed_form_diagnostic=cf.diagnostic,
        implied_bound=(1.0 - kappa_max) / 2.0,
    )


def lfu_placement(instance: Instance) -> Placement:
    """Each server independently caches the experts most frequently requested
    by its own associated users, in frequency order, skipping what no longer
    fits; ties go to the lowest global index."""
    cat = instance.catalog
    freq: dict[int, dict[int, float]] = {s.server_id: {} for s in instance.servers}
    assoc = {u.user_id: u.associated_server for u in instance.users}
    for (uid, mid, layer), table in instance.profile.subset_prob.items():
        n = assoc[uid]
        p_um = instance.profile.model_request_prob[uid][mid]
        base = cat.layer_base(mid, layer)
        for subset, p in table.items():
            for i in subset:
                g = base + i - 1
                freq[n][g] = freq[n].get(g, 0.0) + p_um * p
    cached = {}
    for s in instance.servers:
        order = sorted(range(cat.total_experts), key=lambda g: (-freq[s.server_id].get(g, 0.0), g))
        used = 0.0
        chosen = set()
        for g in order:
            b = cat.expert_bytes_of(g)
            if used + b <= s.capacity_bytes:
                chosen.add(g)
                used += b
        cached[s.server_id] = frozenset(chosen)
    return Placement(cached)


def random_placement(instance: Instance, seed) -> Placement:
    """Uniform random feasible fill per server; deterministic given the seed."""
    rng = np.random.default_rng(seed)
    cat = instance.catalog
    cached = {}
    for s in sorted(instance.servers, key=lambda x: x.server_id):
        perm = rng.permutation(cat.total_experts)
        used = 0.0
        chosen = set()
        for g in perm:
            b = cat.expert_bytes_of(int(g))
            if used + b <= s.capacity_bytes:
                chosen.add(int(g))
                used += b
        cached[s.server_id] = frozenset(chosen)
    return Placement(cached)


def brute_force_optimal(
    instance: Instance,
    max_placements: int = 10**7,
    model: LatencyModel | None = None,
) -> tuple[Placement, float]:
    """Exhaustive search over feasible placements of demanded experts.

    Undemanded experts never change the objective, so restricting the
    search to demanded ones loses no objective value. Raises when the
    feasible-placement count exceeds ``max_placements``.
    """
    model = model or LatencyModel(instance)
    cat = instance.catalog
    demanded = sorted({g for t in model.terms for g in t.needed})
    sizes = {g: cat.expert_bytes_of(g) for g in demanded}

    per_server: list[tuple[int, list[list[int]]]] = []
    total = 1
    for s in sorted(instance.servers, key=lambda x: x.server_id):
        subsets: list[list[int]] = []

        def extend(start: int, chosen: list[int], used: float):
            subsets.append(list(chosen))
            for j in range(start, len(demanded)):
                g = demanded[j]
                if used + sizes[g] <= s.capacity_bytes:
                    chosen.append(g)
                    extend(j + 1, chosen, used + sizes[g])
                    chosen.pop()

        extend(0, [], 0.0)
        per_server.append((s.server_id, subsets))
        total *= len(subsets)
        if total > max_placements:
            raise ValueError(
                f"feasible placement count exceeds the cap {max_placements}"
            )

    mask = [0] * model.E
    best_value = -1.0
    best_assign: list[int] = [0] * len(per_server)
    current: list[int] = [0] * len(per_server)

    def search(level: int):
        nonlocal best_value, best_assign
        if level == len(per_server):
            value = model.objective_from_mask(mask)
            if value > best_value:
                best_value = value
                best_assign = list(current)
            return
        n, subsets = per_server[level]
        bit = 1 << model.bitpos[n]
        for si, subset in enumerate(subsets):
            for g in subset:
                mask[g] |= bit
            current[level] = si
            search(level + 1)
            for g in subset:
                mask[g] &= ~bit
    search(0)

    cached = {
        n: frozenset(subsets[best_assign[level]])
        for level, (n, subsets) in enumerate(per_server)
    }
    return Placement(cached), best_value


def find_nonsubmodular_witnesses(instance: Instance, model: LatencyModel | None = None):
    """Exhaustively search nested placements for marginal-gain differences of
    both signs: F(v | bigger) - F(v | smaller) > 0 witnesses supermodular
    behavior, < 0 submodular behavior. Ground set = (server, demanded expert).

    Returns {"positive": ..., "negative": ...}; entries are None if that sign
    never occurs. Intended for small instances (the ground set is capped).
    """
    model = model or LatencyModel(instance)
    demanded = sorted({g for t in model.terms for g in t.needed})
    ground = [(n, g) for n in model.server_ids for g in demanded]
    if len(ground) > 12:
        raise ValueError(f"ground set of {len(ground)} elements is too large to enumerate")

    values: dict[int, float] = {}

    def f_of(set_mask: int) -> float:
        v = values.get(set_mask)
        if v is None:
            mask = [0] * model.E
            m = set_mask
            while m:
                low = m & -m
                n, g = ground[low.bit_length() - 1]
                mask[g] |= 1 << model.bitpos[n]
                m -= low
            v = model.objective_from_mask(mask)
            values[set_mask] = v
        return v

    positive = None
    negative = None
    tol = 1e-15
    full = (1 << len(ground)) - 1
    for big in range(full + 1):
        # Proper submasks of `big`.
        small = (big - 1) & big
        while True:
            if small != big:
                for vi in range(len(ground)):
                    vbit = 1 << vi
                    if big & vbit:
                        continue
                    diff = (f_of(big | vbit) - f_of(big)) - (
                        f_of(small | vbit) - f_of(small)
                    )
                    if diff > tol and positive is None:
                        positive = _witness(ground, big, small, vi, diff)
                    elif diff < -tol and negative is None:
                        negative = _witness(ground, big, small, vi, diff)
                    if positive and negative:
                        return {"positive": positive, "negative": negative}
            if small == 0:
                break
            small = (small - 1) & big
    return {"positive": positive, "negative": negative}


def _witness(ground, big: int, small: int, vi: int, diff: float) -> dict:
    def members(mask: int):
        return [ground[i] for i in range(len(ground)) if mask & (1 << i)]

    return {
        "larger_set": members(big),
        "smaller_set": members(small),
        "added": ground[vi],
        "difference": diff,
    }
