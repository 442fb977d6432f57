"""Property checks shared by the CLI `verify` command and the acceptance
test suite.

Each check builds its own small seeded instances, runs the property at a
configurable size, and returns a :class:`CheckOutcome`. The acceptance
tests call these functions at the sizes and tolerances the criteria fix;
`verify` runs quicker versions of the same code paths.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from math import e as EULER_E

import numpy as np

from .catalog import ModelSpec
from .instance import Instance, Placement
from .knapsack import ItemValue, accelerated_knapsack, dp_knapsack
from .latency import EvalState, LatencyModel
from .network import EdgeServerNode, Hop, LinkModel, UserNode
from .placement import (
    brute_force_optimal,
    find_nonsubmodular_witnesses,
    greedy_k1,
    subproblem_item_values,
    successive_placement,
    supermodular_curvature,
    supermodular_part_gain,
)
from .scenario import MIB, Scenario, ServerConfig, WorkloadConfig, build_instance
from .workload import ActivationProfile, LocalCache

__all__ = [
    "CheckOutcome",
    "small_instance",
    "four_server_pair_instance",
    "check_submodularity_k1",
    "check_monotonicity",
    "check_nonsubmodular_witnesses",
    "check_k1_routing_closed_form",
    "check_telescoping",
    "check_knapsack_exactness",
    "check_accelerated_equivalence",
    "check_approximation_bounds",
    "check_lemma1_sandwich",
    "check_capacity_invariant",
    "verify_suite",
]


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str = ""
    trials: int = 0
    violations: int = 0
    elapsed_s: float = 0.0

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "trials": self.trials,
            "violations": self.violations,
            "elapsed_s": round(self.elapsed_s, 3),
        }


# -- small instance builders ---------------------------------------------------


def _k1_models(experts: int = 10) -> tuple[ModelSpec, ...]:
    return (
        ModelSpec("top1-a", 1, experts, 1, 2 * MIB, 2048, 1e7),
    )


def _mixed_models() -> tuple[ModelSpec, ...]:
    return (
        ModelSpec("top1-a", 1, 4, 1, 2 * MIB, 2048, 1e7),
        ModelSpec("top2-b", 1, 4, 2, 3 * MIB, 4096, 4e7),
    )


def small_instance(
    seed: int,
    models: tuple[ModelSpec, ...],
    num_servers: int = 2,
    num_users: int = 3,
    capacity_experts: float = 3.0,
    local_budget: int = 0,
    num_tokens: int = 64,
) -> Instance:
    """Seeded tiny instance for brute-forceable property checks."""
    min_bytes = min(m.expert_bytes for m in models)
    mpu = (min(2, len(models)), min(2, len(models)))
    scenario = Scenario(
        name=f"check-{seed}",
        num_servers=num_servers,
        num_users=num_users,
        server=ServerConfig(capacity_bytes=capacity_experts * min_bytes),
        workload=WorkloadConfig(
            models_per_user=mpu,
            local_budget=local_budget,
            num_tokens=num_tokens,
        ),
        models=models,
        seeds=(seed,),
    )
    return build_instance(scenario, seed)


def four_server_pair_instance() -> Instance:
    """The four-server construction exhibiting both marginal-gain signs.

    One user associated with server 1; servers 2, 3, 4 sit at strictly
    increasing backhaul round trips; a single top-2 model with a two-expert
    layer, so the only request is the pair {1, 2}; no local caching.
    """
    from .catalog import build_catalog

    model = ModelSpec("pair", 1, 2, 2, 10 * MIB, 4096, 5e7)
    catalog = build_catalog([model])
    positions = {1: (0.0, 0.0), 2: (150.0, 0.0), 3: (250.0, 0.0), 4: (350.0, 0.0)}
    servers = tuple(
        EdgeServerNode(n, positions[n], 100 * 10 * MIB, 4.0, 82.58e12) for n in positions
    )
    backhaul = {}
    for a in positions:
        for b in positions:
            if a != b:
                d = abs(positions[a][0] - positions[b][0])
                backhaul[(a, b)] = Hop(fixed_latency_s=1e-6 * d)
    link = LinkModel(
        backhaul=backhaul,
        cloud={n: Hop(fixed_latency_s=0.01) for n in positions},
        cloud_return={n: Hop(fixed_latency_s=0.01) for n in positions},
    )
    user = UserNode(1, (10.0, 0.0), 5e6, 0.01, 50e12, associated_server=1)
    profile = ActivationProfile(
        model_request_prob={1: {"pair": 1.0}},
        subset_prob={(1, "pair", 1): {frozenset({1, 2}): 1.0}},
    )
    return Instance(catalog, (user,), servers, link, profile, LocalCache({1: frozenset()}))


# -- checks --------------------------------------------------------------------


def _ground_set(model: LatencyModel) -> list[tuple[int, int]]:
    demanded = sorted({g for t in model.terms for g in t.needed})
    return [(n, g) for n in model.server_ids for g in demanded]


def _mask_from_pairs(model: LatencyModel, pairs) -> list[int]:
    mask = [0] * model.E
    for n, g in pairs:
        mask[g] |= 1 << model.bitpos[n]
    return mask


def check_submodularity_k1(pairs: int = 1000, seed: int = 7) -> CheckOutcome:
    """F(X)+F(Y) >= F(X u Y)+F(X n Y) on a top-1 instance (3 servers, 2 users)."""
    start = time.perf_counter()
    instance = small_instance(
        seed, _k1_models(10), num_servers=3, num_users=2, capacity_experts=4.0
    )
    model = LatencyModel(instance)
    ground = _ground_set(model)
    rng = np.random.default_rng(seed)
    cache: dict[frozenset, float] = {}

    def f_of(sub: frozenset) -> float:
        v = cache.get(sub)
        if v is None:
            v = model.objective_from_mask(_mask_from_pairs(model, sub))
            cache[sub] = v
        return v

    violations = 0
    worst = 0.0
    for _ in range(pairs):
        x = frozenset(p for p in ground if rng.random() < 0.35)
        y = frozenset(p for p in ground if rng.random() < 0.35)
        fx, fy = f_of(x), f_of(y)
        fu, fi = f_of(x | y), f_of(x & y)
        slack = fx + fy - fu - fi
        tol = 1e-9 * max(1.0, abs(fx), abs(fy), abs(fu), abs(fi))
        if slack < -tol:
            violations += 1
            worst = min(worst, slack)
    return CheckOutcome(
        "submodularity_k1",
        violations == 0,
        f"worst slack {worst:.3e}" if violations else f"{pairs} pairs, no violations",
        pairs,
        violations,
        time.perf_counter() - start,
    )


def check_monotonicity(trials: int = 1000, seed: int = 11) -> CheckOutcome:
    """Adding any expert placement never decreases F, across top-1 and mixed
    top-K instances."""
    start = time.perf_counter()
    instances = []
    for s in range(4):
        instances.append(small_instance(seed + s, _k1_models(8), num_servers=3))
        instances.append(small_instance(seed + 50 + s, _mixed_models(), num_servers=3))
    models = [LatencyModel(i) for i in instances]
    rng = np.random.default_rng(seed)
    violations = 0
    worst = 0.0
    per = -(-trials // len(models))
    done = 0
    for model in models:
        ground = _ground_set(model)
        for _ in range(per):
            if done >= trials:
                break
            x = [p for p in ground if rng.random() < 0.4]
            rest = [p for p in ground if p not in set(x)]
            if not rest:
                continue
            add = rest[int(rng.integers(len(rest)))]
            f0 = model.objective_from_mask(_mask_from_pairs(model, x))
            f1 = model.objective_from_mask(_mask_from_pairs(model, x + [add]))
            done += 1
            if f1 < f0 - 1e-15:
                violations += 1
                worst = min(worst, f1 - f0)
    return CheckOutcome(
        "monotonicity",
        violations == 0,
        f"worst drop {worst:.3e}" if violations else f"{done} trials, no violations",
        done,
        violations,
        time.perf_counter() - start,
    )


def check_nonsubmodular_witnesses() -> CheckOutcome:
    """Both marginal-difference signs exist on the four-server pair instance."""
    start = time.perf_counter()
    instance = four_server_pair_instance()
    found = find_nonsubmodular_witnesses(instance)
    pos, neg = found["positive"], found["negative"]
    passed = pos is not None and neg is not None
    detail = ""
    if passed:
        detail = (
            f"positive {pos['difference']:.3e} adding {pos['added']}, "
            f"negative {neg['difference']:.3e} adding {neg['added']}"
        )
    return CheckOutcome(
        "nonsubmodular_witnesses", passed, detail, 1, 0 if passed else 1,
        time.perf_counter() - start,
    )


def _eq8_server(model: LatencyModel, ctx, g: int, mask) -> int | None:
    """Closed-form top-1 serving server: the cached non-associated server with
    the lowest round trip, ties to the lowest server id."""
    cands = mask[g] & ~ctx.n_bit
    if cands == 0:
        return None
    best = None
    m = cands
    while m:
        low = m & -m
        b = low.bit_length() - 1
        key = (ctx.fwd[b] + ctx.ret[b], model.server_ids[b])
        if best is None or key < best[0:2]:
            best = (key[0], key[1], b)
        m -= low
    return best[1]


def check_k1_routing_closed_form(instances: int = 100, seed: int = 3) -> CheckOutcome:
    """route_other_edges agrees with the closed-form serving rule on every
    top-1 query (uniform per-expert edge compute)."""
    start = time.perf_counter()
    from .placement import random_placement

    mismatches = 0
    queries = 0
    for s in range(instances):
        instance = small_instance(
            seed + s, _k1_models(8), num_servers=4, num_users=3, capacity_experts=3.0
        )
        model = LatencyModel(instance)
        placement = random_placement(instance, seed + s)
        mask = model.mask_of(placement)
        for t in model.terms:
            for g in t.needed:
                ctx = t.ctx
                cands = mask[g] & ~ctx.n_bit
                if cands == 0 or mask[g] & ctx.n_bit:
                    continue  # cloud or associated disposition
                expected = _eq8_server(model, ctx, g, mask)
                decision = model.route_other_edges(
                    t.uid, t.mid, [g], placement
                )
                got = next(iter(decision.assignment.values()))[1]
                queries += 1
                if got != expected:
                    mismatches += 1
    return CheckOutcome(
        "k1_routing_closed_form",
        mismatches == 0,
        f"{queries} queries across {instances} instances",
        queries,
        mismatches,
        time.perf_counter() - start,
    )


def check_telescoping(runs: int = 100, seed: int = 23) -> CheckOutcome:
    """Sum of recorded per-server gains equals a fresh evaluation of F on the
    union placement, for successive runs under both solvers."""
    start = time.perf_counter()
    violations = 0
    worst = 0.0
    done = 0
    s = 0
    while done < runs:
        models = _mixed_models() if s % 2 else _k1_models(8)
        instance = small_instance(seed + s, models, num_servers=3, num_users=3)
        for solver in ("dp", "accel"):
            if done >= runs:
                break
            run = successive_placement(instance, solver=solver)
            f_scratch = LatencyModel(instance).objective(run.placement)
            gap = abs(f_scratch - run.telescoped)
            done += 1
            if gap > 1e-9 * max(1.0, abs(f_scratch)):
                violations += 1
                worst = max(worst, gap)
        s += 1
    return CheckOutcome(
        "telescoping",
        violations == 0,
        f"worst gap {worst:.3e}" if violations else f"{done} runs, no violations",
        done,
        violations,
        time.perf_counter() - start,
    )


def _dyadic_items(rng, n: int, weights_pool) -> list[ItemValue]:
    # Dyadic values make float sums exact, so "exact equality" between
    # solvers and enumeration is well defined.
    items = []
    for i in range(n):
        w = int(rng.choice(weights_pool))
        v = float(rng.integers(0, 1 << 20)) / 1024.0
        items.append(ItemValue(i, w, v))
    return items


def _enumerate_best(items: list[ItemValue], capacity: float) -> float:
    best = 0.0
    n = len(items)
    for sub in range(1 << n):
        w = 0.0
        v = 0.0
        m = sub
        i = 0
        while m:
            if m & 1:
                w += items[i].weight
                v += items[i].value
            m >>= 1
            i += 1
        if w <= capacity and v > best:
            best = v
    return best


def check_knapsack_exactness(instances: int = 500, seed: int = 5) -> CheckOutcome:
    """dp_knapsack matches exhaustive enumeration on <= 15 items."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(instances):
        n = int(rng.integers(1, 16))
        items = _dyadic_items(rng, n, list(range(1, 13)))
        capacity = float(rng.integers(0, int(sum(it.weight for it in items)) + 5))
        got = dp_knapsack(items, capacity)
        want = _enumerate_best(items, capacity)
        chosen_w = sum(items[i].weight for i in got.selected)
        chosen_v = sum(items[i].value for i in got.selected)
        if got.value != want or chosen_w > capacity or chosen_v != got.value:
            violations += 1
    return CheckOutcome(
        "knapsack_exactness",
        violations == 0,
        f"{instances} instances vs enumeration",
        instances,
        violations,
        time.perf_counter() - start,
    )


def check_accelerated_equivalence(instances: int = 100, seed: int = 9) -> CheckOutcome:
    """accelerated_knapsack equals dp_knapsack in value on grouped instances,
    under both fold implementations."""
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    violations = 0
    for _ in range(instances):
        n = int(rng.integers(1, 41))
        items = _dyadic_items(rng, n, [2, 3, 5, 7])
        capacity = float(rng.integers(0, 80))
        want = dp_knapsack(items, capacity)
        for method in ("scan", "monotone"):
            got = accelerated_knapsack(items, capacity, method=method)
            chosen_w = sum(items[i].weight for i in got.selected)
            chosen_v = sum(items[i].value for i in got.selected)
            if got.value != want.value or chosen_w > capacity or chosen_v != got.value:
                violations += 1
    return CheckOutcome(
        "accelerated_equivalence",
        violations == 0,
        f"{instances} grouped instances, both fold methods",
        instances,
        violations,
        time.perf_counter() - start,
    )


def check_approximation_bounds(
    instances: int = 50, seed: int = 31, max_placements: int = 10**7
) -> CheckOutcome:
    """Guarantees against the brute-force optimum on tiny instances:
    density greedy >= (1 - 1/e) F* on top-1 instances; the successive
    decomposition >= (1 - kappa_max)/2 F* on mixed instances and
    >= (1 - kappa_1) F* with a single server."""
    start = time.perf_counter()
    n_k1 = instances - instances // 2 - instances // 5
    n_mixed = instances // 2
    n_single = instances // 5
    violations = 0
    details = []

    for s in range(n_k1):
        instance = small_instance(
            seed + s, _k1_models(7), num_servers=2, num_users=3, capacity_experts=2.0
        )
        model = LatencyModel(instance)
        _, f_star = brute_force_optimal(instance, max_placements, model)
        got = greedy_k1(instance, model).objective
        if got < (1.0 - 1.0 / EULER_E) * f_star - 1e-9 * max(1.0, f_star):
            violations += 1
            details.append(f"greedy seed {seed + s}: {got:.4e} < (1-1/e){f_star:.4e}")

    for s in range(n_mixed):
        instance = small_instance(
            seed + 100 + s, _mixed_models(), num_servers=2, num_users=3, capacity_experts=3.0
        )
        model = LatencyModel(instance)
        _, f_star = brute_force_optimal(instance, max_placements, model)
        run = successive_placement(instance, solver="dp", compute_curvature=True, model=model)
        kappa_max = max(r.kappa for r in run.records)
        bound = (1.0 - kappa_max) / 2.0
        if run.objective < bound * f_star - 1e-9 * max(1.0, f_star):
            violations += 1
            details.append(
                f"successive seed {seed + 100 + s}: {run.objective:.4e} < "
                f"{bound:.3f} x {f_star:.4e}"
            )

    for s in range(n_single):
        instance = small_instance(
            seed + 200 + s, _mixed_models(), num_servers=1, num_users=2, capacity_experts=3.0
        )
        model = LatencyModel(instance)
        _, f_star = brute_force_optimal(instance, max_placements, model)
        run = successive_placement(instance, solver="accel", compute_curvature=True, model=model)
        kappa_1 = run.records[0].kappa
        if run.objective < (1.0 - kappa_1) * f_star - 1e-9 * max(1.0, f_star):
            violations += 1
            details.append(
                f"single-server seed {seed + 200 + s}: {run.objective:.4e} < "
                f"(1-{kappa_1:.3f}) x {f_star:.4e}"
            )

    return CheckOutcome(
        "approximation_bounds",
        violations == 0,
        "; ".join(details) if details else
        f"{n_k1} top-1 + {n_mixed} mixed + {n_single} single-server instances",
        instances,
        violations,
        time.perf_counter() - start,
    )


def check_lemma1_sandwich(subsets: int = 200, seed: int = 17, instances: int = 2) -> CheckOutcome:
    """(1-kappa) g(A|empty) <= sum_z g(z|empty) <= g(A|empty) for the
    supermodular part of a server subproblem."""
    start = time.perf_counter()
    violations = 0
    rng = np.random.default_rng(seed)
    trials = 0
    for s in range(instances):
        instance = small_instance(seed + s, _mixed_models(), num_servers=3, num_users=3)
        model = LatencyModel(instance)
        empty = Placement.empty(instance)
        state = EvalState(model, empty)
        for n in model.server_ids[:1]:
            kappa = supermodular_curvature(instance, n, empty, model, state)
            candidates = sorted(
                {g for t in model.terms if t.k > 1 for g in t.needed}
            )
            singles = {
                g: supermodular_part_gain(instance, n, empty, [g], model, state)
                for g in candidates
            }
            for _ in range(subsets):
                a = [g for g in candidates if rng.random() < 0.5]
                if not a:
                    continue
                g_a = supermodular_part_gain(instance, n, empty, a, model, state)
                s_sum = sum(singles[g] for g in a)
                tol = 1e-9 * max(1.0, abs(g_a))
                trials += 1
                if not ((1.0 - kappa) * g_a - tol <= s_sum <= g_a + tol):
                    violations += 1
    return CheckOutcome(
        "lemma1_sandwich",
        violations == 0,
        f"{trials} subsets across {instances} instances",
        trials,
        violations,
        time.perf_counter() - start,
    )


def check_capacity_invariant(seed: int = 41) -> CheckOutcome:
    """Every optimizer's placement satisfies capacity; an injected violating
    placement is rejected."""
    start = time.perf_counter()
    from .placement import lfu_placement, random_placement

    instance = small_instance(seed, _mixed_models(), num_servers=2, num_users=3,
                              capacity_experts=2.0)
    model = LatencyModel(instance)
    ok = True
    details = []
    placements = {
        "greedy": greedy_k1(instance, model).placement,
        "dp": successive_placement(instance, "dp", model=model).placement,
        "accel": successive_placement(instance, "accel", model=model).placement,
        "lfu": lfu_placement(instance),
        "random": random_placement(instance, seed),
    }
    for name, p in placements.items():
        try:
            p.validate(instance)
        except ValueError as exc:
            ok = False
            details.append(f"{name}: {exc}")
    # Negative test: overfilling one server must be rejected.
    overfull = Placement({instance.servers[0].server_id: frozenset(range(6))})
    try:
        overfull.validate(instance)
        ok = False
        details.append("capacity-violating placement was not rejected")
    except ValueError:
        pass
    return CheckOutcome(
        "capacity_invariant", ok, "; ".join(details) if details else
        "all optimizer placements feasible; violating placement rejected",
        len(placements) + 1, 0 if ok else 1, time.perf_counter() - start,
    )


def verify_suite(scenario: Scenario | None = None, quick: bool = True) -> dict:
    """Run every property check at reduced size; machine-readable report."""
    scale = 1 if quick else 5
    checks = [
        check_submodularity_k1(pairs=200 * scale),
        check_monotonicity(trials=200 * scale),
        check_nonsubmodular_witnesses(),
        check_k1_routing_closed_form(instances=10 * scale),
        check_telescoping(runs=20 * scale),
        check_knapsack_exactness(instances=100 * scale),
        check_accelerated_equivalence(instances=30 * scale),
        check_approximation_bounds(instances=10 * scale),
        check_lemma1_sandwich(subsets=50 * scale),
        check_capacity_invariant(),
    ]
    return {
        "passed": all(c.passed for c in checks),
        "checks": [c.as_dict() for c in checks],
    }
