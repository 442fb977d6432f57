import numpy as np
import pytest
from sklearn.base import clone

from moeplace.catalog import ModelSpec, build_catalog
from moeplace.estimators import (
    GreedyPlacement,
    RandomPlacement,
    SuccessivePlacement,
    make_estimator,
)
from moeplace.instance import Instance, Placement
from moeplace.knapsack import dp_knapsack
from moeplace.latency import EvalState, LatencyModel
from moeplace.network import EdgeServerNode, Hop, LinkModel, UserNode
from moeplace.placement import (
    brute_force_optimal,
    curvature_closed_form,
    curvature_report,
    find_nonsubmodular_witnesses,
    greedy_k1,
    lfu_placement,
    random_placement,
    subproblem_item_values,
    successive_placement,
    supermodular_curvature,
    supermodular_part_gain,
)
from moeplace.verification import (
    _k1_models,
    _mixed_models,
    four_server_pair_instance,
    small_instance,
)
from moeplace.workload import ActivationProfile, LocalCache


def singles_instance(probs, capacity_experts, num_servers=1):
    """One user, one top-1 model, explicit singleton probabilities: subproblem
    values are hand-computable and proportional to the probabilities."""
    model = ModelSpec("m", 1, len(probs), 1, 100e6, 4096, 5e7)
    catalog = build_catalog([model])
    positions = {n: (200.0 * (n - 1), 0.0) for n in range(1, num_servers + 1)}
    servers = tuple(
        EdgeServerNode(n, positions[n], capacity_experts * 100e6, 4.0, 82.58e12)
        for n in positions
    )
    backhaul = {
        (a, b): Hop(fixed_latency_s=1e-4) for a in positions for b in positions if a != b
    }
    link = LinkModel(
        backhaul=backhaul,
        cloud={n: Hop(fixed_latency_s=0.01) for n in positions},
        cloud_return={n: Hop(fixed_latency_s=0.01) for n in positions},
    )
    user = UserNode(1, (10.0, 0.0), 5e6, 0.01, 50e12, associated_server=1)
    table = {frozenset({i + 1}): p for i, p in enumerate(probs)}
    profile = ActivationProfile({1: {"m": 1.0}}, {(1, "m", 1): table})
    return Instance(catalog, (user,), servers, link, profile, LocalCache({1: frozenset()}))


class TestGreedy:
    def test_zero_capacity_yields_empty(self):
        inst = small_instance(1, _k1_models(6), capacity_experts=0.0)
        result = greedy_k1(inst)
        assert result.placement.total_cached() == 0
        assert result.objective == 0.0

    def test_density_sorted_prefix(self):
        inst = singles_instance([0.4, 0.3, 0.2, 0.1], capacity_experts=2)
        result = greedy_k1(inst)
        cat = inst.catalog
        assert result.placement.experts_on(1) == {
            cat.global_index("m", 1, 1),
            cat.global_index("m", 1, 2),
        }

    def test_tie_break_lowest_index(self):
        inst = singles_instance([0.25, 0.25, 0.25, 0.25], capacity_experts=2)
        result = greedy_k1(inst)
        cat = inst.catalog
        assert result.placement.experts_on(1) == {
            cat.global_index("m", 1, 1),
            cat.global_index("m", 1, 2),
        }

    def test_objective_matches_scratch_evaluation(self):
        inst = small_instance(11, _mixed_models(), num_servers=3, num_users=3)
        model = LatencyModel(inst)
        result = greedy_k1(inst, model)
        assert result.objective == pytest.approx(model.objective(result.placement), abs=1e-15)

    def test_runs_on_mixed_top_k(self):
        inst = small_instance(12, _mixed_models(), num_servers=2, num_users=3)
        result = greedy_k1(inst)
        result.placement.validate(inst)


class TestSubproblemItemValues:
    def test_saturated_marginal_is_zero(self):
        inst = singles_instance([0.5, 0.5], capacity_experts=2)
        cat = inst.catalog
        g = cat.global_index("m", 1, 1)
        prior = Placement({1: frozenset({g})})
        # The expert already sits on the user's associated server; a second
        # placement there is excluded, and its value elsewhere would be the
        # tiny backhaul spread, not tested here.
        items = subproblem_item_values(inst, 1, prior)
        by_expert = {it.expert: it for it in items}
        assert g not in by_expert

    def test_top1_value_is_cloud_round_trip_saving(self):
        inst = singles_instance([0.7, 0.3], capacity_experts=2)
        model = LatencyModel(inst)
        items = subproblem_item_values(inst, 1, Placement.empty(inst), model)
        ctx = model._ctx[(1, "m")]
        by_expert = {it.expert: it for it in items}
        g = inst.catalog.global_index("m", 1, 1)
        # Serving on the associated server replaces the full cloud trip by
        # one edge compute; weight p / U with U = 1.
        expected = 0.7 * (ctx.cloud_fwd + ctx.cloud_ret - ctx.cpe_assoc)
        assert by_expert[g].value == pytest.approx(expected, rel=1e-12)
        assert by_expert[g].kind == "modular"

    def test_pair_member_is_undervalued_in_isolation(self):
        inst = four_server_pair_instance()
        model = LatencyModel(inst)
        items = subproblem_item_values(inst, 1, Placement.empty(inst), model)
        g1 = inst.catalog.global_index("pair", 1, 1)
        g2 = inst.catalog.global_index("pair", 1, 2)
        by_expert = {it.expert: it for it in items}
        assert by_expert[g1].kind == "supermodular"
        isolated = by_expert[g1].value
        assert isolated > 0
        # Conditioned on the partner being cached, the marginal grows: the
        # cloud's fixed forward hop and compute are finally saved.
        prior = Placement({1: frozenset({g2})})
        state = EvalState(model, prior)
        completed = state.gain(1, g1)
        assert completed > isolated * 1.5


class TestSuccessive:
    def test_single_server_solves_surrogate_exactly(self):
        inst = singles_instance([0.4, 0.3, 0.2, 0.1], capacity_experts=2)
        model = LatencyModel(inst)
        items = subproblem_item_values(inst, 1, Placement.empty(inst), model)
        want = dp_knapsack(
            [it for it in items if it.value > 0], inst.servers[0].capacity_bytes
        )
        run = successive_placement(inst, solver="dp", model=model)
        assert run.records[0].surrogate_value == pytest.approx(want.value, rel=1e-12)

    def test_deterministic_across_runs(self):
        inst = small_instance(13, _mixed_models(), num_servers=3, num_users=3)
        a = successive_placement(inst, solver="dp")
        b = successive_placement(inst, solver="dp")
        assert a.placement.cached == b.placement.cached

    def test_solvers_agree_on_objective(self):
        for seed in range(5):
            inst = small_instance(20 + seed, _mixed_models(), num_servers=3, num_users=3)
            model = LatencyModel(inst)
            a = successive_placement(inst, solver="dp", model=model)
            b = successive_placement(inst, solver="accel", model=model)
            assert a.objective == pytest.approx(b.objective, rel=1e-12)

    def test_telescoping_sum(self):
        inst = small_instance(14, _mixed_models(), num_servers=3, num_users=3)
        run = successive_placement(inst, solver="accel")
        scratch = LatencyModel(inst).objective(run.placement)
        assert run.telescoped == pytest.approx(scratch, abs=1e-9)

    def test_capacity_order_knob(self):
        inst = small_instance(15, _mixed_models(), num_servers=3, num_users=3)
        run = successive_placement(inst, solver="dp", server_order="capacity_desc")
        run.placement.validate(inst)
        with pytest.raises(ValueError):
            successive_placement(inst, server_order="by_moon_phase")

    def test_unknown_solver(self):
        inst = small_instance(16, _k1_models(4))
        with pytest.raises(ValueError):
            successive_placement(inst, solver="ilp")


class TestCurvature:
    def test_pure_top1_curvature_is_zero(self):
        inst = small_instance(17, _k1_models(6), num_servers=2)
        kappa = supermodular_curvature(inst, 1, Placement.empty(inst))
        assert kappa == 0.0

    def test_pair_instance_curvature_in_unit_interval(self):
        inst = four_server_pair_instance()
        kappa = supermodular_curvature(inst, 2, Placement.empty(inst))
        assert 0.0 < kappa < 1.0

    def test_sandwich_property(self):
        inst = small_instance(18, _mixed_models(), num_servers=3, num_users=3)
        model = LatencyModel(inst)
        empty = Placement.empty(inst)
        kappa = supermodular_curvature(inst, 1, empty, model)
        candidates = sorted({g for t in model.terms if t.k > 1 for g in t.needed})
        singles = {
            g: supermodular_part_gain(inst, 1, empty, [g], model) for g in candidates
        }
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = [g for g in candidates if rng.random() < 0.5]
            if not a:
                continue
            g_a = supermodular_part_gain(inst, 1, empty, a, model)
            s = sum(singles[g] for g in a)
            tol = 1e-9 * max(1.0, abs(g_a))
            assert (1.0 - kappa) * g_a - tol <= s <= g_a + tol

    def test_closed_form_limits(self):
        # Negligible edge compute pushes the estimate to 1/2 (bound 1/4).
        inst = four_server_pair_instance()
        est = curvature_closed_form(inst)
        assert est.value == pytest.approx(0.5, abs=1e-2)
        # Compute latency equal to the backhaul hop zeroes the estimate;
        # the closest pair here is servers 3 and 4 (100 m apart).
        t_bh = inst.link.backhaul_hop(3, 4).latency(4096)
        flops = inst.servers[0].per_expert_compute_flops
        heavy = ModelSpec("pair", 1, 2, 2, 10e6, 4096, t_bh * flops)
        inst2 = Instance(
            build_catalog([heavy]), inst.users, inst.servers, inst.link,
            inst.profile, inst.local_cache,
        )
        est2 = curvature_closed_form(inst2)
        assert est2.value == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_undefined_diagnostic(self):
        inst = four_server_pair_instance()
        t_bh = inst.link.backhaul_hop(3, 4).latency(4096)
        flops = inst.servers[0].per_expert_compute_flops
        very_heavy = ModelSpec("pair", 1, 2, 2, 10e6, 4096, 2.5 * t_bh * flops)
        inst2 = Instance(
            build_catalog([very_heavy]), inst.users, inst.servers, inst.link,
            inst.profile, inst.local_cache,
        )
        est = curvature_closed_form(inst2)
        assert est.value is None
        assert "undefined" in est.diagnostic

    def test_needs_two_servers(self):
        inst = singles_instance([1.0], capacity_experts=1, num_servers=1)
        with pytest.raises(ValueError):
            curvature_closed_form(inst)

    def test_report_shape(self):
        inst = small_instance(19, _mixed_models(), num_servers=2, num_users=3)
        report = curvature_report(inst)
        assert set(report.per_server) == {1, 2}
        assert report.kappa_max == max(report.per_server.values())
        assert report.implied_bound == pytest.approx((1 - report.kappa_max) / 2)


class TestBaselines:
    def test_lfu_uniform_frequency_prefix(self):
        inst = singles_instance([0.25, 0.25, 0.25, 0.25], capacity_experts=2)
        placement = lfu_placement(inst)
        cat = inst.catalog
        assert placement.experts_on(1) == {
            cat.global_index("m", 1, 1),
            cat.global_index("m", 1, 2),
        }

    def test_lfu_dominant_expert_everywhere(self):
        inst = small_instance(21, _k1_models(6), num_servers=3, num_users=4,
                              capacity_experts=2.0)
        model = LatencyModel(inst)
        # Aggregate per-server frequencies share the same global ordering, so
        # the top expert appears in every server with spare capacity.
        placement = lfu_placement(inst)
        freq = {}
        for (uid, mid, layer), table in inst.profile.subset_prob.items():
            base = inst.catalog.layer_base(mid, layer)
            p_um = inst.profile.model_request_prob[uid][mid]
            for subset, p in table.items():
                for i in subset:
                    freq[base + i - 1] = freq.get(base + i - 1, 0.0) + p_um * p
        top = max(sorted(freq), key=lambda g: freq[g])
        for n in (1, 2, 3):
            assert top in placement.experts_on(n)

    def test_random_is_seed_deterministic(self):
        inst = small_instance(22, _mixed_models(), num_servers=2, num_users=3)
        assert random_placement(inst, 5).cached == random_placement(inst, 5).cached
        assert random_placement(inst, 5).cached != random_placement(inst, 6).cached

    def test_random_zero_capacity(self):
        inst = small_instance(23, _k1_models(4), capacity_experts=0.0)
        assert random_placement(inst, 0).total_cached() == 0


class TestBruteForce:
    def test_zero_capacity_optimum_is_zero(self):
        inst = small_instance(24, _k1_models(4), capacity_experts=0.0)
        placement, value = brute_force_optimal(inst)
        assert value == 0.0 and placement.total_cached() == 0

    def test_matches_dp_on_modular_single_server(self):
        # One user, one top-1 model, one server: the objective is exactly the
        # sum of singleton values, i.e. a knapsack.
        inst = singles_instance([0.4, 0.25, 0.2, 0.15], capacity_experts=2)
        model = LatencyModel(inst)
        items = subproblem_item_values(inst, 1, Placement.empty(inst), model)
        want = dp_knapsack([it for it in items if it.value > 0],
                           inst.servers[0].capacity_bytes)
        _, f_star = brute_force_optimal(inst, model=model)
        assert f_star == pytest.approx(want.value, rel=1e-12)

    def test_search_space_cap(self):
        inst = small_instance(25, _k1_models(10), num_servers=2, capacity_experts=5.0)
        with pytest.raises(ValueError, match="cap"):
            brute_force_optimal(inst, max_placements=10)


class TestWitnessSearch:
    def test_both_signs_on_pair_instance(self):
        found = find_nonsubmodular_witnesses(four_server_pair_instance())
        assert found["positive"] is not None
        assert found["negative"] is not None
        assert found["positive"]["difference"] > 0
        assert found["negative"]["difference"] < 0

    def test_ground_set_cap(self):
        inst = small_instance(26, _k1_models(10), num_servers=4)
        with pytest.raises(ValueError, match="ground set"):
            find_nonsubmodular_witnesses(inst)


class TestEstimators:
    def test_fit_populates_attributes(self):
        inst = small_instance(27, _mixed_models(), num_servers=2, num_users=3)
        est = SuccessivePlacement(solver="accel").fit(inst)
        assert est.placement_.total_cached() > 0
        assert est.objective_value_ > 0
        assert est.average_latency_ > 0
        assert est.runtime_seconds_ >= 0
        assert est.score() == est.objective_value_

    def test_get_params_and_clone(self):
        est = SuccessivePlacement(solver="accel", server_order="capacity_desc")
        assert est.get_params()["solver"] == "accel"
        twin = clone(est)
        assert twin.get_params() == est.get_params()

    def test_registry(self):
        assert isinstance(make_estimator("greedy"), GreedyPlacement)
        assert isinstance(make_estimator("random", seed=3), RandomPlacement)
        assert make_estimator("accel").solver == "accel"
        with pytest.raises(ValueError):
            make_estimator("simulated-annealing")

    def test_greedy_estimator_matches_function(self):
        inst = small_instance(28, _k1_models(6), num_servers=2, num_users=3)
        est = GreedyPlacement().fit(inst)
        direct = greedy_k1(inst)
        assert est.placement_.cached == direct.placement.cached
