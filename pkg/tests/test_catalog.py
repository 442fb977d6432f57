import math

import pytest

from moeplace.catalog import ExpertId, ModelSpec, build_catalog, layer_subsets
from moeplace.scenario import default_model_library


def spec(mid="m", layers=1, experts=3, k=1, b=1e6, d=1024, flops=1e7):
    return ModelSpec(mid, layers, experts, k, b, d, flops)


class TestModelSpec:
    def test_invariants(self):
        with pytest.raises(ValueError):
            spec(k=4, experts=3)
        with pytest.raises(ValueError):
            spec(k=0)
        with pytest.raises(ValueError):
            spec(layers=0)
        with pytest.raises(ValueError):
            spec(b=0)
        with pytest.raises(ValueError):
            spec(flops=-1)

    def test_num_experts(self):
        assert spec(layers=4, experts=8).num_experts == 32


class TestBuildCatalog:
    def test_single_model_counting(self):
        cat = build_catalog([spec(layers=1, experts=3)])
        assert cat.total_experts == 3
        assert sorted(cat.index_of(ExpertId("m", 1, i)) for i in (1, 2, 3)) == [0, 1, 2]

    def test_two_model_counting(self):
        cat = build_catalog([spec("a", 2, 4), spec("b", 1, 2)])
        assert cat.total_experts == 10

    def test_default_library_size(self):
        lib = default_model_library()
        assert len(lib) == 12
        cat = build_catalog(list(lib))
        assert cat.total_experts > 1600

    def test_duplicate_model_id(self):
        with pytest.raises(ValueError, match="duplicate"):
            build_catalog([spec("a"), spec("a")])

    def test_index_ordering_follows_input(self):
        cat = build_catalog([spec("b", 1, 2), spec("a", 1, 2)])
        assert cat.index_of(ExpertId("b", 1, 1)) == 0
        assert cat.index_of(ExpertId("a", 1, 1)) == 2

    def test_global_index_round_trip(self):
        cat = build_catalog([spec("a", 3, 4), spec("b", 2, 5), spec("c", 1, 7)])
        for g in range(cat.total_experts):
            e = cat.expert_of(g)
            assert cat.index_of(e) == g
        for e in [ExpertId("a", 3, 4), ExpertId("b", 1, 5), ExpertId("c", 1, 1)]:
            assert cat.expert_of(cat.index_of(e)) == e

    def test_out_of_range(self):
        cat = build_catalog([spec()])
        with pytest.raises(IndexError):
            cat.expert_of(3)
        with pytest.raises(ValueError):
            cat.index_of(ExpertId("m", 2, 1))
        with pytest.raises(KeyError):
            cat.model("nope")


class TestLayerSubsets:
    def test_three_choose_two(self):
        cat = build_catalog([spec(experts=3, k=2)])
        assert layer_subsets(cat, "m", 1) == [(1, 2), (1, 3), (2, 3)]

    def test_singletons(self):
        cat = build_catalog([spec(experts=4, k=1)])
        assert layer_subsets(cat, "m", 1) == [(1,), (2,), (3,), (4,)]

    def test_binomial_count(self):
        cat = build_catalog([spec(experts=5, k=2)])
        assert len(layer_subsets(cat, "m", 1)) == 10

    def test_counts_match_binomial(self):
        for e, k in [(6, 3), (8, 2), (4, 4)]:
            cat = build_catalog([spec(experts=e, k=k)])
            assert len(layer_subsets(cat, "m", 1)) == math.comb(e, k)

    def test_unknown_layer(self):
        cat = build_catalog([spec(layers=2)])
        with pytest.raises(ValueError):
            layer_subsets(cat, "m", 3)

    def test_enumeration_cap(self):
        cat = build_catalog([spec(experts=40, k=4)])
        with pytest.raises(ValueError, match="limit"):
            layer_subsets(cat, "m", 1, limit=1000)
