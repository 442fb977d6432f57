import numpy as np
import pytest

from moeplace.knapsack import (
    ItemValue,
    accelerated_knapsack,
    dp_knapsack,
    group_prefix_sequence,
    _fold_monotone,
    _fold_scan,
)


def items_of(pairs):
    return [ItemValue(i, w, v) for i, (w, v) in enumerate(pairs)]


def enumerate_best(items, capacity):
    best = 0.0
    for sub in range(1 << len(items)):
        w = sum(items[i].weight for i in range(len(items)) if sub >> i & 1)
        v = sum(items[i].value for i in range(len(items)) if sub >> i & 1)
        if w <= capacity and v > best:
            best = v
    return best


class TestDpKnapsack:
    def test_small_instance_with_traceback(self):
        items = items_of([(3, 4), (2, 3), (2, 3)])
        got = dp_knapsack(items, 4)
        assert got.value == 6
        assert got.selected == (1, 2)

    def test_unconstrained_takes_all_positive(self):
        items = items_of([(3, 4), (2, 0), (2, 3)])
        got = dp_knapsack(items, 100)
        assert got.value == 7
        # Zero-value items never enter: ties prefer not taking.
        assert got.selected == (0, 2)

    def test_single_item_too_heavy(self):
        got = dp_knapsack(items_of([(10, 5)]), 4)
        assert got.value == 0.0 and got.selected == ()

    def test_negative_capacity(self):
        with pytest.raises(ValueError):
            dp_knapsack(items_of([(1, 1)]), -1)

    def test_no_items(self):
        assert dp_knapsack([], 10).value == 0.0

    def test_matches_enumeration(self):
        rng = np.random.default_rng(0)
        for _ in range(60):
            n = int(rng.integers(1, 13))
            items = [
                ItemValue(i, int(rng.integers(1, 10)), float(rng.integers(0, 1 << 16)) / 256.0)
                for i in range(n)
            ]
            cap = float(rng.integers(0, 40))
            got = dp_knapsack(items, cap)
            assert got.value == enumerate_best(items, cap)
            assert sum(items[i].weight for i in got.selected) <= cap
            assert sum(items[i].value for i in got.selected) == got.value

    def test_fallback_unit_never_overfills(self):
        # Weights that do not share a useful gcd get rounded up on the grid.
        items = [ItemValue(0, 3_000_001, 5.0), ItemValue(1, 2_999_999, 4.0)]
        got = dp_knapsack(items, 5_000_000, unit=1 << 20)
        assert sum(items[i].weight for i in got.selected) <= 5_000_000


class TestGroupPrefix:
    def test_prefix_values(self):
        seq = group_prefix_sequence([5.0, 4.0, 1.0], 2, 5)
        assert list(seq) == [0.0, 0.0, 5.0, 5.0, 9.0, 9.0]

    def test_step_concavity(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(1, 12))
            step = int(rng.integers(1, 5))
            values = sorted(rng.uniform(0, 10, size=n), reverse=True)
            seq = group_prefix_sequence(list(values), step, step * (n + 2))
            on_grid = seq[::step]
            second = np.diff(on_grid, n=2)
            assert np.all(second <= 1e-12)


class TestAcceleratedKnapsack:
    def test_single_group_prefix(self):
        items = items_of([(2, 5), (2, 4), (2, 1)])
        got = accelerated_knapsack(items, 5)
        assert got.value == 9
        assert sorted(got.selected) == [0, 1]

    def test_zero_capacity(self):
        assert accelerated_knapsack(items_of([(2, 5)]), 0).value == 0.0

    def test_matches_dp_on_grouped_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            n = int(rng.integers(1, 30))
            items = [
                ItemValue(i, int(rng.choice([2, 3, 5])), float(rng.integers(0, 1 << 16)) / 256.0)
                for i in range(n)
            ]
            cap = float(rng.integers(0, 60))
            want = dp_knapsack(items, cap)
            for method in ("scan", "monotone"):
                got = accelerated_knapsack(items, cap, method=method)
                assert got.value == want.value
                assert sum(items[i].weight for i in got.selected) <= cap
                assert sum(items[i].value for i in got.selected) == got.value

    def test_fold_methods_agree_exactly(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            capq = int(rng.integers(1, 40))
            running = np.asarray(rng.integers(0, 1 << 16, size=capq + 1), dtype=float)
            running = np.maximum.accumulate(running) / 256.0
            n = int(rng.integers(1, 10))
            step = int(rng.integers(1, 6))
            values = sorted(rng.integers(0, 1 << 16, size=n) / 256.0, reverse=True)
            prefix = np.concatenate([[0.0], np.cumsum(values)])
            out_a, counts_a = _fold_scan(running, prefix, step)
            out_b, counts_b = _fold_monotone(running, prefix, step)
            assert np.array_equal(out_a, out_b)
            assert np.array_equal(counts_a, counts_b)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            accelerated_knapsack(items_of([(1, 1)]), 1, method="magic")


class TestItemValue:
    def test_validation(self):
        with pytest.raises(ValueError):
            ItemValue(0, 0, 1.0)
        with pytest.raises(ValueError):
            ItemValue(0, 1, -0.5)
