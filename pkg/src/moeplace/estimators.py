"""Estimator-style wrappers around the placement optimizers.

Each optimizer is exposed as a scikit-learn style estimator: configure in
``__init__`` (``get_params``/``set_params`` work via ``BaseEstimator``),
call ``fit(instance)``, read ``placement_``, ``objective_value_``,
``average_latency_`` and ``runtime_seconds_``. ``score`` returns the
objective, so model-selection utilities compose naturally.
"""
from __future__ import annotations

import time

from sklearn.base import BaseEstimator

from .instance import Instance, Placement
from .latency import LatencyModel
from .placement import (
    brute_force_optimal,
    greedy_k1,
    lfu_placement,
    random_placement,
    successive_placement,
)
from .validation import check_instance

__all__ = [
    "PlacementEstimator",
    "GreedyPlacement",
    "SuccessivePlacement",
    "LfuPlacement",
    "RandomPlacement",
    "BruteForcePlacement",
    "ALGORITHM_NAMES",
    "make_estimator",
]


class PlacementEstimator(BaseEstimator):
    """Base class: fit(instance) computes a placement and its metrics."""

    def fit(self, instance: Instance, y=None):
        check_instance(instance)
        model = LatencyModel(instance)
        start = time.perf_counter()
        self._solve(instance, model)
        self.runtime_seconds_ = time.perf_counter() - start
        self.placement_.validate(instance)
        self.objective_value_ = model.objective(self.placement_)
        self.average_latency_ = model.average_latency(self.placement_)
        return self

    def _solve(self, instance: Instance, model: LatencyModel) -> None:
        raise NotImplementedError

    def score(self, instance=None, y=None) -> float:
        return self.objective_value_


class GreedyPlacement(PlacementEstimator):
    """Global density greedy; (1 - 1/e)-approximate when all models are top-1."""

    def _solve(self, instance, model):
        result = greedy_k1(instance, model=model)
        self.placement_ = result.placement
        self.steps_ = result.steps


class SuccessivePlacement(PlacementEstimator):
    """Successive per-server decomposition with an exact knapsack per server."""

    def __init__(self, solver: str = "dp", server_order: str = "id",
                 compute_curvature: bool = False):
        self.solver = solver
        self.server_order = server_order
        self.compute_curvature = compute_curvature

    def _solve(self, instance, model):
        result = successive_placement(
            instance,
            solver=self.solver,
            server_order=self.server_order,
            compute_curvature=self.compute_curvature,
            model=model,
        )
        self.placement_ = result.placement
        self.records_ = result.records
        self.telescoped_ = result.telescoped


class LfuPlacement(PlacementEstimator):
    """Each server caches its associated users' most requested experts."""

    def _solve(self, instance, model):
        self.placement_ = lfu_placement(instance)


class RandomPlacement(PlacementEstimator):
    """Uniform random feasible fill, deterministic for a fixed seed."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _solve(self, instance, model):
        self.placement_ = random_placement(instance, self.seed)


class BruteForcePlacement(PlacementEstimator):
    """Exhaustive oracle for small instances."""

    def __init__(self, max_placements: int = 10**7):
        self.max_placements = max_placements

    def _solve(self, instance, model):
        placement, value = brute_force_optimal(
            instance, max_placements=self.max_placements, model=model
        )
        self.placement_ = placement
        self.optimal_value_ = value


ALGORITHM_NAMES = ("greedy", "dp", "accel", "lfu", "random", "brute")


def make_estimator(name: str, seed: int = 0, **kwargs) -> PlacementEstimator:
    if name == "greedy":
        return GreedyPlacement()
    if name == "dp":
        return SuccessivePlacement(solver="dp", **kwargs)
    if name == "accel":
        return SuccessivePlacement(solver="accel", **kwargs)
    if name == "lfu":
        return LfuPlacement()
    if name == "random":
        return RandomPlacement(seed=seed)
    if name == "brute":
        return BruteForcePlacement(**kwargs)
    raise ValueError(f"unknown algorithm {name!r}; expected one of {ALGORITHM_NAMES}")
