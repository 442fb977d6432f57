"""MoE model structure and dense global indexing of experts.

Every expert network in every layer of every model gets a unique global
index in ``[0, E)``, ordered by (position of the model in the input list,
layer, in-layer expert index). All placement code works on these dense
indices; the (model, layer, index) triple is the human-readable form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

__all__ = [
    "ModelSpec",
    "ExpertId",
    "ExpertCatalog",
    "build_catalog",
    "layer_subsets",
]

# Enumerating size-K subsets of a layer explodes combinatorially; layers
# above this cap must use sparse probability tables instead.
DEFAULT_SUBSET_LIMIT = 10**6


@dataclass(frozen=True)
class ModelSpec:
    """Structural description of one MoE model.

    ``expert_flops`` is the per-token workload of a single expert network;
    ``embedding_bytes`` is the token embedding shipped to remote experts.
    """

    model_id: str
    num_moe_layers: int
    experts_per_layer: int
    top_k: int
    expert_bytes: float
    embedding_bytes: float
    expert_flops: float

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id: must be a non-empty string")
        if self.num_moe_layers < 1:
            raise ValueError(
                f"{self.model_id}: num_moe_layers must be >= 1, got {self.num_moe_layers}"
            )
        if self.experts_per_layer < 1:
            raise ValueError(
                f"{self.model_id}: experts_per_layer must be >= 1, got {self.experts_per_layer}"
            )
        if not 1 <= self.top_k <= self.experts_per_layer:
            raise ValueError(
                f"{self.model_id}: top_k must be in [1, {self.experts_per_layer}], got {self.top_k}"
            )
        for name in ("expert_bytes", "embedding_bytes", "expert_flops"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{self.model_id}: {name} must be > 0")

    @property
    def num_experts(self) -> int:
        return self.num_moe_layers * self.experts_per_layer


@dataclass(frozen=True, order=True)
class ExpertId:
    """One expert network: (model, 1-based layer, 1-based in-layer index)."""

    model: str
    layer: int
    index: int


class ExpertCatalog:
    """Immutable bijection between :class:`ExpertId` and dense global indices."""

    def __init__(self, models: list[ModelSpec]):
        self.models: tuple[ModelSpec, ...] = tuple(models)
        self._by_id: dict[str, ModelSpec] = {}
        self._base: dict[str, int] = {}
        offset = 0
        for spec in self.models:
            if spec.model_id in self._by_id:
                raise ValueError(f"duplicate model_id: {spec.model_id!r}")
            self._by_id[spec.model_id] = spec
            self._base[spec.model_id] = offset
            offset += spec.num_experts
        self.total_experts: int = offset

    def model(self, model_id: str) -> ModelSpec:
        try:
            return self._by_id[model_id]
        except KeyError:
            raise KeyError(f"unknown model: {model_id!r}") from None

    def __contains__(self, model_id: str) -> bool:
        return model_id in self._by_id

    def index_of(self, expert: ExpertId) -> int:
        spec = self.model(expert.model)
        if not 1 <= expert.layer <= spec.num_moe_layers:
            raise ValueError(f"{expert.model}: layer {expert.layer} out of range")
        if not 1 <= expert.index <= spec.experts_per_layer:
            raise ValueError(f"{expert.model}: expert index {expert.index} out of range")
        return (
            self._base[expert.model]
            + (expert.layer - 1) * spec.experts_per_layer
            + (expert.index - 1)
        )

    def global_index(self, model_id: str, layer: int, index: int) -> int:
        return self.index_of(ExpertId(model_id, layer, index))

    def expert_of(self, global_index: int) -> ExpertId:
        if not 0 <= global_index < self.total_experts:
            raise IndexError(f"global index {global_index} out of range [0, {self.total_experts})")
        for spec in self.models:
            base = self._base[spec.model_id]
            if global_index < base + spec.num_experts:
                rel = global_index - base
                layer, index = divmod(rel, spec.experts_per_layer)
                return ExpertId(spec.model_id, layer + 1, index + 1)
        raise AssertionError("unreachable")

    def model_of(self, global_index: int) -> ModelSpec:
        return self.model(self.expert_of(global_index).model)

    def layer_base(self, model_id: str, layer: int) -> int:
        """Global index of expert (model_id, layer, 1)."""
        return self.global_index(model_id, layer, 1)

    def expert_bytes_of(self, global_index: int) -> float:
        return self.model_of(global_index).expert_bytes

    def iter_layers(self):
        """Yield (ModelSpec, layer) for every MoE layer in catalog order."""
        for spec in self.models:
            for layer in range(1, spec.num_moe_layers + 1):
                yield spec, layer


def build_catalog(models: list[ModelSpec]) -> ExpertCatalog:
    """Build the dense expert catalog; raises on duplicate model ids."""
    return ExpertCatalog(models)


def layer_subsets(
    catalog: ExpertCatalog,
    model_id: str,
    layer: int,
    limit: int = DEFAULT_SUBSET_LIMIT,
) -> list[tuple[int, ...]]:
    """All size-K expert index sets activatable in one MoE layer.

    Returns every size-``top_k`` subset of ``{1..experts_per_layer}`` in
    lexicographic order. ``limit`` guards against combinatorial blowup.
    """
    spec = catalog.model(model_id)
    if not 1 <= layer <= spec.num_moe_layers:
        raise ValueError(f"{model_id}: layer {layer} out of range")
    n = comb(spec.experts_per_layer, spec.top_k)
    if n > limit:
        raise ValueError(
            f"{model_id} layer {layer}: {n} subsets exceeds enumeration limit {limit}; "
            "supply a sparse probability table instead"
        )
    return list(combinations(range(1, spec.experts_per_layer + 1), spec.top_k))
