"""Demand side: request probabilities, activation tables, user-side caches.

The activation profile stores, per (user, model, layer), a sparse table of
size-K expert subsets with their empirical selection probabilities, plus
per-user model request probabilities. Tables are either loaded from CSV or
synthesized by simulating top-K gating over random logits.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .catalog import ExpertCatalog, ExpertId

__all__ = [
    "ActivationProfile",
    "LocalCache",
    "GatingParams",
    "topk_select",
    "synthesize_profile",
    "zipf_request_dist",
    "assign_local_cache",
    "load_profile_csv",
    "save_profile_csv",
]

PROB_TOL = 1e-9


@dataclass
class ActivationProfile:
    """Sparse per-layer activation statistics.

    ``model_request_prob[u][m]`` is the probability of user u requesting
    model m (sums to 1 per user). ``subset_prob[(u, m, layer)]`` maps a
    frozenset of in-layer expert indices to its selection probability
    (sums to 1 per key). Subsets omitted from a table have probability 0.
    """

    model_request_prob: dict[int, dict[str, float]]
    subset_prob: dict[tuple[int, str, int], dict[frozenset[int], float]]

    def users(self) -> list[int]:
        return sorted(self.model_request_prob)

    def requested_models(self, user_id: int) -> list[str]:
        return sorted(self.model_request_prob[user_id])

    def expert_marginal(self, user_id: int, model_id: str, layer: int) -> dict[int, float]:
        """Per-expert activation probability within one layer."""
        out: dict[int, float] = {}
        for subset, p in self.subset_prob.get((user_id, model_id, layer), {}).items():
            for i in subset:
                out[i] = out.get(i, 0.0) + p
        return out

    def validate(self, catalog: ExpertCatalog) -> None:
        for u, probs in self.model_request_prob.items():
            total = sum(probs.values())
            if abs(total - 1.0) > PROB_TOL:
                raise ValueError(f"user {u}: model request probabilities sum to {total}, not 1")
            for m in probs:
                catalog.model(m)
        for (u, m, layer), table in self.subset_prob.items():
            spec = catalog.model(m)
            if not 1 <= layer <= spec.num_moe_layers:
                raise ValueError(f"user {u}, model {m}: layer {layer} out of range")
            total = sum(table.values())
            if abs(total - 1.0) > PROB_TOL:
                raise ValueError(
                    f"user {u}, model {m}, layer {layer}: subset probabilities sum to {total}"
                )
            for subset, p in table.items():
                if p < 0:
                    raise ValueError(f"negative probability for subset {sorted(subset)}")
                if len(subset) != spec.top_k:
                    raise ValueError(
                        f"user {u}, model {m}, layer {layer}: subset {sorted(subset)} "
                        f"has size {len(subset)}, expected {spec.top_k}"
                    )
                if any(not 1 <= i <= spec.experts_per_layer for i in subset):
                    raise ValueError(
                        f"user {u}, model {m}, layer {layer}: subset {sorted(subset)} "
                        "contains an out-of-layer expert index"
                    )


@dataclass
class LocalCache:
    """Pre-determined user-side expert caches, as global expert indices."""

    cached: dict[int, frozenset[int]] = field(default_factory=dict)

    def is_cached(self, user_id: int, global_index: int) -> bool:
        return global_index in self.cached.get(user_id, frozenset())

    def budget_of(self, user_id: int) -> int:
        return len(self.cached.get(user_id, frozenset()))


def topk_select(affinity, k: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Top-k expert selection with renormalized gate weights.

    ``affinity`` is the softmax score vector over one layer's experts
    (1-based expert index == position + 1). Returns the k selected indices
    in ascending order and their weights renormalized over the selection.
    Ties pick the lowest expert index.
    """
    scores = np.asarray(affinity, dtype=float)
    if k > scores.size:
        raise ValueError(f"k={k} exceeds number of experts {scores.size}")
    if np.any(scores < 0):
        raise ValueError("affinity scores must be nonnegative")
    if abs(float(scores.sum()) - 1.0) > 1e-6:
        raise ValueError("affinity scores must sum to 1")
    order = np.argsort(-scores, kind="stable")[:k]
    picked = np.sort(order)
    total = float(scores[picked].sum())
    weights = tuple(float(scores[i]) / total for i in picked)
    return tuple(int(i) + 1 for i in picked), weights


@dataclass(frozen=True)
class GatingParams:
    """Synthetic gating distribution knobs.

    Expert popularity is primarily a model property: each (model, layer)
    draws a shared logit location vector with scale ``logit_loc_scale``
    (larger = more concentrated popularity). Each user adds a personal
    perturbation with scale ``user_loc_scale``, and every token adds
    ``logit_noise_scale`` Gaussian noise before softmax.
    """

    logit_loc_scale: float = 1.5
    user_loc_scale: float = 0.5
    logit_noise_scale: float = 1.0


def synthesize_profile(
    catalog: ExpertCatalog,
    model_request_prob: dict[int, dict[str, float]],
    gating: GatingParams,
    num_tokens: int,
    seed,
) -> ActivationProfile:
    """Empirical activation tables from simulated top-K gating.

    For every (user, requested model, layer), samples ``num_tokens`` logit
    vectors, applies top-K selection, and records subset frequencies.
    Bit-identical across runs for a fixed seed.
    """
    if num_tokens < 1:
        raise ValueError(f"num_tokens must be >= 1, got {num_tokens}")
    rng = np.random.default_rng(seed)
    # Shared per-(model, layer) popularity, drawn before any user-specific
    # randomness so the catalog order fixes it deterministically.
    shared_loc: dict[tuple[str, int], np.ndarray] = {}
    for spec in catalog.models:
        for layer in range(1, spec.num_moe_layers + 1):
            shared_loc[(spec.model_id, layer)] = rng.normal(
                0.0, gating.logit_loc_scale, size=spec.experts_per_layer
            )
    subset_prob: dict[tuple[int, str, int], dict[frozenset[int], float]] = {}
    for u in sorted(model_request_prob):
        for m in sorted(model_request_prob[u]):
            spec = catalog.model(m)
            for layer in range(1, spec.num_moe_layers + 1):
                loc = shared_loc[(m, layer)] + rng.normal(
                    0.0, gating.user_loc_scale, size=spec.experts_per_layer
                )
                logits = loc + rng.normal(
                    0.0, gating.logit_noise_scale, size=(num_tokens, spec.experts_per_layer)
                )
                # Top-k of the softmax == top-k of the logits; stable sort
                # keeps the lowest-index tie rule of topk_select.
                order = np.argsort(-logits, axis=1, kind="stable")[:, : spec.top_k]
                counts: dict[frozenset[int], int] = {}
                for row in order:
                    key = frozenset(int(i) + 1 for i in row)
                    counts[key] = counts.get(key, 0) + 1
                subset_prob[(u, m, layer)] = {
                    s: c / num_tokens for s, c in sorted(counts.items(), key=lambda kv: sorted(kv[0]))
                }
    return ActivationProfile(
        model_request_prob={u: dict(v) for u, v in model_request_prob.items()},
        subset_prob=subset_prob,
    )


def zipf_request_dist(requested_models: list[str], exponent: float) -> dict[str, float]:
    """Zipf probabilities over an ordered model list (rank 1 = first)."""
    if not requested_models:
        raise ValueError("requested_models must be non-empty")
    if exponent < 0:
        raise ValueError("zipf exponent must be >= 0")
    weights = [(r + 1) ** (-exponent) for r in range(len(requested_models))]
    total = sum(weights)
    return {m: w / total for m, w in zip(requested_models, weights)}


def assign_local_cache(
    user_id: int,
    budget: int,
    profile: ActivationProfile,
    catalog: ExpertCatalog,
) -> frozenset[int]:
    """Pick the user's pre-cached experts by marginal activation probability.

    Score of an expert = request probability of its model x (1/L_m) x its
    per-layer activation marginal; ties broken by global index. Returns
    global indices of the top ``budget`` experts across requested models.
    """
    scores: list[tuple[float, int]] = []
    for m, p_m in sorted(profile.model_request_prob[user_id].items()):
        spec = catalog.model(m)
        for layer in range(1, spec.num_moe_layers + 1):
            marg = profile.expert_marginal(user_id, m, layer)
            base = catalog.layer_base(m, layer)
            for idx in range(1, spec.experts_per_layer + 1):
                g = base + idx - 1
                scores.append((p_m * marg.get(idx, 0.0) / spec.num_moe_layers, g))
    if budget > len(scores):
        raise ValueError(
            f"user {user_id}: local budget {budget} exceeds {len(scores)} experts "
            "across requested models"
        )
    scores.sort(key=lambda t: (-t[0], t[1]))
    return frozenset(g for _, g in scores[:budget])


def save_profile_csv(profile: ActivationProfile, path) -> None:
    """Write a profile as rows (user, model, layer, subset, probability).

    Model-request rows use an empty layer and subset. Subset members are
    pipe-joined in-layer indices.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["user", "model", "layer", "subset", "probability"])
        for u in sorted(profile.model_request_prob):
            for m, p in sorted(profile.model_request_prob[u].items()):
                w.writerow([u, m, "", "", repr(p)])
        for (u, m, layer) in sorted(profile.subset_prob):
            for subset, p in sorted(
                profile.subset_prob[(u, m, layer)].items(), key=lambda kv: sorted(kv[0])
            ):
                w.writerow([u, m, layer, "|".join(str(i) for i in sorted(subset)), repr(p)])


def load_profile_csv(path, catalog: ExpertCatalog) -> ActivationProfile:
    """Inverse of :func:`save_profile_csv`; validates against the catalog."""
    model_request_prob: dict[int, dict[str, float]] = {}
    subset_prob: dict[tuple[int, str, int], dict[frozenset[int], float]] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        required = {"user", "model", "layer", "subset", "probability"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"profile CSV must have columns {sorted(required)}")
        for row in reader:
            u = int(row["user"])
            m = row["model"]
            p = float(row["probability"])
            if row["layer"] == "":
                model_request_prob.setdefault(u, {})[m] = p
            else:
                layer = int(row["layer"])
                subset = frozenset(int(t) for t in row["subset"].split("|"))
                subset_prob.setdefault((u, m, layer), {})[subset] = p
    profile = ActivationProfile(model_request_prob, subset_prob)
    profile.validate(catalog)
    return profile
