"""Input validation helpers shared by estimators, the CLI, and the harness."""
from __future__ import annotations

from .instance import Instance, Placement

__all__ = ["check_instance", "check_placement"]


def check_instance(instance: Instance) -> None:
    """Structural validation: profile consistent with the catalog, local
    caches referencing real experts. Topology invariants are enforced by
    the Instance constructor."""
    if not isinstance(instance, Instance):
        raise TypeError(f"expected an Instance, got {type(instance).__name__}")
    instance.profile.validate(instance.catalog)
    known_users = {u.user_id for u in instance.users}
    for uid, experts in instance.local_cache.cached.items():
        if uid not in known_users:
            raise ValueError(f"local cache references unknown user {uid}")
        for g in experts:
            if not 0 <= g < instance.catalog.total_experts:
                raise ValueError(f"user {uid}: local cache references unknown expert {g}")
    for uid in instance.profile.model_request_prob:
        if uid not in known_users:
            raise ValueError(f"activation profile references unknown user {uid}")


def check_placement(instance: Instance, placement: Placement) -> None:
    """Capacity and identifier validation for a candidate placement."""
    if not isinstance(placement, Placement):
        raise TypeError(f"expected a Placement, got {type(placement).__name__}")
    placement.validate(instance)
