"""The immutable scenario instance and edge-server placements."""
from __future__ import annotations

from dataclasses import dataclass, field

from .catalog import ExpertCatalog, ExpertId
from .network import EdgeServerNode, LinkModel, UserNode, distance
from .workload import ActivationProfile, LocalCache

__all__ = ["Instance", "Placement"]


@dataclass(frozen=True)
class Instance:
    """Everything an optimizer needs: catalog, topology, demand, user caches."""

    catalog: ExpertCatalog
    users: tuple[UserNode, ...]
    servers: tuple[EdgeServerNode, ...]
    link: LinkModel
    profile: ActivationProfile
    local_cache: LocalCache

    def __post_init__(self):
        ids = [s.server_id for s in self.servers]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate server_id in topology")
        uids = [u.user_id for u in self.users]
        if len(set(uids)) != len(uids):
            raise ValueError("duplicate user_id in topology")
        by_id = {s.server_id: s for s in self.servers}
        for u in self.users:
            if u.associated_server not in by_id:
                raise ValueError(f"user {u.user_id}: unknown associated server")
            d = distance(u.position, by_id[u.associated_server].position)
            for s in self.servers:
                ds = distance(u.position, s.position)
                if ds < d or (ds == d and s.server_id < u.associated_server):
                    raise ValueError(
                        f"user {u.user_id}: associated server {u.associated_server} is not "
                        f"the nearest (server {s.server_id} is closer)"
                    )

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    @property
    def num_users(self) -> int:
        return len(self.users)

    def server(self, server_id: int) -> EdgeServerNode:
        for s in self.servers:
            if s.server_id == server_id:
                return s
        raise KeyError(f"unknown server {server_id}")

    def user(self, user_id: int) -> UserNode:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise KeyError(f"unknown user {user_id}")


@dataclass(frozen=True)
class Placement:
    """Per-server sets of cached experts, stored as global indices."""

    cached: dict[int, frozenset[int]]

    @staticmethod
    def empty(instance: Instance) -> "Placement":
        return Placement({s.server_id: frozenset() for s in instance.servers})

    def experts_on(self, server_id: int) -> frozenset[int]:
        return self.cached.get(server_id, frozenset())

    def used_bytes(self, server_id: int, catalog: ExpertCatalog) -> float:
        return sum(catalog.expert_bytes_of(g) for g in self.experts_on(server_id))

    def total_cached(self) -> int:
        return sum(len(v) for v in self.cached.values())

    def with_expert(self, server_id: int, global_index: int) -> "Placement":
        new = dict(self.cached)
        new[server_id] = self.experts_on(server_id) | {global_index}
        return Placement(new)

    def as_expert_ids(self, catalog: ExpertCatalog) -> dict[int, list[ExpertId]]:
        return {
            n: sorted(catalog.expert_of(g) for g in experts)
            for n, experts in sorted(self.cached.items())
        }

    def validate(self, instance: Instance) -> None:
        """Capacity check: cached bytes on each server fit its storage."""
        for s in instance.servers:
            used = self.used_bytes(s.server_id, instance.catalog)
            if used > s.capacity_bytes + 1e-6:
                raise ValueError(
                    f"server {s.server_id}: placement uses {used} bytes, "
                    f"capacity {s.capacity_bytes}"
                )
        for n in self.cached:
            instance.server(n)
        for experts in self.cached.values():
            for g in experts:
                if not 0 <= g < instance.catalog.total_experts:
                    raise ValueError(f"placement contains unknown expert index {g}")
