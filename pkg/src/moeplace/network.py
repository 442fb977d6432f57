"""Topology and physical-layer model.

Node positions, Shannon-rate wireless links, backhaul/cloud hops that can
be given either as a rate (bits/s) or a fixed latency, and the per-hop
transmission and compute latency primitives. Everything here is a pure
function of immutable inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .catalog import ModelSpec

__all__ = [
    "UserNode",
    "EdgeServerNode",
    "Hop",
    "LinkModel",
    "distance",
    "nearest_server",
    "uplink_rate",
    "downlink_rate",
    "embedding_latency",
    "expert_compute_latency",
    "dbm_to_watts",
]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class UserNode:
    user_id: int
    position: tuple[float, float]
    bandwidth_hz: float
    tx_power_w: float
    compute_flops: float
    associated_server: int

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError(f"user {self.user_id}: bandwidth_hz must be > 0")
        if self.tx_power_w <= 0:
            raise ValueError(f"user {self.user_id}: tx_power_w must be > 0")
        if self.compute_flops <= 0:
            raise ValueError(f"user {self.user_id}: compute_flops must be > 0")


@dataclass(frozen=True)
class EdgeServerNode:
    server_id: int
    position: tuple[float, float]
    capacity_bytes: float
    tx_power_w: float
    per_expert_compute_flops: float

    def __post_init__(self):
        if self.capacity_bytes < 0:
            raise ValueError(f"server {self.server_id}: capacity_bytes must be >= 0")
        if self.tx_power_w <= 0:
            raise ValueError(f"server {self.server_id}: tx_power_w must be > 0")
        if self.per_expert_compute_flops <= 0:
            raise ValueError(f"server {self.server_id}: per_expert_compute_flops must be > 0")


@dataclass(frozen=True)
class Hop:
    """A wired hop, specified either by rate or by fixed one-way latency."""

    rate_bps: float | None = None
    fixed_latency_s: float | None = None

    def __post_init__(self):
        if (self.rate_bps is None) == (self.fixed_latency_s is None):
            raise ValueError("hop needs exactly one of rate_bps / fixed_latency_s")
        if self.rate_bps is not None and self.rate_bps <= 0:
            raise ValueError("hop rate_bps must be > 0")
        if self.fixed_latency_s is not None and self.fixed_latency_s < 0:
            raise ValueError("hop fixed_latency_s must be >= 0")

    def latency(self, payload_bytes: float) -> float:
        if self.fixed_latency_s is not None:
            return self.fixed_latency_s
        return 8.0 * payload_bytes / self.rate_bps


@dataclass(frozen=True)
class LinkModel:
    """Wireless constants plus the wired backhaul and cloud hop tables.

    ``backhaul`` maps ordered server pairs (n, n') to a hop; ``cloud`` maps
    each server to its server->cloud hop and ``cloud_return`` to the
    cloud->server hop. Distances below ``min_distance_m`` are clamped to
    avoid the d^-alpha singularity for co-located nodes.
    """

    antenna_gain_ul: float = 1.0
    antenna_gain_dl: float = 1.0
    path_loss_exponent: float = 4.0
    noise_psd_w_per_hz: float = dbm_to_watts(-174.0)
    backhaul: dict[tuple[int, int], Hop] = field(default_factory=dict)
    cloud: dict[int, Hop] = field(default_factory=dict)
    cloud_return: dict[int, Hop] = field(default_factory=dict)
    cloud_per_expert_compute_flops: float = 312e12
    min_distance_m: float = 1.0

    def __post_init__(self):
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be > 0")
        if self.noise_psd_w_per_hz <= 0:
            raise ValueError("noise_psd_w_per_hz must be > 0")
        if self.cloud_per_expert_compute_flops <= 0:
            raise ValueError("cloud_per_expert_compute_flops must be > 0")

    def backhaul_hop(self, src: int, dst: int) -> Hop:
        try:
            return self.backhaul[(src, dst)]
        except KeyError:
            raise KeyError(f"no backhaul hop configured for servers {src}->{dst}") from None

    def cloud_hop(self, server_id: int) -> Hop:
        try:
            return self.cloud[server_id]
        except KeyError:
            raise KeyError(f"no cloud hop configured for server {server_id}") from None

    def cloud_return_hop(self, server_id: int) -> Hop:
        try:
            return self.cloud_return[server_id]
        except KeyError:
            raise KeyError(f"no cloud return hop configured for server {server_id}") from None


def distance(a: tuple[float, float], b: tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def nearest_server(position: tuple[float, float], servers: list[EdgeServerNode]) -> int:
    """Nearest edge server by Euclidean distance, ties by lowest server_id."""
    if not servers:
        raise ValueError("no edge servers to associate with")
    return min(servers, key=lambda s: (distance(position, s.position), s.server_id)).server_id


def _shannon_rate(
    bandwidth_hz: float,
    tx_power_w: float,
    gain: float,
    dist_m: float,
    link: LinkModel,
) -> float:
    d = max(dist_m, link.min_distance_m)
    if d <= 0:
        raise ValueError("zero link distance with no minimum-distance clamp configured")
    noise_w = link.noise_psd_w_per_hz * bandwidth_hz
    snr = tx_power_w * gain * d ** (-link.path_loss_exponent) / noise_w
    return bandwidth_hz * math.log2(1.0 + snr)


def uplink_rate(user: UserNode, server: EdgeServerNode, link: LinkModel) -> float:
    """Expected user->server data rate in bits/s (Shannon capacity)."""
    d = distance(user.position, server.position)
    return _shannon_rate(user.bandwidth_hz, user.tx_power_w, link.antenna_gain_ul, d, link)


def downlink_rate(user: UserNode, server: EdgeServerNode, link: LinkModel) -> float:
    """Expected server->user data rate in bits/s over the user's bandwidth."""
    d = distance(user.position, server.position)
    return _shannon_rate(user.bandwidth_hz, server.tx_power_w, link.antenna_gain_dl, d, link)


def embedding_latency(payload_bytes: float, rate_bps: float) -> float:
    """Seconds to ship one token embedding over a link; bytes -> bits explicit."""
    if rate_bps <= 0:
        raise ValueError(f"rate_bps must be > 0, got {rate_bps}")
    return 8.0 * payload_bytes / rate_bps


def expert_compute_latency(node_kind: str, model: ModelSpec, node) -> float:
    """Per-expert compute latency at a user, edge server, or the cloud.

    A user device splits its capability across the layer's experts, so the
    effective rate per expert is compute/experts_per_layer. Edge and cloud
    nodes expose a per-expert capability directly.
    """
    if node_kind == "user":
        if node.compute_flops <= 0:
            raise ValueError("user compute_flops must be > 0")
        return model.expert_flops * model.experts_per_layer / node.compute_flops
    if node_kind == "edge":
        if node.per_expert_compute_flops <= 0:
            raise ValueError("edge per_expert_compute_flops must be > 0")
        return model.expert_flops / node.per_expert_compute_flops
    if node_kind == "cloud":
        if node.cloud_per_expert_compute_flops <= 0:
            raise ValueError("cloud_per_expert_compute_flops must be > 0")
        return model.expert_flops / node.cloud_per_expert_compute_flops
    raise ValueError(f"unknown node_kind: {node_kind!r}")
