import math

import pytest

from moeplace.catalog import ModelSpec
from moeplace.network import (
    EdgeServerNode,
    Hop,
    LinkModel,
    UserNode,
    dbm_to_watts,
    downlink_rate,
    embedding_latency,
    expert_compute_latency,
    nearest_server,
    uplink_rate,
)

# Frozen from a 50-digit evaluation of B log2(1 + P G d^-a / (psd B)) with
# B=5 MHz, P=0.01 W, G=1, a=4, psd=10^-20.4 W/Hz (-174 dBm/Hz).
RATE_D100 = 61474213.33829852
RATE_D50 = 81472867.35428329
RATE_DL_38DBM_D100 = 107979773.21720545


def user(pos=(0.0, 0.0), bw=5e6, p=0.01, c=50e12, assoc=1):
    return UserNode(1, pos, bw, p, c, assoc)


def server(sid=1, pos=(100.0, 0.0), cap=5e9, p=dbm_to_watts(38.0), c=82.58e12):
    return EdgeServerNode(sid, pos, cap, p, c)


def link(**kw):
    return LinkModel(**kw)


class TestRates:
    def test_uplink_against_frozen_oracle(self):
        got = uplink_rate(user(), server(), link())
        assert got == pytest.approx(RATE_D100, rel=1e-12)

    def test_uplink_distance_oracle(self):
        got = uplink_rate(user(), server(pos=(50.0, 0.0)), link())
        assert got == pytest.approx(RATE_D50, rel=1e-12)

    def test_zero_power_limit(self):
        assert uplink_rate(user(p=1e-300), server(), link()) == pytest.approx(0.0, abs=1e-9)

    def test_bandwidth_scaling_at_fixed_snr(self):
        # Noise power is psd * B, so doubling bandwidth and power together
        # keeps the SNR fixed and doubles the rate exactly.
        r1 = uplink_rate(user(bw=5e6, p=0.01), server(), link())
        r2 = uplink_rate(user(bw=10e6, p=0.02), server(), link())
        assert r2 == pytest.approx(2.0 * r1, rel=1e-15)

    def test_downlink_symmetric_parameters(self):
        u = user()
        s = server(p=0.01)
        assert downlink_rate(u, s, link()) == uplink_rate(u, s, link())

    def test_downlink_beats_uplink_at_higher_power(self):
        u, s = user(), server()
        assert downlink_rate(u, s, link()) == pytest.approx(RATE_DL_38DBM_D100, rel=1e-12)
        assert downlink_rate(u, s, link()) > uplink_rate(u, s, link())

    def test_monotone_in_power_and_distance(self):
        base = uplink_rate(user(), server(), link())
        assert uplink_rate(user(p=0.02), server(), link()) > base
        assert uplink_rate(user(), server(pos=(200.0, 0.0)), link()) < base

    def test_min_distance_clamp(self):
        # Co-located nodes fall back to the clamp instead of diverging.
        r = uplink_rate(user(), server(pos=(0.0, 0.0)), link())
        r_at_1m = uplink_rate(user(), server(pos=(1.0, 0.0)), link())
        assert r == r_at_1m and math.isfinite(r)


class TestEmbeddingLatency:
    def test_zero_payload(self):
        assert embedding_latency(0.0, 1e6) == 0.0

    def test_bytes_to_bits(self):
        assert embedding_latency(1250, 1e6) == pytest.approx(0.01, rel=1e-15)

    def test_fixed_latency_hop(self):
        hop = Hop(fixed_latency_s=0.01)
        assert hop.latency(1) == 0.01
        assert hop.latency(1e9) == 0.01

    def test_rate_hop(self):
        assert Hop(rate_bps=1e6).latency(1250) == pytest.approx(0.01)

    def test_nonpositive_rate(self):
        with pytest.raises(ValueError):
            embedding_latency(100, 0.0)

    def test_hop_validation(self):
        with pytest.raises(ValueError):
            Hop()
        with pytest.raises(ValueError):
            Hop(rate_bps=1e6, fixed_latency_s=0.1)
        with pytest.raises(ValueError):
            Hop(rate_bps=-1)


class TestComputeLatency:
    def test_user_splits_capability_across_experts(self):
        spec = ModelSpec("m", 1, 8, 1, 1e6, 1024, 1e9)
        got = expert_compute_latency("user", spec, user(c=50e12))
        assert got == pytest.approx(1.6e-4, rel=1e-12)

    def test_edge_per_expert_rate(self):
        spec = ModelSpec("m", 1, 8, 1, 1e6, 1024, 1e9)
        got = expert_compute_latency("edge", spec, server(c=82.58e12))
        assert got == pytest.approx(1e9 / 82.58e12, rel=1e-12)

    def test_cloud_faster_when_more_capable(self):
        spec = ModelSpec("m", 1, 8, 1, 1e6, 1024, 1e9)
        lk = link(cloud_per_expert_compute_flops=312e12)
        assert expert_compute_latency("cloud", spec, lk) < expert_compute_latency(
            "edge", spec, server()
        )

    def test_unknown_node_kind(self):
        spec = ModelSpec("m", 1, 8, 1, 1e6, 1024, 1e9)
        with pytest.raises(ValueError):
            expert_compute_latency("fog", spec, None)


class TestAssociation:
    def test_nearest_server(self):
        servers = [server(1, (0.0, 0.0)), server(2, (10.0, 0.0))]
        assert nearest_server((8.0, 0.0), servers) == 2

    def test_tie_breaks_to_lowest_id(self):
        servers = [server(2, (10.0, 0.0)), server(1, (-10.0, 0.0))]
        assert nearest_server((0.0, 0.0), servers) == 1

    def test_empty_topology(self):
        with pytest.raises(ValueError):
            nearest_server((0.0, 0.0), [])
