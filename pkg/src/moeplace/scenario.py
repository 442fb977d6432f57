"""Scenario files: schema, defaults, and deterministic instance building.

A scenario is a JSON file; every field is optional and falls back to the
default evaluation setting (4 servers, 20 users, 1 km x 1 km cell, 5 MHz
user bandwidth, 100 MHz backhaul, 0.01 s cloud hops, path-loss exponent 4,
-174 dBm/Hz noise, 50/82.58/312 TFLOP/s compute, 5 GB server storage,
50 locally cached experts per user, and a 12-model library with more than
1600 experts). An empty file is the default scenario.

``build_instance(scenario, seed)`` is fully deterministic: node placement,
model assignment, gating synthesis, and local caches all derive from the
seed through independent child streams.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .catalog import ExpertCatalog, ModelSpec, build_catalog
from .instance import Instance
from .network import (
    EdgeServerNode,
    Hop,
    LinkModel,
    UserNode,
    dbm_to_watts,
    distance,
    nearest_server,
)
from .workload import (
    ActivationProfile,
    GatingParams,
    LocalCache,
    assign_local_cache,
    load_profile_csv,
    synthesize_profile,
    zipf_request_dist,
)

__all__ = [
    "UserConfig",
    "ServerConfig",
    "LinkConfig",
    "WorkloadConfig",
    "Scenario",
    "SWEEP_AXES",
    "default_model_library",
    "load_scenario",
    "scenario_from_dict",
    "apply_sweep",
    "build_instance",
]

MIB = 1 << 20

SWEEP_AXES = (
    "server_capacity",
    "local_budget",
    "models_per_user",
    "user_bandwidth",
    "num_servers",
    "num_users",
)


@dataclass(frozen=True)
class UserConfig:
    bandwidth_hz: float = 5e6
    tx_power_w: float = 0.01
    compute_flops: float = 50e12


@dataclass(frozen=True)
class ServerConfig:
    capacity_bytes: float = 5e9
    tx_power_w: float = dbm_to_watts(38.0)
    per_expert_compute_flops: float = 82.58e12


@dataclass(frozen=True)
class LinkConfig:
    path_loss_exponent: float = 4.0
    antenna_gain_ul: float = 1.0
    antenna_gain_dl: float = 1.0
    noise_psd_w_per_hz: float = dbm_to_watts(-174.0)
    backhaul_bandwidth_hz: float = 100e6
    backhaul_rate_bps: float | None = None  # fixed uniform rate instead of Shannon
    cloud_latency_s: float | None = 0.01
    cloud_rate_bps: float | None = None
    cloud_per_expert_compute_flops: float = 312e12
    min_distance_m: float = 1.0


@dataclass(frozen=True)
class WorkloadConfig:
    zipf_exponent: float = 1.0
    models_per_user: tuple[int, int] = (3, 5)
    local_budget: int = 50
    profile_mode: str = "synthetic"  # or "csv"
    profile_csv: str | None = None
    num_tokens: int = 256
    logit_loc_scale: float = 1.5
    user_loc_scale: float = 0.5
    logit_noise_scale: float = 1.0


@dataclass(frozen=True)
class Scenario:
    name: str = "default"
    area_m: float = 1000.0
    num_servers: int = 4
    num_users: int = 20
    user: UserConfig = field(default_factory=UserConfig)
    server: ServerConfig = field(default_factory=ServerConfig)
    link: LinkConfig = field(default_factory=LinkConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    models: tuple[ModelSpec, ...] = field(default_factory=lambda: default_model_library())
    algorithms: tuple[str, ...] = ("greedy", "dp", "accel", "lfu", "random")
    sweep_axis: str = "server_capacity"
    sweep_values: tuple[float, ...] = (1.25e9, 2.5e9, 5e9, 6.25e9, 7.5e9)
    seeds: tuple[int, ...] = tuple(range(10))
    report_curvature: bool = True
    enforce_latency_regime: bool = True

    def catalog(self) -> ExpertCatalog:
        return build_catalog(list(self.models))


def default_model_library() -> tuple[ModelSpec, ...]:
    """Twelve-model library: six top-1 switch-style models and six top-2
    vision-language models (a base and a fine-tuned variant of each family),
    totalling more than 1600 experts."""
    models = []
    for variant in ("base", "tuned"):
        for e in (8, 16, 32):
            models.append(
                ModelSpec(
                    model_id=f"switch-{e}-{variant}",
                    num_moe_layers=12,
                    experts_per_layer=e,
                    top_k=1,
                    expert_bytes=12 * MIB,
                    embedding_bytes=1536,
                    expert_flops=1.2e7,
                )
            )
    for variant in ("base", "tuned"):
        for fam, layers, size_mib, emb, flops in (
            ("vlm-stablelm", 12, 48, 4096, 5.0e7),
            ("vlm-qwen", 12, 36, 4096, 3.6e7),
            ("vlm-phi", 16, 96, 5120, 1.0e8),
        ):
            models.append(
                ModelSpec(
                    model_id=f"{fam}-{variant}",
                    num_moe_layers=layers,
                    experts_per_layer=4,
                    top_k=2,
                    expert_bytes=size_mib * MIB,
                    embedding_bytes=emb,
                    expert_flops=flops,
                )
            )
    return tuple(models)


# -- parsing -----------------------------------------------------------------


def _err(fieldname: str, message: str):
    raise ValueError(f"scenario field {fieldname!r}: {message}")


def _number(d: dict, key: str, default, prefix: str, minimum=None, strict=False):
    if key not in d:
        return default
    v = d[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        _err(f"{prefix}{key}", f"expected a number, got {v!r}")
    if minimum is not None and (v <= minimum if strict else v < minimum):
        op = ">" if strict else ">="
        _err(f"{prefix}{key}", f"must be {op} {minimum}, got {v}")
    return float(v)


def _check_keys(d: dict, allowed: set[str], prefix: str):
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ValueError(f"unknown scenario field(s): {[prefix + k for k in unknown]}")


def _parse_power(d: dict, prefix: str, default_w: float) -> float:
    if "tx_power_w" in d and "tx_power_dbm" in d:
        _err(f"{prefix}tx_power_w", "give either tx_power_w or tx_power_dbm, not both")
    if "tx_power_dbm" in d:
        return dbm_to_watts(_number(d, "tx_power_dbm", 0.0, prefix))
    return _number(d, "tx_power_w", default_w, prefix, minimum=0, strict=True)


def _parse_user(d: dict) -> UserConfig:
    _check_keys(d, {"bandwidth_hz", "tx_power_w", "tx_power_dbm", "compute_flops"}, "user.")
    base = UserConfig()
    return UserConfig(
        bandwidth_hz=_number(d, "bandwidth_hz", base.bandwidth_hz, "user.", 0, True),
        tx_power_w=_parse_power(d, "user.", base.tx_power_w),
        compute_flops=_number(d, "compute_flops", base.compute_flops, "user.", 0, True),
    )


def _parse_server(d: dict) -> ServerConfig:
    _check_keys(
        d,
        {"capacity_bytes", "tx_power_w", "tx_power_dbm", "per_expert_compute_flops"},
        "server.",
    )
    base = ServerConfig()
    return ServerConfig(
        capacity_bytes=_number(d, "capacity_bytes", base.capacity_bytes, "server.", 0),
        tx_power_w=_parse_power(d, "server.", base.tx_power_w),
        per_expert_compute_flops=_number(
            d, "per_expert_compute_flops", base.per_expert_compute_flops, "server.", 0, True
        ),
    )


def _parse_link(d: dict) -> LinkConfig:
    allowed = {
        "path_loss_exponent", "antenna_gain_ul", "antenna_gain_dl",
        "noise_psd_w_per_hz", "noise_psd_dbm_per_hz", "backhaul_bandwidth_hz",
        "backhaul_rate_bps", "cloud_latency_s", "cloud_rate_bps",
        "cloud_per_expert_compute_flops", "min_distance_m",
    }
    _check_keys(d, allowed, "link.")
    base = LinkConfig()
    if "noise_psd_w_per_hz" in d and "noise_psd_dbm_per_hz" in d:
        _err("link.noise_psd_w_per_hz", "give one noise PSD form, not both")
    noise = base.noise_psd_w_per_hz
    if "noise_psd_dbm_per_hz" in d:
        noise = dbm_to_watts(_number(d, "noise_psd_dbm_per_hz", 0.0, "link."))
    else:
        noise = _number(d, "noise_psd_w_per_hz", noise, "link.", 0, True)
    if "cloud_rate_bps" in d and "cloud_latency_s" in d:
        _err("link.cloud_latency_s", "give exactly one of cloud_latency_s / cloud_rate_bps")
    cloud_latency = base.cloud_latency_s
    cloud_rate = base.cloud_rate_bps
    if "cloud_rate_bps" in d:
        cloud_rate = _number(d, "cloud_rate_bps", None, "link.", 0, True)
        cloud_latency = None
    if "cloud_latency_s" in d:
        cloud_latency = _number(d, "cloud_latency_s", None, "link.", 0)
        cloud_rate = None
    if (cloud_latency is None) == (cloud_rate is None):
        _err("link.cloud_latency_s", "give exactly one of cloud_latency_s / cloud_rate_bps")
    return LinkConfig(
        path_loss_exponent=_number(d, "path_loss_exponent", base.path_loss_exponent, "link.", 0, True),
        antenna_gain_ul=_number(d, "antenna_gain_ul", base.antenna_gain_ul, "link.", 0, True),
        antenna_gain_dl=_number(d, "antenna_gain_dl", base.antenna_gain_dl, "link.", 0, True),
        noise_psd_w_per_hz=noise,
        backhaul_bandwidth_hz=_number(
            d, "backhaul_bandwidth_hz", base.backhaul_bandwidth_hz, "link.", 0, True
        ),
        backhaul_rate_bps=(
            _number(d, "backhaul_rate_bps", None, "link.", 0, True)
            if "backhaul_rate_bps" in d
            else None
        ),
        cloud_latency_s=cloud_latency,
        cloud_rate_bps=cloud_rate,
        cloud_per_expert_compute_flops=_number(
            d, "cloud_per_expert_compute_flops", base.cloud_per_expert_compute_flops,
            "link.", 0, True,
        ),
        min_distance_m=_number(d, "min_distance_m", base.min_distance_m, "link.", 0),
    )


def _parse_workload(d: dict) -> WorkloadConfig:
    allowed = {
        "zipf_exponent", "models_per_user", "local_budget", "profile_mode",
        "profile_csv", "num_tokens", "logit_loc_scale", "user_loc_scale",
        "logit_noise_scale",
    }
    _check_keys(d, allowed, "workload.")
    base = WorkloadConfig()
    mpu = base.models_per_user
    if "models_per_user" in d:
        v = d["models_per_user"]
        if isinstance(v, int):
            mpu = (v, v)
        elif isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, int) for x in v):
            mpu = (v[0], v[1])
        else:
            _err("workload.models_per_user", f"expected an int or [lo, hi], got {v!r}")
        if mpu[0] < 1 or mpu[1] < mpu[0]:
            _err("workload.models_per_user", f"invalid range {mpu}")
    mode = d.get("profile_mode", base.profile_mode)
    if mode not in ("synthetic", "csv"):
        _err("workload.profile_mode", f"expected 'synthetic' or 'csv', got {mode!r}")
    if mode == "csv" and not d.get("profile_csv"):
        _err("workload.profile_csv", "required when profile_mode is 'csv'")
    return WorkloadConfig(
        zipf_exponent=_number(d, "zipf_exponent", base.zipf_exponent, "workload.", 0),
        models_per_user=mpu,
        local_budget=int(_number(d, "local_budget", base.local_budget, "workload.", 0)),
        profile_mode=mode,
        profile_csv=d.get("profile_csv"),
        num_tokens=int(_number(d, "num_tokens", base.num_tokens, "workload.", 1)),
        logit_loc_scale=_number(d, "logit_loc_scale", base.logit_loc_scale, "workload.", 0),
        user_loc_scale=_number(d, "user_loc_scale", base.user_loc_scale, "workload.", 0),
        logit_noise_scale=_number(d, "logit_noise_scale", base.logit_noise_scale, "workload.", 0, True),
    )


def _parse_models(entries) -> tuple[ModelSpec, ...]:
    if entries == "default_library":
        return default_model_library()
    if not isinstance(entries, list) or not entries:
        raise ValueError("scenario field 'models': expected 'default_library' or a non-empty list")
    fields = {
        "model_id", "num_moe_layers", "experts_per_layer", "top_k",
        "expert_bytes", "embedding_bytes", "expert_flops",
    }
    models = []
    for i, e in enumerate(entries):
        if not isinstance(e, dict):
            _err(f"models[{i}]", "expected an object")
        _check_keys(e, fields, f"models[{i}].")
        missing = sorted(fields - set(e))
        if missing:
            _err(f"models[{i}]", f"missing fields {missing}")
        try:
            models.append(
                ModelSpec(
                    model_id=str(e["model_id"]),
                    num_moe_layers=int(e["num_moe_layers"]),
                    experts_per_layer=int(e["experts_per_layer"]),
                    top_k=int(e["top_k"]),
                    expert_bytes=float(e["expert_bytes"]),
                    embedding_bytes=float(e["embedding_bytes"]),
                    expert_flops=float(e["expert_flops"]),
                )
            )
        except ValueError as exc:
            _err(f"models[{i}]", str(exc))
    return tuple(models)


def scenario_from_dict(d: dict) -> Scenario:
    allowed = {
        "name", "area_m", "num_servers", "num_users", "user", "server", "link",
        "workload", "models", "algorithms", "sweep_axis", "sweep_values", "seeds",
        "report_curvature", "enforce_latency_regime",
    }
    _check_keys(d, allowed, "")
    base = Scenario()
    models = _parse_models(d["models"]) if "models" in d else default_model_library()
    algorithms = tuple(d.get("algorithms", base.algorithms))
    from .estimators import ALGORITHM_NAMES

    for a in algorithms:
        if a not in ALGORITHM_NAMES:
            _err("algorithms", f"unknown algorithm {a!r}")
    sweep_axis = d.get("sweep_axis", base.sweep_axis)
    if sweep_axis not in SWEEP_AXES:
        _err("sweep_axis", f"expected one of {SWEEP_AXES}, got {sweep_axis!r}")
    sweep_values = tuple(d.get("sweep_values", base.sweep_values))
    if not sweep_values:
        _err("sweep_values", "must be non-empty")
    seeds = tuple(int(s) for s in d.get("seeds", base.seeds))
    if not seeds:
        _err("seeds", "must be non-empty")
    return Scenario(
        name=str(d.get("name", base.name)),
        area_m=_number(d, "area_m", base.area_m, "", 0, True),
        num_servers=int(_number(d, "num_servers", base.num_servers, "", 1)),
        num_users=int(_number(d, "num_users", base.num_users, "", 1)),
        user=_parse_user(d.get("user", {})),
        server=_parse_server(d.get("server", {})),
        link=_parse_link(d.get("link", {})),
        workload=_parse_workload(d.get("workload", {})),
        models=models,
        algorithms=algorithms,
        sweep_axis=sweep_axis,
        sweep_values=sweep_values,
        seeds=seeds,
        report_curvature=bool(d.get("report_curvature", base.report_curvature)),
        enforce_latency_regime=bool(d.get("enforce_latency_regime", base.enforce_latency_regime)),
    )


def load_scenario(path) -> Scenario:
    """Load a scenario file; an empty file yields the all-defaults scenario."""
    with open(path) as f:
        text = f.read().strip()
    if not text:
        return Scenario()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(data)


def apply_sweep(scenario: Scenario, axis: str, value: float) -> Scenario:
    if axis == "server_capacity":
        return replace(scenario, server=replace(scenario.server, capacity_bytes=float(value)))
    if axis == "local_budget":
        return replace(scenario, workload=replace(scenario.workload, local_budget=int(value)))
    if axis == "models_per_user":
        v = int(value)
        return replace(scenario, workload=replace(scenario.workload, models_per_user=(v, v)))
    if axis == "user_bandwidth":
        return replace(scenario, user=replace(scenario.user, bandwidth_hz=float(value)))
    if axis == "num_servers":
        return replace(scenario, num_servers=int(value))
    if axis == "num_users":
        return replace(scenario, num_users=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


# -- instance building --------------------------------------------------------


def _backhaul_tables(scenario: Scenario, servers: list[EdgeServerNode]) -> LinkModel:
    link = scenario.link
    backhaul: dict[tuple[int, int], Hop] = {}
    for a in servers:
        for b in servers:
            if a.server_id == b.server_id:
                continue
            if link.backhaul_rate_bps is not None:
                rate = link.backhaul_rate_bps
            else:
                d = max(distance(a.position, b.position), link.min_distance_m)
                noise = link.noise_psd_w_per_hz * link.backhaul_bandwidth_hz
                snr = a.tx_power_w * link.antenna_gain_dl * d ** (-link.path_loss_exponent) / noise
                rate = link.backhaul_bandwidth_hz * float(np.log2(1.0 + snr))
            backhaul[(a.server_id, b.server_id)] = Hop(rate_bps=rate)
    if link.cloud_latency_s is not None:
        cloud = {s.server_id: Hop(fixed_latency_s=link.cloud_latency_s) for s in servers}
        cloud_ret = dict(cloud)
    else:
        cloud = {s.server_id: Hop(rate_bps=link.cloud_rate_bps) for s in servers}
        cloud_ret = dict(cloud)
    return LinkModel(
        antenna_gain_ul=link.antenna_gain_ul,
        antenna_gain_dl=link.antenna_gain_dl,
        path_loss_exponent=link.path_loss_exponent,
        noise_psd_w_per_hz=link.noise_psd_w_per_hz,
        backhaul=backhaul,
        cloud=cloud,
        cloud_return=cloud_ret,
        cloud_per_expert_compute_flops=link.cloud_per_expert_compute_flops,
        min_distance_m=link.min_distance_m,
    )


def build_instance(scenario: Scenario, seed: int) -> Instance:
    """Deterministically realize one scenario draw.

    Child RNG streams: node positions, per-user model assignment, gating
    synthesis. The same seed gives the same topology across sweep values
    that do not change node counts, isolating the swept parameter.
    """
    catalog = scenario.catalog()
    ss = np.random.SeedSequence([int(seed), 20250]).spawn(3)
    rng_pos = np.random.default_rng(ss[0])
    rng_models = np.random.default_rng(ss[1])

    server_pos = rng_pos.uniform(0.0, scenario.area_m, size=(scenario.num_servers, 2))
    user_pos = rng_pos.uniform(0.0, scenario.area_m, size=(scenario.num_users, 2))
    servers = [
        EdgeServerNode(
            server_id=i + 1,
            position=(float(x), float(y)),
            capacity_bytes=scenario.server.capacity_bytes,
            tx_power_w=scenario.server.tx_power_w,
            per_expert_compute_flops=scenario.server.per_expert_compute_flops,
        )
        for i, (x, y) in enumerate(server_pos)
    ]
    users = []
    for i, (x, y) in enumerate(user_pos):
        pos = (float(x), float(y))
        users.append(
            UserNode(
                user_id=i + 1,
                position=pos,
                bandwidth_hz=scenario.user.bandwidth_hz,
                tx_power_w=scenario.user.tx_power_w,
                compute_flops=scenario.user.compute_flops,
                associated_server=nearest_server(pos, servers),
            )
        )

    wl = scenario.workload
    model_ids = [m.model_id for m in scenario.models]
    lo, hi = wl.models_per_user
    if hi > len(model_ids):
        raise ValueError(
            f"workload.models_per_user upper bound {hi} exceeds the {len(model_ids)}-model library"
        )
    request_prob: dict[int, dict[str, float]] = {}
    for u in users:
        count = int(rng_models.integers(lo, hi + 1))
        picked = rng_models.choice(len(model_ids), size=count, replace=False)
        ranked = [model_ids[int(i)] for i in rng_models.permutation(picked)]
        request_prob[u.user_id] = zipf_request_dist(ranked, wl.zipf_exponent)

    if wl.profile_mode == "csv":
        profile = load_profile_csv(wl.profile_csv, catalog)
    else:
        profile = synthesize_profile(
            catalog,
            request_prob,
            GatingParams(wl.logit_loc_scale, wl.user_loc_scale, wl.logit_noise_scale),
            wl.num_tokens,
            ss[2],
        )

    local = LocalCache(
        {
            u.user_id: assign_local_cache(u.user_id, wl.local_budget, profile, catalog)
            for u in users
        }
    )
    instance = Instance(
        catalog=catalog,
        users=tuple(users),
        servers=tuple(servers),
        link=_backhaul_tables(scenario, servers),
        profile=profile,
        local_cache=local,
    )
    if scenario.enforce_latency_regime:
        from .latency import check_latency_regime

        violations = check_latency_regime(instance)
        if violations:
            raise ValueError(
                "scenario violates the serving-order latency regime (cloud hops must "
                "dominate edge round trips): " + "; ".join(violations[:5])
            )
    return instance
