"""Per-token latency model and the placement objective.

For every demand term (user, model, layer, expert subset) the requested
experts split across four serving classes: the user's local cache, the
associated edge server, other edge servers reached over the backhaul, and
the cloud. The split is forced by the caches; only the choice of *which*
non-associated server serves each remotely-cached expert is optimized
(exactly, by enumerating open server sets, up to a size cap).

The objective F(X) is the demand-weighted average reduction of per-token
latency relative to the cloud-only worst case. :class:`LatencyModel`
flattens an instance into dense terms once; :class:`EvalState` then
supports O(affected-terms) marginal-gain queries, which is what makes the
greedy and successive optimizers tractable.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import inf

from .catalog import ExpertId
from .instance import Instance, Placement
from .network import distance, embedding_latency, expert_compute_latency, uplink_rate, downlink_rate

__all__ = [
    "BetaCounts",
    "RoutingDecision",
    "LatencyBreakdown",
    "LatencyModel",
    "EvalState",
    "count_activated",
    "route_other_edges",
    "token_latency",
    "max_token_latency",
    "objective_F",
    "avg_model_latency",
    "check_latency_regime",
]

# Exact routing enumerates subsets of candidate servers; beyond this many
# non-associated candidates a greedy heuristic is used and flagged.
ROUTING_EXACT_CAP = 16


@dataclass(frozen=True)
class BetaCounts:
    """How a layer's K requested experts split across serving classes."""

    local: int
    associated: int
    cloud: int
    other_edges: int

    @property
    def total(self) -> int:
        return self.local + self.associated + self.cloud + self.other_edges


@dataclass(frozen=True)
class RoutingDecision:
    """Serving assignment for one request's remotely-cached experts.

    ``assignment`` maps each routed expert to ("server", n); ``served_counts``
    counts experts per used server. ``exact`` is False when the candidate-set
    size exceeded the enumeration cap and a heuristic was used.
    """

    assignment: dict[ExpertId, tuple]
    served_counts: dict[int, int]
    cost: float
    exact: bool


@dataclass(frozen=True)
class LatencyBreakdown:
    uplink: float
    downlink: float
    edge_compute: float
    backhaul: float
    cloud: float
    local_compute: float

    @property
    def total(self) -> float:
        return (
            self.uplink
            + self.downlink
            + self.edge_compute
            + self.backhaul
            + self.cloud
            + self.local_compute
        )


class _UserModelCtx:
    """Link/compute constants for one (user, model) pair."""

    __slots__ = (
        "t_ul", "t_dl", "t_cpu", "n_bit", "cpe_assoc", "cpe",
        "fwd", "ret", "rt", "cloud_hop", "t_cpc", "cloud_fwd", "cloud_ret",
    )


class _Term:
    """One weighted demand term (user, model, layer, subset)."""

    __slots__ = (
        "w", "p", "tmax", "const", "needed", "ctx", "k", "r_loc",
        "uid", "mid", "layer", "subset",
    )


class LatencyModel:
    """Flattened, immutable evaluation tables for one instance."""

    def __init__(self, instance: Instance):
        self.instance = instance
        cat = instance.catalog
        self.E = cat.total_experts
        self.server_ids = sorted(s.server_id for s in instance.servers)
        self.bitpos = {n: i for i, n in enumerate(self.server_ids)}
        self.nbits = len(self.server_ids)
        self.used_heuristic_routing = False

        servers_by_id = {s.server_id: s for s in instance.servers}
        link = instance.link
        self._ctx: dict[tuple[int, str], _UserModelCtx] = {}
        self.terms: list[_Term] = []
        self.terms_by_expert: list[list[int]] = [[] for _ in range(self.E)]

        for user in sorted(instance.users, key=lambda u: u.user_id):
            uid = user.user_id
            n_u = user.associated_server
            assoc = servers_by_id[n_u]
            r_ul = uplink_rate(user, assoc, link)
            r_dl = downlink_rate(user, assoc, link)
            for mid in sorted(instance.profile.model_request_prob.get(uid, {})):
                spec = cat.model(mid)
                ctx = _UserModelCtx()
                ctx.t_ul = embedding_latency(spec.embedding_bytes, r_ul)
                ctx.t_dl = embedding_latency(spec.embedding_bytes, r_dl)
                ctx.t_cpu = expert_compute_latency("user", spec, user)
                ctx.n_bit = 1 << self.bitpos[n_u]
                ctx.cpe_assoc = expert_compute_latency("edge", spec, assoc)
                cpe, fwd, ret, rt = [], [], [], []
                for n in self.server_ids:
                    if n == n_u:
                        cpe.append(ctx.cpe_assoc)
                        fwd.append(inf)
                        ret.append(inf)
                        rt.append(inf)
                    else:
                        srv = servers_by_id[n]
                        c = expert_compute_latency("edge", spec, srv)
                        f = link.backhaul_hop(n_u, n).latency(spec.embedding_bytes)
                        r = link.backhaul_hop(n, n_u).latency(spec.embedding_bytes)
                        cpe.append(c)
                        fwd.append(f)
                        ret.append(r)
                        rt.append(f + c + r)
                ctx.cpe = tuple(cpe)
                ctx.fwd = tuple(fwd)
                ctx.ret = tuple(ret)
                ctx.rt = tuple(rt)
                ctx.cloud_hop = link.cloud_hop(n_u).latency(spec.embedding_bytes)
                ctx.t_cpc = expert_compute_latency("cloud", spec, link)
                ctx.cloud_fwd = ctx.cloud_hop + ctx.t_cpc
                ctx.cloud_ret = link.cloud_return_hop(n_u).latency(spec.embedding_bytes)
                self._ctx[(uid, mid)] = ctx

                p_um = instance.profile.model_request_prob[uid][mid]
                U = len(instance.users)
                for layer in range(1, spec.num_moe_layers + 1):
                    table = instance.profile.subset_prob.get((uid, mid, layer), {})
                    base = cat.layer_base(mid, layer)
                    for subset, p_s in sorted(table.items(), key=lambda kv: sorted(kv[0])):
                        if p_s <= 0.0:
                            continue
                        t = _Term()
                        t.w = p_um * p_s / U
                        t.p = p_s
                        t.ctx = ctx
                        t.k = spec.top_k
                        t.uid = uid
                        t.mid = mid
                        t.layer = layer
                        t.subset = subset
                        needed = tuple(
                            sorted(
                                base + i - 1
                                for i in subset
                                if not instance.local_cache.is_cached(uid, base + i - 1)
                            )
                        )
                        t.needed = needed
                        t.r_loc = spec.top_k - len(needed)
                        if not needed:
                            t.const = ctx.t_cpu
                            t.tmax = ctx.t_cpu
                        else:
                            t.const = ctx.t_ul + len(needed) * ctx.t_dl
                            # Same float grouping as term_latency on an empty
                            # placement, so F(empty) is exactly 0.
                            t.tmax = t.const + (
                                ctx.cloud_fwd + len(needed) * ctx.cloud_ret
                            )
                        ti = len(self.terms)
                        self.terms.append(t)
                        for g in needed:
                            self.terms_by_expert[g].append(ti)

    # -- placement <-> mask ------------------------------------------------

    def mask_of(self, placement: Placement) -> list[int]:
        mask = [0] * self.E
        for n, experts in placement.cached.items():
            bit = 1 << self.bitpos[n]
            for g in experts:
                mask[g] |= bit
        return mask

    # -- core evaluation ---------------------------------------------------

    def _oe_cost(self, oe_masks: list[int], ctx: _UserModelCtx) -> float:
        union = 0
        for m in oe_masks:
            union |= m
        bits = []
        u = union
        while u:
            low = u & -u
            bits.append(low.bit_length() - 1)
            u -= low
        if len(bits) > ROUTING_EXACT_CAP:
            self.used_heuristic_routing = True
            return self._oe_cost_heuristic(oe_masks, ctx)
        fwd, ret, cpe = ctx.fwd, ctx.ret, ctx.cpe
        nb = len(bits)
        best = inf
        for sub in range(1, 1 << nb):
            open_mask = 0
            fixed = 0.0
            s = sub
            j = 0
            while s:
                if s & 1:
                    b = bits[j]
                    open_mask |= 1 << b
                    fixed += fwd[b] + cpe[b]
                s >>= 1
                j += 1
            if fixed >= best:
                continue
            cost = fixed
            ok = True
            for m in oe_masks:
                opts = m & open_mask
                if not opts:
                    ok = False
                    break
                r = inf
                while opts:
                    low = opts & -opts
                    c = ret[low.bit_length() - 1]
                    if c < r:
                        r = c
                    opts -= low
                cost += r
                if cost >= best:
                    ok = False
                    break
            if ok and cost < best:
                best = cost
        return best

    def _oe_cost_heuristic(self, oe_masks: list[int], ctx: _UserModelCtx) -> float:
        # Open the cheapest server per expert, sharing already-open ones.
        fwd, ret, cpe = ctx.fwd, ctx.ret, ctx.cpe
        open_mask = 0
        cost = 0.0
        for m in sorted(oe_masks, key=lambda x: bin(x).count("1")):
            best = inf
            best_b = -1
            mm = m
            while mm:
                low = mm & -mm
                b = low.bit_length() - 1
                c = ret[b] + (0.0 if open_mask & low else fwd[b] + cpe[b])
                if c < best:
                    best = c
                    best_b = b
                mm -= low
            cost += best
            open_mask |= 1 << best_b
        return cost

    def term_latency(self, t: _Term, mask: list[int]) -> float:
        needed = t.needed
        if not needed:
            return t.const
        ctx = t.ctx
        n_bit = ctx.n_bit
        T = t.const
        assoc = False
        cloud = 0
        oe_masks = None
        for g in needed:
            m = mask[g]
            if m & n_bit:
                assoc = True
            elif m == 0:
                cloud += 1
            else:
                if oe_masks is None:
                    oe_masks = [m]
                else:
                    oe_masks.append(m)
        if assoc:
            T += ctx.cpe_assoc
        if cloud:
            T += ctx.cloud_fwd + cloud * ctx.cloud_ret
        if oe_masks is not None:
            if len(oe_masks) == 1:
                m = oe_masks[0]
                rt = ctx.rt
                best = inf
                while m:
                    low = m & -m
                    c = rt[low.bit_length() - 1]
                    if c < best:
                        best = c
                    m -= low
                T += best
            else:
                T += self._oe_cost(oe_masks, ctx)
        return T

    def objective_from_mask(self, mask: list[int]) -> float:
        return sum(t.w * (t.tmax - self.term_latency(t, mask)) for t in self.terms)

    def objective(self, placement: Placement) -> float:
        return self.objective_from_mask(self.mask_of(placement))

    def average_latency(self, placement: Placement) -> float:
        mask = self.mask_of(placement)
        return sum(t.w * self.term_latency(t, mask) for t in self.terms)

    def max_average_latency(self) -> float:
        """Average latency of the empty (cloud-only) placement."""
        return sum(t.w * t.tmax for t in self.terms)

    # -- public query operations -------------------------------------------

    def _needed_split(self, uid: int, mid: str, layer: int, subset, mask: list[int]):
        cat = self.instance.catalog
        spec = cat.model(mid)
        base = cat.layer_base(mid, layer)
        subset = sorted(subset)
        if len(subset) != spec.top_k:
            raise ValueError(f"subset size {len(subset)} != top_k {spec.top_k} of {mid}")
        local, assoc_l, cloud_l, oe = [], [], [], []
        ctx = self._ctx[(uid, mid)]
        for i in subset:
            g = base + i - 1
            if self.instance.local_cache.is_cached(uid, g):
                local.append(g)
            elif mask[g] & ctx.n_bit:
                assoc_l.append(g)
            elif mask[g] == 0:
                cloud_l.append(g)
            else:
                oe.append(g)
        return ctx, local, assoc_l, cloud_l, oe

    def count_activated(
        self, uid: int, mid: str, layer: int, subset, placement: Placement
    ) -> BetaCounts:
        mask = self.mask_of(placement)
        _, local, assoc_l, cloud_l, oe = self._needed_split(uid, mid, layer, subset, mask)
        return BetaCounts(len(local), len(assoc_l), len(cloud_l), len(oe))

    def route_other_edges(self, uid: int, mid: str, needed, placement: Placement) -> RoutingDecision:
        """Optimal serving servers for experts with the other-edge disposition.

        ``needed`` is an iterable of ExpertId (or global indices) that are
        neither local, nor on the associated server, nor cloud-only. Raises
        if any of them is cached on no non-associated server.
        """
        cat = self.instance.catalog
        ctx = self._ctx[(uid, mid)]
        mask = self.mask_of(placement)
        globals_list = []
        for e in needed:
            g = cat.index_of(e) if isinstance(e, ExpertId) else int(e)
            m = mask[g] & ~ctx.n_bit
            if m == 0:
                raise ValueError(
                    f"expert {cat.expert_of(g)} is cached on no non-associated server; "
                    "it belongs to the cloud class"
                )
            globals_list.append((g, m))
        if not globals_list:
            return RoutingDecision({}, {}, 0.0, True)

        union = 0
        for _, m in globals_list:
            union |= m
        bits = []
        u = union
        while u:
            low = u & -u
            bits.append(low.bit_length() - 1)
            u -= low
        exact = len(bits) <= ROUTING_EXACT_CAP
        fwd, ret, cpe = ctx.fwd, ctx.ret, ctx.cpe
        if exact:
            best = inf
            best_open = 0
            nb = len(bits)
            # Ascending popcount then ascending bit pattern keeps ties
            # deterministic (fewest servers, lowest ids).
            subs = sorted(range(1, 1 << nb), key=lambda s: (bin(s).count("1"), s))
            for sub in subs:
                open_mask = 0
                fixed = 0.0
                s = sub
                j = 0
                while s:
                    if s & 1:
                        b = bits[j]
                        open_mask |= 1 << b
                        fixed += fwd[b] + cpe[b]
                    s >>= 1
                    j += 1
                cost = fixed
                ok = True
                for _, m in globals_list:
                    opts = m & open_mask
                    if not opts:
                        ok = False
                        break
                    r = inf
                    while opts:
                        low = opts & -opts
                        c = ret[low.bit_length() - 1]
                        if c < r:
                            r = c
                        opts -= low
                    cost += r
                if ok and cost < best:
                    best = cost
                    best_open = open_mask
            open_mask = best_open
            cost = best
        else:
            self.used_heuristic_routing = True
            open_mask = 0
            cost = 0.0
            for _, m in sorted(globals_list, key=lambda t: bin(t[1]).count("1")):
                b_cost = inf
                b_bit = -1
                mm = m
                while mm:
                    low = mm & -mm
                    b = low.bit_length() - 1
                    c = ret[b] + (0.0 if open_mask & low else fwd[b] + cpe[b])
                    if c < b_cost:
                        b_cost = c
                        b_bit = b
                    mm -= low
                cost += b_cost
                open_mask |= 1 << b_bit

        assignment: dict[ExpertId, tuple] = {}
        counts: dict[int, int] = {}
        for g, m in globals_list:
            opts = m & open_mask
            choice = min(
                (ret[low.bit_length() - 1], low.bit_length() - 1)
                for low in _iter_bits(opts)
            )[1]
            n = self.server_ids[choice]
            assignment[cat.expert_of(g)] = ("server", n)
            counts[n] = counts.get(n, 0) + 1
        return RoutingDecision(assignment, counts, cost, exact)

    def token_latency(
        self, uid: int, mid: str, layer: int, subset, placement: Placement
    ) -> LatencyBreakdown:
        """Reference per-request latency breakdown (slow path)."""
        mask = self.mask_of(placement)
        ctx, local, assoc_l, cloud_l, oe = self._needed_split(uid, mid, layer, subset, mask)
        k = len(local) + len(assoc_l) + len(cloud_l) + len(oe)
        if len(local) == k:
            return LatencyBreakdown(0.0, 0.0, 0.0, 0.0, 0.0, ctx.t_cpu)
        uplink = ctx.t_ul
        downlink = (k - len(local)) * ctx.t_dl
        edge_compute = ctx.cpe_assoc if assoc_l else 0.0
        backhaul = 0.0
        if oe:
            cat = self.instance.catalog
            decision = self.route_other_edges(
                uid, mid, [cat.expert_of(g) for g in oe], placement
            )
            for n in sorted(decision.served_counts):
                b = self.bitpos[n]
                backhaul += ctx.fwd[b]
                edge_compute += ctx.cpe[b]
            for e, (_, n) in sorted(decision.assignment.items()):
                backhaul += ctx.ret[self.bitpos[n]]
        cloud = 0.0
        if cloud_l:
            cloud = ctx.cloud_hop + ctx.t_cpc + len(cloud_l) * ctx.cloud_ret
        return LatencyBreakdown(uplink, downlink, edge_compute, backhaul, cloud, 0.0)

    def max_token_latency(self, uid: int, mid: str, layer: int, subset) -> float:
        """Worst-case latency: every non-local expert served by the cloud."""
        mask = [0] * self.E
        ctx, local, _, cloud_l, _ = self._needed_split(uid, mid, layer, subset, mask)
        k = len(local) + len(cloud_l)
        if len(local) == k:
            return ctx.t_cpu
        n_cl = k - len(local)
        return ctx.t_ul + n_cl * ctx.t_dl + ctx.cloud_fwd + n_cl * ctx.cloud_ret

    def avg_model_latency(self, uid: int, mid: str, placement: Placement) -> float:
        """Expected per-token latency summed over the model's MoE layers."""
        if (uid, mid) not in self._ctx:
            raise KeyError(f"user {uid} does not request model {mid!r}")
        mask = self.mask_of(placement)
        return sum(
            t.p * self.term_latency(t, mask)
            for t in self.terms
            if t.uid == uid and t.mid == mid
        )

    # -- regime diagnostics --------------------------------------------------

    def latency_regime_violations(self) -> list[str]:
        """Checks that the serving-order assumption behind monotonicity holds.

        The model searches local -> associated -> other edges -> cloud, which
        only yields a monotone objective when every cloud return hop dominates
        any edge round trip plus edge compute.
        """
        out = []
        for (uid, mid), ctx in sorted(self._ctx.items()):
            if ctx.cpe_assoc > ctx.cloud_ret:
                out.append(f"user {uid}, model {mid}: edge compute exceeds cloud return hop")
            for b in range(self.nbits):
                if ctx.rt[b] is inf:
                    continue
                if ctx.cpe[b] > ctx.ret[b]:
                    out.append(
                        f"user {uid}, model {mid}, server {self.server_ids[b]}: "
                        "edge compute exceeds backhaul return hop"
                    )
                if ctx.rt[b] > ctx.cloud_ret:
                    out.append(
                        f"user {uid}, model {mid}, server {self.server_ids[b]}: "
                        "edge round trip exceeds cloud return hop"
                    )
        return out


def _iter_bits(mask: int):
    while mask:
        low = mask & -mask
        yield low
        mask -= low


class EvalState:
    """Mutable placement state with cached term latencies.

    Marginal gains are computed by re-evaluating only the terms whose
    subsets contain the candidate expert; committed additions keep the
    cache in sync. Equality with from-scratch evaluation is a tested
    invariant, not an assumption.
    """

    def __init__(self, model: LatencyModel, placement: Placement | None = None):
        self.model = model
        self.mask = model.mask_of(placement) if placement else [0] * model.E
        self.used = {n: 0.0 for n in model.server_ids}
        if placement:
            cat = model.instance.catalog
            for n, experts in placement.cached.items():
                self.used[n] = sum(cat.expert_bytes_of(g) for g in experts)
        self.cur = [model.term_latency(t, self.mask) for t in model.terms]
        self.objective = sum(
            t.w * (t.tmax - c) for t, c in zip(model.terms, self.cur)
        )

    def gain(self, server_id: int, g: int) -> float:
        """F(X + expert g on server) - F(X); expert must not already be there."""
        bit = 1 << self.model.bitpos[server_id]
        old = self.mask[g]
        self.mask[g] = old | bit
        delta = 0.0
        terms = self.model.terms
        for ti in self.model.terms_by_expert[g]:
            t = terms[ti]
            delta += t.w * (self.cur[ti] - self.model.term_latency(t, self.mask))
        self.mask[g] = old
        return delta

    def add(self, server_id: int, g: int) -> float:
        bit = 1 << self.model.bitpos[server_id]
        if self.mask[g] & bit:
            raise ValueError(f"expert {g} already cached on server {server_id}")
        self.mask[g] |= bit
        delta = 0.0
        terms = self.model.terms
        for ti in self.model.terms_by_expert[g]:
            t = terms[ti]
            new = self.model.term_latency(t, self.mask)
            delta += t.w * (self.cur[ti] - new)
            self.cur[ti] = new
        self.objective += delta
        self.used[server_id] += self.model.instance.catalog.expert_bytes_of(g)
        return delta

    def placement(self) -> Placement:
        cached: dict[int, set[int]] = {n: set() for n in self.model.server_ids}
        for g, m in enumerate(self.mask):
            mm = m
            while mm:
                low = mm & -mm
                cached[self.model.server_ids[low.bit_length() - 1]].add(g)
                mm -= low
        return Placement({n: frozenset(s) for n, s in cached.items()})


# -- module-level operations (one-shot convenience wrappers) -----------------


def count_activated(
    instance: Instance, uid: int, mid: str, layer: int, subset, placement: Placement
) -> BetaCounts:
    return LatencyModel(instance).count_activated(uid, mid, layer, subset, placement)


def route_other_edges(
    instance: Instance, uid: int, mid: str, needed, placement: Placement
) -> RoutingDecision:
    return LatencyModel(instance).route_other_edges(uid, mid, needed, placement)


def token_latency(
    instance: Instance, uid: int, mid: str, layer: int, subset, placement: Placement
) -> LatencyBreakdown:
    return LatencyModel(instance).token_latency(uid, mid, layer, subset, placement)


def max_token_latency(instance: Instance, uid: int, mid: str, layer: int, subset) -> float:
    return LatencyModel(instance).max_token_latency(uid, mid, layer, subset)


def objective_F(placement: Placement, instance: Instance) -> float:
    """Average latency reduction of a placement vs. the cloud-only baseline."""
    placement.validate(instance)
    return LatencyModel(instance).objective(placement)


def avg_model_latency(instance: Instance, uid: int, mid: str, placement: Placement) -> float:
    return LatencyModel(instance).avg_model_latency(uid, mid, placement)


def check_latency_regime(instance: Instance) -> list[str]:
    return LatencyModel(instance).latency_regime_violations()
