"""Deterministic discrete-event simulator.

Clients fire requests through their node's load balancer, requests cross the
RTT matrix, queue FIFO at single-server instances, and outcomes feed back to
the policies at completion time. Identical (scenario, seed) always reproduces
the identical trace: every stochastic entity draws from its own counter-keyed
PRNG stream and simultaneous events follow a fixed kind/entity order.

Event order at equal timestamps: completions first (they free servers), then
instance arrivals, request sends, probes, maintenance steps, placement
changes, client changes, and finally the metrics snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from heapq import heappush, heappop
from typing import Optional

import numpy as np

from .baselines import DecSarsaPolicy, ProxyMityPolicy, ProxyMityConfig, SarsaConfig
from .core import (
    ClientId,
    InstanceId,
    LbId,
    NodeId,
    QosRequirements,
    RequestRecord,
)
from .policy import PolicyConfig, QEdgeProxyPolicy
from .scenarios import ScenarioSpec, ServiceTimeModel

# Tie-break ranks for simultaneous events.
EVT_COMPLETE = 0
EVT_ARRIVE = 1
EVT_SEND = 2
EVT_PROBE = 3
EVT_MAINT = 4
EVT_PLACE = 5
EVT_CLIENT = 6
EVT_METRIC = 7

# spawn_key prefixes for per-entity random streams
_STREAM_SERVICE = 0
_STREAM_CLIENT = 1
_STREAM_POLICY = 2
_STREAM_ORACLE = 3
_STREAM_EVENT = 4


def entity_rng(seed: int, stream: int, entity: int) -> np.random.Generator:
    """Stable per-entity generator: identical (seed, stream, entity) -> identical draws."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, entity))))


class ServiceSampler:
    """Batched lognormal service-time draws from one instance's private stream."""

    __slots__ = ("mean_ms", "cv", "_rng", "_mu", "_sigma", "_batch", "_idx")

    _BATCH = 4096

    def __init__(self, model: ServiceTimeModel, rng: np.random.Generator):
        self.mean_ms = model.mean_ms
        self.cv = model.cv
        self._rng = rng
        if model.cv > 0:
            sigma2 = math.log(1.0 + model.cv**2)
            self._sigma = math.sqrt(sigma2)
            self._mu = math.log(model.mean_ms) - sigma2 / 2.0
        else:
            self._sigma = 0.0
            self._mu = math.log(model.mean_ms)
        self._batch: Optional[np.ndarray] = None
        self._idx = 0

    def sample(self) -> float:
        if self.cv == 0.0:
            return self.mean_ms
        if self._batch is None or self._idx >= self._batch.size:
            self._batch = self._rng.lognormal(self._mu, self._sigma, self._BATCH)
            self._idx = 0
        v = self._batch[self._idx]
        self._idx += 1
        return float(v)

    def draw_array(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.cv == 0.0:
            return np.full(n, self.mean_ms)
        return rng.lognormal(self._mu, self._sigma, n)


@dataclass(slots=True)
class InstanceRuntime:
    """A single-server FIFO service instance; `busy_until` carries the queue backlog."""

    id: InstanceId
    node: NodeId
    sampler: ServiceSampler
    busy_until: float = 0.0
    served: int = 0
    active: bool = True
    removed_at: Optional[float] = None

    def sample_processing(self, arrival_ms: float) -> tuple[float, float]:
        """Serve one arrival: returns (processing latency incl. queueing, departure time)."""
        service = self.sampler.sample()
        start = self.busy_until if self.busy_until > arrival_ms else arrival_ms
        depart = start + service
        self.busy_until = depart
        self.served += 1
        return depart - arrival_ms, depart

    def backlog_ms(self, now_ms: float) -> float:
        return self.busy_until - now_ms if self.busy_until > now_ms else 0.0


@dataclass(slots=True)
class ClientRuntime:
    id: ClientId
    lb: LbId
    period_ms: float
    phase_ms: float
    active_from_ms: float
    sends: int = 0
    rng: Optional[np.random.Generator] = None
    _jit: Optional[np.ndarray] = None
    _jit_idx: int = 0

    def jitter_multiplier(self, spread: float) -> float:
        """Per-request RTT multiplier from this client's private stream."""
        if spread <= 0.0 or self.rng is None:
            return 1.0
        if self._jit is None or self._jit_idx >= self._jit.size:
            self._jit = self.rng.uniform(1.0 - spread, 1.0 + spread, 512)
            self._jit_idx = 0
        v = self._jit[self._jit_idx]
        self._jit_idx += 1
        return float(v)


@dataclass
class SimulationTrace:
    """Everything a run produced, in memory; metrics and the CLI consume this."""

    qos: QosRequirements
    duration_ms: float
    strategy: str
    seed: int
    records: list[RequestRecord]
    lb_ids: list[LbId]
    instance_ids: list[InstanceId]
    initial_instances: list[InstanceId]
    instance_nodes: dict[InstanceId, NodeId]
    client_lbs: dict[ClientId, LbId]
    rtt_ms: list[list[float]]
    tick_times_ms: list[float]
    true_mu: list[np.ndarray]       # per tick: (K, M), NaN where instance inactive
    weights: list[np.ndarray]       # per tick: (K, M) routing distribution snapshots
    active_mask: list[np.ndarray]   # per tick: (M,) bool
    diags: list[dict[LbId, dict]]   # per tick: per-LB policy diagnostics
    events: list[dict] = field(default_factory=list)
    unroutable: int = 0


def build_policy(lb: LbId, spec: ScenarioSpec, sink, rng: np.random.Generator):
    strat = spec.strategy
    idle = spec.service.idle_ms
    if strat.name == "qedgeproxy":
        cfg = PolicyConfig(**strat.params)
        return QEdgeProxyPolicy(lb, spec.qos, cfg, idle, event_sink=sink)
    if strat.name == "proxymity":
        cfg = ProxyMityConfig(**strat.params)
        return ProxyMityPolicy(lb, spec.qos, cfg)
    if strat.name == "dec_sarsa":
        cfg = SarsaConfig(**strat.params)
        return DecSarsaPolicy(lb, spec.qos, cfg, idle, rng)
    raise ValueError(f"unknown strategy {strat.name!r}")


class Simulation:
    """One single-threaded run over the event queue; independent runs share nothing."""

    def __init__(self, spec: ScenarioSpec):
        spec.validate()
        self.spec = spec
        self.qos = spec.qos
        self.topology = spec.build_topology()
        self.duration_ms = spec.duration_s * 1000.0
        if spec.strategy.name == "qedgeproxy":
            period_s = spec.strategy.params.get(
                "decision_period_s", PolicyConfig.decision_period_s
            )
        else:
            period_s = 1.0
        self.decision_period_ms = period_s * 1000.0
        self.probe_period_ms = spec.engine.probe_period_s * 1000.0

        self.n_lbs = self.topology.n_nodes
        placement = spec.build_placement(self.topology)
        self.instances: dict[InstanceId, InstanceRuntime] = {}
        for inst, node in placement.items():
            self.instances[inst] = InstanceRuntime(
                inst, node, ServiceSampler(spec.service, entity_rng(spec.seed, _STREAM_SERVICE, inst))
            )
        self._next_instance_id = max(self.instances, default=-1) + 1
        self._initial_instances = sorted(self.instances)

        self.event_log: list[dict] = []
        self.records: list[RequestRecord] = []
        self.unroutable = 0

        self.policies = {}
        for lb in range(self.n_lbs):
            sink = self._make_sink(lb)
            self.policies[lb] = build_policy(
                lb, spec, sink, entity_rng(spec.seed, _STREAM_POLICY, lb)
            )

        self.clients: dict[ClientId, ClientRuntime] = {}
        self._heap: list = []
        self._seq = 0
        self._now = 0.0

        # Column order for trace arrays covers every instance that will ever exist.
        planned_adds = sum(1 for e in spec.events if e.kind == "add_instance")
        self.all_instance_ids = sorted(self.instances) + list(
            range(self._next_instance_id, self._next_instance_id + planned_adds)
        )
        self._col = {m: i for i, m in enumerate(self.all_instance_ids)}
        self._oracle_rngs = {
            m: entity_rng(spec.seed, _STREAM_ORACLE, m) for m in self.all_instance_ids
        }

        self.tick_times_ms: list[float] = []
        self.true_mu_ticks: list[np.ndarray] = []
        self.weight_ticks: list[np.ndarray] = []
        self.active_ticks: list[np.ndarray] = []
        self.diag_ticks: list[dict[LbId, dict]] = []

    # -- setup helpers --------------------------------------------------------

    def _make_sink(self, lb: LbId):
        def sink(kind: str, **fields):
            entry = {"time_ms": self._now, "kind": kind}
            entry.update(fields)
            self.event_log.append(entry)
        return sink

    def _push(self, time_ms: float, rank: int, entity: int, payload=None) -> None:
        self._seq += 1
        heappush(self._heap, (time_ms, rank, entity, self._seq, payload))

    def _rtt(self, lb: LbId, node: NodeId) -> float:
        return self.topology.rtt_ms[lb][node]

    def _rtt_view(self, lb: LbId) -> dict[InstanceId, float]:
        row = self.topology.rtt_ms[lb]
        return {m: row[inst.node] for m, inst in self.instances.items() if inst.active}

    def _add_client(self, client_id: ClientId, lb: LbId, start_ms: float) -> ClientRuntime:
        wl = self.spec.workload
        rng = entity_rng(self.spec.seed, _STREAM_CLIENT, client_id)
        phase = float(rng.uniform(0.0, wl.period_ms)) if wl.phase == "spread" else 0.0
        c = ClientRuntime(client_id, lb, wl.period_ms, phase, start_ms, rng=rng)
        self.clients[client_id] = c
        first = start_ms + phase
        if first < self.duration_ms:
            self._push(first, EVT_SEND, client_id)
        return c

    # -- main loop ------------------------------------------------------------

    def run(self) -> SimulationTrace:
        spec = self.spec
        self._now = 0.0

        placement = {m: inst.node for m, inst in self.instances.items()}
        for lb, policy in self.policies.items():
            policy.initialize(placement, self._rtt_view(lb))

        next_client = 0
        for lb in range(self.n_lbs):
            for _ in range(spec.workload.clients_per_lb):
                self._add_client(next_client, lb, 0.0)
                next_client += 1
        self._next_client_id = next_client

        for lb in range(self.n_lbs):
            self._push(0.0, EVT_PROBE, lb, 0)
        if self.decision_period_ms < self.duration_ms:
            # Per-LB phase offsets: decision loops run every H_d but are not
            # mutually synchronized, as independently started daemons would be.
            for lb in range(self.n_lbs):
                first = self.decision_period_ms + self._maint_offset(lb)
                if first < self.duration_ms:
                    self._push(first, EVT_MAINT, lb, 1)
            self._push(self.decision_period_ms, EVT_METRIC, 0, 1)
        for i, ev in enumerate(spec.events):
            rank = EVT_CLIENT if ev.kind == "add_clients" else EVT_PLACE
            self._push(ev.time_s * 1000.0, rank, i, i)

        heap = self._heap
        while heap:
            time_ms, rank, entity, _seq, payload = heappop(heap)
            self._now = time_ms
            if rank == EVT_COMPLETE:
                self._on_complete(time_ms, payload)
            elif rank == EVT_ARRIVE:
                self._on_arrive(time_ms, payload)
            elif rank == EVT_SEND:
                self._on_send(time_ms, entity)
            elif rank == EVT_PROBE:
                self._on_probe(time_ms, entity, payload)
            elif rank == EVT_MAINT:
                self._on_maintenance(time_ms, entity, payload)
            elif rank == EVT_PLACE or rank == EVT_CLIENT:
                self._on_scenario_event(time_ms, entity)
            elif rank == EVT_METRIC:
                self._on_metrics(time_ms, payload)

        return SimulationTrace(
            qos=self.qos,
            duration_ms=self.duration_ms,
            strategy=spec.strategy.label(),
            seed=spec.seed,
            records=self.records,
            lb_ids=list(range(self.n_lbs)),
            instance_ids=list(self.all_instance_ids),
            initial_instances=self._initial_instances,
            instance_nodes={m: self.instances[m].node for m in self.instances},
            client_lbs={c.id: c.lb for c in self.clients.values()},
            rtt_ms=self.topology.rtt_ms,
            tick_times_ms=self.tick_times_ms,
            true_mu=self.true_mu_ticks,
            weights=self.weight_ticks,
            active_mask=self.active_ticks,
            diags=self.diag_ticks,
            events=self.event_log,
            unroutable=self.unroutable,
        )

    # -- handlers --------------------------------------------------------------

    def _on_send(self, t: float, client_id: ClientId) -> None:
        client = self.clients[client_id]
        m = self.policies[client.lb].route(t)
        if m is None:
            self.records.append(
                RequestRecord(client_id, client.lb, None, t, math.inf, math.inf, math.inf, False)
            )
            self.unroutable += 1
        else:
            inst = self.instances.get(m)
            if inst is not None:
                rtt = self._rtt(client.lb, inst.node) * client.jitter_multiplier(
                    self.spec.engine.rtt_jitter
                )
            else:
                rtt = math.inf
            if inst is None or not inst.active:
                # Stale pick of a removed endpoint: fails after one round trip.
                self._push(t + (rtt if inst is not None else 0.0), EVT_COMPLETE, m if m is not None else -1,
                           (client_id, client.lb, m, t, rtt, math.inf))
            else:
                self._push(t + rtt / 2.0, EVT_ARRIVE, m, (client_id, client.lb, m, t, rtt))
        client.sends += 1
        nxt = client.active_from_ms + client.phase_ms + client.sends * client.period_ms
        if nxt < self.duration_ms:
            self._push(nxt, EVT_SEND, client_id)

    def _on_arrive(self, t: float, payload) -> None:
        client_id, lb, m, send_ms, rtt = payload
        inst = self.instances[m]
        if not inst.active:
            drains = (
                self.spec.engine.removal_mode == "drain"
                and inst.removed_at is not None
                and send_ms <= inst.removed_at
            )
            if drains:
                proc, depart = inst.sample_processing(t)
            else:
                self._push(t + rtt / 2.0, EVT_COMPLETE, m, (client_id, lb, m, send_ms, rtt, math.inf))
                return
        else:
            proc, depart = inst.sample_processing(t)
        self._push(depart + rtt / 2.0, EVT_COMPLETE, m, (client_id, lb, m, send_ms, rtt, proc))

    def _on_complete(self, t: float, payload) -> None:
        client_id, lb, m, send_ms, rtt, proc = payload
        if self.spec.engine.removal_mode == "fail" and m in self.instances:
            removed_at = self.instances[m].removed_at
            if removed_at is not None and t > removed_at:
                proc = math.inf
        total = rtt + proc
        rec = RequestRecord(
            client_id, lb, m, send_ms, rtt, proc, total, total <= self.qos.tau_ms
        )
        self.records.append(rec)
        if m is not None:
            self.policies[lb].record_outcome(m, rec, t)

    def _on_probe(self, t: float, lb: LbId, count: int) -> None:
        self.policies[lb].on_probe(self._rtt_view(lb), t)
        self.event_log.append({"time_ms": t, "kind": "probe", "lb": lb})
        nxt = (count + 1) * self.probe_period_ms
        if nxt < self.duration_ms:
            self._push(nxt, EVT_PROBE, lb, count + 1)

    def _maint_offset(self, lb: LbId) -> float:
        return self.decision_period_ms * lb / self.n_lbs

    def _on_maintenance(self, t: float, lb: LbId, count: int) -> None:
        self.policies[lb].maintenance_step(t)
        nxt = (count + 1) * self.decision_period_ms + self._maint_offset(lb)
        if nxt < self.duration_ms:
            self._push(nxt, EVT_MAINT, lb, count + 1)

    def _on_scenario_event(self, t: float, index: int) -> None:
        ev = self.spec.events[index]
        if ev.kind == "add_clients":
            count = int(ev.params.get("count", 0))
            lbs = ev.params.get("lbs")
            if lbs is None:
                num_lbs = int(ev.params.get("num_lbs", min(count, self.n_lbs)))
                rng = entity_rng(self.spec.seed, _STREAM_EVENT, index)
                lbs = sorted(int(x) for x in rng.choice(self.n_lbs, size=num_lbs, replace=False))
            for i in range(count):
                self._add_client(self._next_client_id, lbs[i % len(lbs)], t)
                self._next_client_id += 1
            self.event_log.append(
                {"time_ms": t, "kind": "add_clients", "count": count, "lbs": list(lbs)}
            )
        elif ev.kind == "remove_instance":
            m = int(ev.params["instance"])
            inst = self.instances.get(m)
            if inst is None or not inst.active:
                return
            inst.active = False
            inst.removed_at = t
            self.event_log.append({"time_ms": t, "kind": "remove_instance", "instance": m})
            for lb, policy in self.policies.items():
                if self._rtt(lb, inst.node) <= self.qos.tau_ms:
                    policy.on_instance_removed(m, t)
                    self.event_log.append(
                        {"time_ms": t, "kind": "placement_delivered", "lb": lb,
                         "event": "removed", "instance": m}
                    )
        elif ev.kind == "add_instance":
            node = int(ev.params["node"])
            m = self._next_instance_id
            self._next_instance_id += 1
            self.instances[m] = InstanceRuntime(
                m, node, ServiceSampler(self.spec.service, entity_rng(self.spec.seed, _STREAM_SERVICE, m))
            )
            self.event_log.append(
                {"time_ms": t, "kind": "add_instance", "instance": m, "node": node}
            )
            for lb, policy in self.policies.items():
                rtt = self._rtt(lb, node)
                if rtt <= self.qos.tau_ms:
                    policy.on_instance_added(m, node, rtt, t)
                    self.event_log.append(
                        {"time_ms": t, "kind": "placement_delivered", "lb": lb,
                         "event": "added", "instance": m}
                    )

    # -- oracle ----------------------------------------------------------------

    @staticmethod
    def _success_prob(service_draws: np.ndarray, rtt: float, slack_ms: float,
                      jitter: float) -> float:
        """P(rtt*J + wait + s <= tau) over service draws; J ~ U(1-j, 1+j) in closed form."""
        if jitter <= 0.0 or rtt <= 0.0:
            return float(np.mean(service_draws <= slack_ms - rtt))
        lo, hi = rtt * (1.0 - jitter), rtt * (1.0 + jitter)
        frac = (slack_ms - service_draws - lo) / (hi - lo)
        return float(np.mean(np.clip(frac, 0.0, 1.0)))

    def true_mu(self, lb: LbId, m: InstanceId, now_ms: float, mc_draws: int,
                rng: np.random.Generator) -> float:
        """Monte-Carlo P(success) for one (LB, instance) pair given the instantaneous backlog.

        Metrics-only oracle; policies never see it.
        """
        inst = self.instances[m]
        slack = self.qos.tau_ms - inst.backlog_ms(now_ms)
        draws = inst.sampler.draw_array(mc_draws, rng)
        return self._success_prob(draws, self._rtt(lb, inst.node), slack,
                                  self.spec.engine.rtt_jitter)

    def _on_metrics(self, t: float, count: int) -> None:
        k = self.n_lbs
        n_cols = len(self.all_instance_ids)
        mu = np.full((k, n_cols), np.nan)
        wts = np.zeros((k, n_cols))
        active = np.zeros(n_cols, dtype=bool)
        mc = self.spec.engine.mc_draws
        tau = self.qos.tau_ms
        jitter = self.spec.engine.rtt_jitter
        for m in self.all_instance_ids:
            inst = self.instances.get(m)
            if inst is None or not inst.active:
                continue
            col = self._col[m]
            active[col] = True
            wait = inst.backlog_ms(t)
            slack = tau - wait
            if inst.sampler.cv == 0.0 and jitter <= 0.0:
                fixed = inst.sampler.mean_ms
                for lb in range(k):
                    mu[lb, col] = 1.0 if self._rtt(lb, inst.node) + fixed <= slack else 0.0
            elif jitter <= 0.0:
                draws = inst.sampler.draw_array(mc, self._oracle_rngs[m])
                draws.sort()
                for lb in range(k):
                    budget = slack - self._rtt(lb, inst.node)
                    mu[lb, col] = np.searchsorted(draws, budget, side="right") / mc
            else:
                draws = inst.sampler.draw_array(mc, self._oracle_rngs[m])
                for lb in range(k):
                    mu[lb, col] = self._success_prob(draws, self._rtt(lb, inst.node), slack, jitter)
        diag: dict[LbId, dict] = {}
        for lb, policy in self.policies.items():
            for m, w in policy.routing_distribution().items():
                col = self._col.get(m)
                if col is not None:
                    wts[lb, col] = w
            diag[lb] = dict(getattr(policy, "last_diag", {}) or {})
        self.tick_times_ms.append(t)
        self.true_mu_ticks.append(mu)
        self.weight_ticks.append(wts)
        self.active_ticks.append(active)
        self.diag_ticks.append(diag)
        nxt = (count + 1) * self.decision_period_ms
        if nxt < self.duration_ms:
            self._push(nxt, EVT_METRIC, 0, count + 1)


def run_scenario(spec: ScenarioSpec) -> SimulationTrace:
    return Simulation(spec).run()
