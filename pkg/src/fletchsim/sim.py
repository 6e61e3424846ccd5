"""Simulation harness: wires clients, switch, controller and servers through
a latency/loss network, collects metrics and defines experiment presets."""

from __future__ import annotations

import csv
import io
import math
import random
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import checks
from .client import Client
from .controller import ControllerState, SimDriver, preload as preload_cache
from .engine import Engine, InvariantViolation
from .hashing import make_hasher
from .namespace import READS, ROOT, MetaOp, NamespaceTree, OpKind, Principal
from .server import Cluster, Server
from .switch import Switch
from .workload import (DynamicWorkload, OWNER_GID, OWNER_UID, Trace, WorkloadSpec,
                       assign_frequencies, build_namespace, chmod_mix, sample_trace)


class ConfigError(ValueError):
    pass


class UnknownPreset(KeyError):
    pass


@dataclass
class SimConfig:
    scheme: str = "fletch"              # fletch | nocache
    n_servers: int = 16
    service_rate: float = 1e5           # ops/s per server
    client_latency: float = 2e-6        # client <-> switch, one way
    server_latency: float = 2e-6        # switch <-> server, one way
    jitter: float = 0.0                 # uniform +-fraction on every leg
    loss_reply: float = 0.0             # lock-related server -> switch replies
    loss_ack: float = 0.0               # switch -> server ACKs
    loss_client: float = 0.0            # switch -> client responses
    lock_mode: str = "multi"            # multi | single
    capacity: int = 8192
    cms_threshold: int = 10
    pull_period: float = 2.0
    preload: int = 5000
    traversal_time: float = 0.5e-6
    n_pipes: int = 2
    token_cost: float = 0.027           # extra server work per op when caching
    update_cost: float = 0.55           # server work per cache update payload
    token_ttl: float = 3600.0
    warm_tokens: bool = False
    ctrl_latency: float = 1e-5
    ctrl_timeout: float = 0.01
    ctrl_retries: int = 5
    n_clients: int = 128
    foreign_every: int = 0              # every k-th client runs as another user
    duration: float = 0.0               # 0 = run the trace to completion
    starvation_limit: int = 10_000
    hasher: str = "md5"
    weak_buckets: int = 1
    check: bool = True
    fidelity: bool = False
    dump_events: bool = False
    latency_log: bool = False
    series_bin: float = 0.0             # >0: per-bin throughput series
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scheme not in ("fletch", "nocache"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.lock_mode not in ("multi", "single"):
            raise ConfigError(f"unknown lock mode {self.lock_mode!r}")
        if self.hasher not in ("md5", "weak"):
            raise ConfigError(f"unknown hasher {self.hasher!r}")
        for name in ("loss_reply", "loss_ack", "loss_client", "jitter"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        for name in ("service_rate", "traversal_time"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("client_latency", "server_latency", "ctrl_latency", "duration",
                     "pull_period", "token_cost", "update_cost", "series_bin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_servers < 1 or self.n_clients < 1 or self.n_pipes < 1:
            raise ConfigError("n_servers, n_clients and n_pipes must be >= 1")
        if self.capacity < 1 or self.capacity > (1 << 20):
            raise ConfigError("capacity out of range")
        if self.preload < 0 or self.cms_threshold < 0:
            raise ConfigError("preload and cms_threshold must be >= 0")

    @property
    def caching(self) -> bool:
        return self.scheme == "fletch"

    @property
    def lossy(self) -> bool:
        return self.loss_reply > 0 or self.loss_ack > 0 or self.loss_client > 0

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def coerce_field(name: str, value: str):
    types = {f.name: f.type for f in fields(SimConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    t = types[name]
    try:
        if t == "bool":
            return _BOOL[value.strip().lower()]
        if t == "int":
            return int(float(value))
        if t == "float":
            return float(value)
        return value.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    kw = asdict(base) if base is not None else {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        kw[k] = coerce_field(k, v)
    return SimConfig(**kw)


def dump_config(cfg: SimConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def op_class(kind: OpKind) -> str:
    return "read" if kind in READS else "write"


@dataclass
class Metrics:
    scheme: str = ""
    completed: int = 0
    issued: int = 0
    in_flight: int = 0
    window: float = 0.0
    completed_in_window: int = 0
    throughput: float = 0.0
    latency: dict = field(default_factory=dict)       # class -> {mean, p95, p99, count}
    hit_rate: float = 0.0
    hits: int = 0
    reads: int = 0
    recirc_total: int = 0
    recirc_mean: float = 0.0
    recirc_by_class: dict = field(default_factory=dict)
    redirects: int = 0
    server_load: list = field(default_factory=list)
    starvation_warnings: int = 0
    admissions: int = 0
    admitted_paths: int = 0
    evictions: int = 0
    aborts: int = 0
    status_counts: dict = field(default_factory=dict)
    retransmits: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    series: list = field(default_factory=list)
    sim_time: float = 0.0
    events: int = 0

    def row(self) -> dict:
        out = {"scheme": self.scheme, "completed": self.completed, "issued": self.issued,
               "in_flight": self.in_flight, "window_s": f"{self.window:.6g}",
               "throughput_ops": f"{self.throughput:.6g}", "hit_rate": f"{self.hit_rate:.4f}",
               "recirc_mean": f"{self.recirc_mean:.4f}", "redirects": self.redirects,
               "starvation_warnings": self.starvation_warnings,
               "admissions": self.admissions, "evictions": self.evictions,
               "violations": len(self.violations)}
        for cls in ("all", "read", "write"):
            lat = self.latency.get(cls)
            for k in ("mean", "p95", "p99"):
                out[f"{cls}_lat_{k}_us"] = f"{lat[k] * 1e6:.4g}" if lat else ""
        for cls in ("read", "write"):
            out[f"{cls}_recirc_mean"] = f"{self.recirc_by_class.get(cls, 0.0):.4f}"
        if self.server_load:
            load = np.array(self.server_load, dtype=float)
            out["server_load_max_share"] = f"{load.max() / max(1.0, load.sum()):.4f}"
        return out


def metrics_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys: list[str] = []
    for r in rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _trace_source(ops_by_client: list[list[MetaOp]], duration: float):
    pos = [0] * len(ops_by_client)

    def source(cid: int, now: float):
        if duration and now >= duration:
            return None
        ops = ops_by_client[cid]
        i = pos[cid]
        if i >= len(ops):
            return None
        pos[cid] = i + 1
        return ops[i]
    return source


class Simulation:
    """One simulated cluster.  Also the ``net`` object every actor uses to
    send messages."""

    def __init__(self, config: SimConfig, tree: NamespaceTree, source=None,
                 weights: dict | None = None):
        cfg = config
        self.cfg = cfg
        self.engine = Engine()
        self.rand = random.Random(cfg.seed)
        self.hasher = make_hasher(cfg.hasher, cfg.weak_buckets)
        self.observe = cfg.check and cfg.caching
        self.check_tokens = cfg.check
        self.tree = tree
        self.recorder = checks.HistoryRecorder(tree) if cfg.check else None
        self.cluster = Cluster(tree, cfg.n_servers, self.recorder)
        retransmit = cfg.loss_reply > 0 or cfg.loss_ack > 0
        rto = 4 * max(cfg.server_latency, 1e-9)
        self.servers = [Server(s, self.cluster, self, 1.0 / cfg.service_rate, cfg.caching,
                               cfg.token_cost, cfg.update_cost, rto=rto, retransmit=retransmit)
                        for s in range(cfg.n_servers)]
        self.cluster.servers = self.servers
        self.switch = Switch(cfg.capacity, cfg.n_servers, cfg.cms_threshold, cfg.lock_mode,
                             tree.get(ROOT), cfg.traversal_time, cfg.n_pipes, cfg.fidelity,
                             cfg.starvation_limit, net=self, trace_events=cfg.dump_events)
        self.state = ControllerState(cfg.capacity, self.hasher, cfg.lock_mode)
        self.state.threshold = cfg.cms_threshold
        self.state.clock = lambda: self.engine.now
        self.ctrl = SimDriver(self.state, self.switch, self.cluster, self.engine,
                              cfg.ctrl_latency, cfg.ctrl_timeout, cfg.ctrl_retries,
                              pull_period=cfg.pull_period)
        self.source = source
        self.weights = weights
        self.clients: list[Client] = []
        self.finished = 0
        self.first_finish: float | None = None
        self.completions: list[float] = []
        self.lat = {"read": [], "write": []}
        self.recirc = {"read": [], "write": []}
        self.redirect_total = 0
        self.hits = 0
        self.single_reads = 0
        self.status_counts: dict[str, int] = {}
        self.violations: list[str] = []
        self.latency_rows: list[tuple] = []
        self.per_request: list[tuple] = []
        self.record_requests = False
        self._preloaded: list = []

    # ------------------------------------------------------------------
    # network legs
    def _delay(self, base: float) -> float:
        j = self.cfg.jitter
        if j:
            return base * (1.0 + j * (2.0 * self.rand.random() - 1.0))
        return base

    def _drop(self, p: float) -> bool:
        return p > 0 and self.rand.random() < p

    def client_to_switch(self, pkt) -> None:
        d = self._delay(self.cfg.client_latency)
        if self.cfg.caching:
            self.engine.after(d, self.switch.on_request, pkt)
        else:
            # plain forwarding: straight through to the owning server
            self.engine.after(d + self._delay(self.cfg.server_latency), self._to_server, pkt)

    def _to_server(self, pkt) -> None:
        self.servers[self.cluster.owner(pkt.op.target)].handle_request(pkt)

    def switch_to_server(self, pkt) -> None:
        self.engine.after(self._delay(self.cfg.server_latency), self._to_server, pkt)

    def server_to_switch(self, reply) -> None:
        if reply.seq is not None and self._drop(self.cfg.loss_reply):
            return
        d = self._delay(self.cfg.server_latency)
        if self.cfg.caching:
            self.engine.after(d, self.switch.handle_server_response, reply)
        else:
            self.engine.after(d, self.switch._deliver, reply)

    def ack_to_server(self, sid: int, seq: int) -> None:
        if self._drop(self.cfg.loss_ack):
            return
        self.engine.after(self._delay(self.cfg.server_latency), self.servers[sid].on_ack, seq)

    def switch_to_client(self, resp) -> None:
        if self._drop(self.cfg.loss_client):
            return
        self.engine.after(self._delay(self.cfg.client_latency),
                          self.clients[resp.client].on_response, resp)

    def report_hot(self, path) -> None:
        self.engine.after(self.cfg.ctrl_latency, self.ctrl.on_hot_report, path)

    # ------------------------------------------------------------------
    # client callbacks
    def client_finished(self, client: Client) -> None:
        self.finished += 1
        if self.first_finish is None:
            self.first_finish = self.engine.now

    def record_completion(self, client: Client, op: MetaOp, resp, latency: float) -> None:
        now = self.engine.now
        cls = op_class(op.kind)
        self.completions.append(now)
        self.lat[cls].append(latency)
        self.recirc[cls].append(resp.recirc)
        self.redirect_total += resp.redirects
        self.status_counts[resp.status] = self.status_counts.get(resp.status, 0) + 1
        if op.kind not in READS or op.kind == OpKind.READDIR:
            pass
        else:
            self.single_reads += 1
            if resp.hit:
                self.hits += 1
        if self.cfg.latency_log:
            self.latency_rows.append((client.cid, op.kind.value, len(op.target), int(resp.hit),
                                      latency))
        if self.record_requests:
            self.per_request.append((op.kind.value, len(op.target), resp.hit, resp.recirc,
                                     resp.redirects))
        if self.recorder is not None:
            self._check_response(client, op, resp)

    def _check_response(self, client: Client, op: MetaOp, resp) -> None:
        if resp.status != "ok" or resp.record is None or op.kind not in READS:
            return
        rec = self.recorder
        t1 = self.engine.now
        if resp.served_path is not None and resp.served_path != op.target:
            self.violations.append(f"{op.target} answered with {resp.served_path}'s record")
            return
        if not rec.record_valid_between(op.target, resp.record, client.first_sent, t1):
            self.violations.append(f"stale or foreign record for {op.target} at {t1:.9f}")
        obs = resp.pkt.observed
        if resp.hit and obs:
            if not rec.consistent_snapshot(obs, resp.pkt.arrived_at, t1):
                self.violations.append(f"mixed snapshot along {op.target} at {t1:.9f}")

    # ------------------------------------------------------------------
    def do_preload(self, files) -> list:
        def grant(path_tokens):
            for p, tok in path_tokens:
                rec = self.tree.raw(p)
                targets = self.servers if rec is not None and rec.is_dir else \
                    [self.servers[self.cluster.owner(p)]]
                for srv in targets:
                    srv.on_grant([(p, tok)])
        self._preloaded = preload_cache(self.state, self.switch, grant, self.tree, files)
        return self._preloaded

    def start(self, principals=None) -> None:
        cfg = self.cfg
        for c in range(cfg.n_clients):
            if principals is not None:
                who = principals[c]
            elif cfg.foreign_every and c % cfg.foreign_every == cfg.foreign_every - 1:
                who = Principal(OWNER_UID + 1000, OWNER_GID + 1000)
            else:
                who = Principal(OWNER_UID, OWNER_GID)
            self.clients.append(Client(c, self, self.source, who, cfg.token_ttl,
                                       retransmit=cfg.loss_client > 0,
                                       timeout_floor=max(1e-4, 50 * cfg.client_latency)))
        if cfg.caching:
            if cfg.warm_tokens:
                # steady state: every client already learned the preloaded tokens
                base = {p: self.state.tokens.token_of(p) for p in self.state.slot_of}
                for cl in self.clients:
                    cl.tokens.base = base
            self.ctrl.start_timers()
        for cl in self.clients:
            cl.start()

    def run(self) -> Metrics:
        cfg = self.cfg
        try:
            self.engine.run(until=cfg.duration if cfg.duration else None)
        except InvariantViolation as e:
            self.violations.append(str(e))
            raise
        if cfg.check and not cfg.duration:
            self.violations.extend(self.final_checks())
        return self.metrics()

    def final_checks(self) -> list[str]:
        out = []
        if self.cfg.caching:
            out += checks.lock_balance(self.switch)
            out += checks.write_through(self.switch, self.cluster)
            out += checks.invalid_slots(self.switch)
            out += checks.closure(self.state)
            out += checks.mirror(self.state, self.switch)
            out += checks.token_uniqueness(self.state, self.switch)
            out += checks.sequence_agreement(self.switch, self.servers)
        out += checks.quiescence(self.servers)
        fab = sum(c.stats["fabricated"] for c in self.clients)
        if fab:
            out.append(f"clients sent {fab} tokens they never received")
        issued = sum(c.stats["issued"] for c in self.clients)
        done = sum(c.stats["completed"] for c in self.clients)
        if issued != done:
            out.append(f"{issued - done} requests never completed")
        return out

    def metrics(self) -> Metrics:
        cfg = self.cfg
        m = Metrics(scheme=cfg.scheme)
        m.issued = sum(c.stats["issued"] for c in self.clients)
        m.completed = len(self.completions)
        m.in_flight = m.issued - m.completed
        end = self.first_finish
        if cfg.duration:
            end = min(end, cfg.duration) if end is not None else cfg.duration
        if end is None:
            end = self.engine.now
        m.window = end
        comp = np.array(self.completions)
        m.completed_in_window = int((comp <= end).sum()) if len(comp) else 0
        m.throughput = m.completed_in_window / end if end > 0 else 0.0
        all_lat = []
        for cls in ("read", "write"):
            a = np.array(self.lat[cls])
            all_lat.append(a)
            if len(a):
                m.latency[cls] = _lat_stats(a)
        a = np.concatenate(all_lat) if all_lat else np.array([])
        if len(a):
            m.latency["all"] = _lat_stats(a)
        m.reads = self.single_reads
        m.hits = self.hits
        m.hit_rate = self.hits / self.single_reads if self.single_reads else 0.0
        rr = self.recirc["read"] + self.recirc["write"]
        m.recirc_total = int(sum(rr))
        m.recirc_mean = m.recirc_total / len(rr) if rr else 0.0
        for cls in ("read", "write"):
            r = self.recirc[cls]
            m.recirc_by_class[cls] = sum(r) / len(r) if r else 0.0
        m.redirects = self.redirect_total
        m.server_load = [s.stats["served"] for s in self.servers]
        m.starvation_warnings = self.switch.stats["starvation_warnings"]
        st = self.ctrl.stats
        m.admissions, m.admitted_paths = st["admissions"], st["admitted_paths"]
        m.evictions, m.aborts = st["evictions"], st["aborts"]
        m.status_counts = dict(sorted(self.status_counts.items()))
        m.retransmits = {"server": sum(s.stats["retransmits"] for s in self.servers),
                         "client": sum(c.stats["retransmits"] for c in self.clients),
                         "dup_replies": self.switch.stats["dup_replies"]}
        m.violations = list(self.violations)
        if cfg.series_bin and len(comp):
            nb = int(math.ceil(self.engine.now / cfg.series_bin)) or 1
            counts = np.bincount(np.minimum((comp / cfg.series_bin).astype(int), nb - 1),
                                 minlength=nb)
            m.series = (counts / cfg.series_bin).tolist()
        m.sim_time = self.engine.now
        m.events = self.engine.fired
        return m


def _lat_stats(a: np.ndarray) -> dict:
    return {"mean": float(a.mean()), "p95": float(np.percentile(a, 95)),
            "p99": float(np.percentile(a, 99)), "count": int(len(a))}


def hottest(weights: dict, n: int) -> list:
    if not weights or n <= 0:
        return []
    return sorted(weights, key=weights.get, reverse=True)[:n]


def build(config: SimConfig, trace: Trace, tree: NamespaceTree,
          weights: dict | None = None) -> Simulation:
    """Wire a simulation for ``trace`` on ``tree`` (which the run mutates)
    and preload the hottest files."""
    source = _trace_source(trace.per_client(config.n_clients), config.duration)
    sim = Simulation(config, tree, source, weights)
    if config.caching and config.preload and weights:
        sim.do_preload(hottest(weights, config.preload))
    return sim


def simulate(config: SimConfig, trace: Trace, tree: NamespaceTree, weights: dict | None = None,
             principals=None, record_requests: bool = False):
    """Run to completion; returns (metrics, simulation)."""
    sim = build(config, trace, tree, weights)
    sim.record_requests = record_requests
    sim.start(principals)
    return sim.run(), sim


def run(config: SimConfig, trace: Trace, tree: NamespaceTree, weights: dict | None = None,
        principals=None) -> Metrics:
    return simulate(config, trace, tree, weights, principals)[0]


def run_spec(config: SimConfig, spec: WorkloadSpec, record_requests: bool = False):
    """Generate the namespace and trace for ``spec`` and simulate it."""
    rng = np.random.default_rng(spec.seed)
    tree, files = build_namespace(spec)
    weights = assign_frequencies(files, spec.skew, spec.order, spec.exponent,
                                 spec.eighty_twenty, rng)
    trace = sample_trace(spec, weights, rng=rng)
    return simulate(config, trace, tree, weights, record_requests=record_requests)[0]


def measure_recirculations(config: SimConfig, trace: Trace, tree: NamespaceTree,
                           weights: dict | None = None) -> list[tuple]:
    """Per-request (op, depth, hit, recirculations, cross-pipe redirects)."""
    if not config.caching:
        raise ConfigError("recirculations are only defined for the caching scheme")
    _, sim = simulate(config, trace, tree, weights, record_requests=True)
    return sim.per_request


def run_dynamic(config: SimConfig, spec: WorkloadSpec, period: float, duration: float,
                k: int = 100):
    """Hot-in run: weights rotate every ``period``; returns (metrics, workload, sim).

    ``sim.cache_snapshots`` holds (time, cached paths) taken just before
    each shift and at the end of the run.
    """
    rng = np.random.default_rng(spec.seed)
    tree, files = build_namespace(spec)
    weights = assign_frequencies(files, spec.skew, spec.order, spec.exponent,
                                 spec.eighty_twenty, rng)
    dyn = DynamicWorkload(spec, weights, period, duration, k, rng)
    cfg = config.replace(duration=0.0)
    sim = Simulation(cfg, tree, dyn, weights)
    sim.cache_snapshots = []
    if cfg.caching:
        if cfg.preload:
            sim.do_preload(hottest(weights, cfg.preload))

        def snap():
            sim.cache_snapshots.append((sim.engine.now, frozenset(sim.state.slot_of)))

        t = period
        while t <= duration + 1e-12:
            sim.engine.at(t * (1 - 1e-9), snap, daemon=True)
            t += period
    sim.start()
    m = sim.run()
    return m, dyn, sim


# ----------------------------------------------------------------------
# experiment presets

@dataclass
class PresetRun:
    label: str
    config: SimConfig
    spec: WorkloadSpec
    dynamic: dict | None = None


PRESETS = ("exp1", "exp3", "exp5", "exp6", "exp7", "exp8")


def preset(name: str, n_files: int = 100_000, length: int = 1_000_000, seed: int = 0,
           base: SimConfig | None = None, time_scale: float = 0.01) -> list[PresetRun]:
    """Scaled-down experiment matrix.  ``time_scale`` shrinks the hot-in
    run (period, duration, pull period) so it fits a desk-side budget."""
    base = base or SimConfig(seed=seed)
    runs: list[PresetRun] = []
    schemes = ("nocache", "fletch")

    def spec(**kw):
        kw.setdefault("n_files", n_files)
        kw.setdefault("length", length)
        kw.setdefault("seed", seed)
        kw.setdefault("n_clients", base.n_clients)
        return WorkloadSpec(**kw)

    if name == "exp1":
        for wl in ("alibaba", "training", "thumb", "linkedin"):
            for n in (4, 16):
                for sch in schemes:
                    runs.append(PresetRun(f"{wl}/{n}srv/{sch}",
                                          base.replace(scheme=sch, n_servers=n), spec(name=wl)))
    elif name == "exp3":
        for r in (0, 25, 50, 75, 100):
            for sch in schemes:
                runs.append(PresetRun(f"chmod{r}/{sch}", base.replace(scheme=sch),
                                      spec(name="custom", mix=chmod_mix(r / 100))))
    elif name == "exp5":
        for order in ("hlf", "llf", "random"):
            for wl in ("training", "thumb"):
                for sch in schemes:
                    runs.append(PresetRun(f"{wl}/{order}/{sch}", base.replace(scheme=sch),
                                          spec(name=wl, order=order)))
    elif name == "exp6":
        for skew in ("uniform", 0.8, 0.9, 1.0):
            for wl in ("training", "thumb"):
                for sch in schemes:
                    kw = {"skew": "uniform"} if skew == "uniform" else {"exponent": skew}
                    runs.append(PresetRun(f"{wl}/{skew}/{sch}", base.replace(scheme=sch),
                                          spec(name=wl, **kw)))
    elif name == "exp7":
        for depth in (3, 5, 7, 9):
            for wl in ("training", "thumb"):
                for sch in schemes:
                    runs.append(PresetRun(f"{wl}/depth{depth}/{sch}", base.replace(scheme=sch),
                                          spec(name=wl, max_depth=depth)))
    elif name == "exp8":
        period = 20.0 * time_scale
        duration = 200.0 * time_scale
        for wl in ("training", "thumb", "linkedin"):
            for sch in schemes:
                cfg = base.replace(scheme=sch, n_servers=2, pull_period=2.0 * time_scale,
                                   series_bin=1.0 * time_scale)
                runs.append(PresetRun(f"{wl}/hotin/{sch}", cfg,
                                      spec(name=wl, hot_in_period=period),
                                      {"period": period, "duration": duration, "k": 100}))
    else:
        raise UnknownPreset(name)
    return runs


def execute(run_: PresetRun):
    if run_.dynamic:
        m, _, _ = run_dynamic(run_.config, run_.spec, **run_.dynamic)
        return m
    return run_spec(run_.config, run_.spec)
