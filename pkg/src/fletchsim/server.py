"""Metadata servers, file placement and the shared namespace they serve.

All servers operate on one :class:`Cluster` tree.  Directories live on every
server and files are owned by the server chosen by the consistent-hash ring,
so the shared tree is the union of the shards.  Each server still keeps its
own token map, request queue and sequence state.
"""

from __future__ import annotations

import bisect
import hashlib
from collections import deque
from functools import lru_cache

from .engine import InvariantViolation
from .hashing import INVALID_TOKEN, PathTokenMap
from .namespace import (FsError, MULTI_PATH_WRITES, MetaOp, NamespaceTree, NodeKind, OpKind,
                        Path, apply_op, is_ancestor, level_paths)
from .packets import Packet, Reply


class HashRing:
    """Consistent hashing with virtual nodes."""

    def __init__(self, n_servers: int, vnodes: int = 1000):
        if n_servers < 1:
            raise ValueError("need at least one server")
        self.n = n_servers
        points = []
        for s in range(n_servers):
            for v in range(vnodes if n_servers > 1 else 1):
                h = hashlib.md5(f"server-{s}#{v}".encode()).digest()
                points.append((int.from_bytes(h[:8], "big"), s))
        points.sort()
        self._keys = [p for p, _ in points]
        self._owners = [s for _, s in points]
        self.owner = lru_cache(maxsize=1 << 18)(self._owner)

    def _owner(self, p: Path) -> int:
        if self.n == 1:
            return 0
        h = int.from_bytes(hashlib.md5(str(p).encode()).digest()[8:16], "big")
        i = bisect.bisect(self._keys, h)
        return self._owners[i % len(self._keys)]


def place_file(p: Path, n_servers: int, _rings: dict = {}) -> int:
    ring = _rings.get(n_servers)
    if ring is None:
        ring = _rings[n_servers] = HashRing(n_servers)
    return ring.owner(p)


class Cluster:
    """State shared by all servers: the namespace, per-path versions, the
    admission block registry and the optional history recorder."""

    def __init__(self, tree: NamespaceTree, n_servers: int, recorder=None):
        self.tree = tree
        self.ring = HashRing(n_servers)
        self.servers: list[Server] = []
        self.version: dict[Path, int] = {}
        self._clock = 0
        self.blocked: dict[Path, int] = {}
        self.cached: dict[Path, int] = {}
        self.recorder = recorder

    def owner(self, p: Path) -> int:
        return self.ring.owner(p)

    def token_of(self, p: Path) -> int:
        """Token the owning server holds for ``p`` (0 when uncached)."""
        return self.cached.get(p, INVALID_TOKEN)

    def cached_descendants(self, p: Path) -> list[tuple[Path, int]]:
        """Cached strict descendants of ``p``, deepest first."""
        out = [(q, t) for q, t in self.cached.items() if is_ancestor(p, q)]
        out.sort(key=lambda e: (-len(e[0]), e[0]))
        return out

    def is_blocked(self, op: MetaOp) -> bool:
        if not self.blocked:
            return False
        b = self.blocked
        if op.target in b or (op.dst is not None and op.dst in b):
            return True
        if op.kind in MULTI_PATH_WRITES:
            return any(is_ancestor(op.target, q) for q in b)
        return False

    def block(self, paths) -> None:
        for p in paths:
            self.blocked[p] = self.blocked.get(p, 0) + 1

    def unblock(self, paths) -> None:
        for p in paths:
            n = self.blocked.get(p, 0) - 1
            if n <= 0:
                self.blocked.pop(p, None)
            else:
                self.blocked[p] = n
        for srv in self.servers:
            srv.release_parked()

    def apply(self, op: MetaOp, who, now: float):
        """Run ``op`` on the tree and bump versions of every changed path."""
        rec = self.recorder
        olds = None
        if rec is not None and not op.is_read:
            cand = [op.target] + ([op.dst] if op.dst is not None else [])
            if op.kind in MULTI_PATH_WRITES and op.target in self.tree:
                cand.extend(self.tree.descendants(op.target))
            olds = {q: self.tree.raw(q) for q in cand}
        res = apply_op(self.tree, op, who, int(now))
        for q in res.changed:
            self._clock += 1
            self.version[q] = self._clock
            if rec is not None:
                rec.record_change(q, now, self._clock, self.tree.raw(q), olds.get(q) if olds else None)
        return res

    def current(self, p: Path):
        return self.tree.raw(p), self.version.get(p, 0)


class Server:
    """One metadata server actor."""

    def __init__(self, sid: int, cluster: Cluster, net, service_time: float = 1e-5,
                 caching: bool = True, token_cost: float = 0.0, update_cost: float = 0.0,
                 rto: float = 1e-5, retransmit: bool = True):
        self.sid = sid
        self.cluster = cluster
        self.net = net
        self.service_time = service_time
        self.caching = caching
        self.token_cost = token_cost
        self.update_cost = update_cost
        self.rto = rto
        self.retransmit = retransmit
        self.tokens = PathTokenMap(ttl=None)
        self.seq = 0
        self.outstanding: Reply | None = None
        self.outq: deque[Reply] = deque()
        self.queue: deque[Packet] = deque()
        self.busy = False
        self._out: list = []
        self.parked: list[Packet] = []
        self.done_writes: dict[tuple[int, int], tuple[str, object]] = {}
        self.stats = {"served": 0, "busy_time": 0.0, "lock_replies": 0, "retransmits": 0,
                      "retry_replies": 0, "updates_sent": 0, "parked": 0, "dedup": 0}

    # request path ----------------------------------------------------------
    def handle_request(self, pkt: Packet) -> None:
        self.queue.append(pkt)
        if not self.busy:
            self._next()

    on_request = handle_request

    def _next(self) -> None:
        eng = self.net.engine
        while self.queue:
            pkt = self.queue.popleft()
            self._out = []
            cost = self._execute(pkt)
            if cost is None:
                continue
            self.busy = True
            self.stats["busy_time"] += cost
            eng.after(cost, self._done, self._out)
            return
        self.busy = False

    def _done(self, out) -> None:
        for reply, lock_related in out:
            self._send(reply, lock_related)
        self.busy = False
        self._next()

    def release_parked(self) -> None:
        if not self.parked:
            return
        still = []
        for pkt in self.parked:
            if self.cluster.is_blocked(pkt.op):
                still.append(pkt)
            else:
                self.queue.append(pkt)
        self.parked = still
        if not self.busy and self.queue:
            self._next()

    def _token_list(self, paths) -> list[tuple[Path, int]]:
        toks = self.tokens.entries
        out = []
        for q in paths:
            e = toks.get(q)
            out.append((q, e[0] if e is not None else INVALID_TOKEN))
        return out

    def _releases(self, pkt: Packet) -> list:
        out = []
        for path, k, t, slot, gen in pkt.inval:
            rec, ver = self.cluster.current(path)
            out.append((path, k, t, slot, gen, rec, ver))
        return out

    def _execute(self, pkt: Packet):
        """Serve one request; returns its service time or None if parked."""
        eng = self.net.engine
        now = eng.now
        op = pkt.op
        cl = self.cluster
        base = self.service_time
        if pkt.is_read:
            try:
                res = cl.apply(op, pkt.principal, now)
                status, record, entries = "ok", res.record, res.entries
            except FsError as e:
                status, record, entries = e.code, None, None
            version = cl.version.get(op.target, 0)
            reply = Reply("resp", self.sid, pkt, status, record, entries,
                          self._token_list(level_paths(op.target)[1:]) if self.caching else (),
                          served_at=now, version=version)
            self.stats["served"] += 1
            self._out.append((reply, bool(pkt.held)))
            return base * (1.0 + self.token_cost) if self.caching else base

        key = (pkt.client, pkt.req_id)
        done = self.done_writes.get(key)
        if done is not None:
            self.stats["dedup"] += 1
            status, record = done
            reply = Reply("resp", self.sid, pkt, status, record,
                          tokens=self._write_tokens(op), release=self._releases(pkt),
                          served_at=now)
            self._out.append((reply, bool(pkt.inval)))
            return base
        if cl.is_blocked(op):
            self.stats["parked"] += 1
            self.parked.append(pkt)
            return None
        if self.caching:
            invalidated = {e[0] for e in pkt.inval}
            for q in (op.target, op.dst):
                if q is None or not len(q):
                    continue
                if cl.token_of(q) != INVALID_TOKEN and q not in invalidated:
                    self.stats["retry_replies"] += 1
                    reply = Reply("retry", self.sid, pkt, "retry",
                                  tokens=self._write_tokens(op), release=self._releases(pkt),
                                  served_at=now)
                    self._out.append((reply, True))
                    return base * (1.0 + self.token_cost)
        try:
            res = cl.apply(op, pkt.principal, now)
            status, record = "ok", res.record
        except FsError as e:
            status, record, res = e.code, None, None
        self.done_writes[key] = (status, record)
        self.stats["served"] += 1
        cost = base
        if self.caching:
            cost *= 1.0 + self.token_cost
            if res is not None and op.kind in MULTI_PATH_WRITES:
                for q, tok in cl.cached_descendants(op.target):
                    rec, ver = cl.current(q)
                    upd = Reply("update", self.sid, None, update=(q, self._key(q), tok, rec, ver),
                                served_at=now)
                    upd.path = q
                    self.stats["updates_sent"] += 1
                    self._out.append((upd, True))
                    cost += base * self.update_cost
            if pkt.inval and res is not None:
                cost += base * self.update_cost * len(pkt.inval)
        reply = Reply("resp", self.sid, pkt, status, record, tokens=self._write_tokens(op)
                      if self.caching else (), release=self._releases(pkt), served_at=now,
                      version=cl.version.get(op.target, 0))
        self._out.append((reply, bool(pkt.inval)))
        return cost

    def _key(self, q: Path) -> int:
        return self.net.hasher(q)

    def _write_tokens(self, op: MetaOp):
        cl = self.cluster
        out = [(op.target, cl.token_of(op.target))]
        if op.dst is not None:
            out.append((op.dst, cl.token_of(op.dst)))
        return out

    # sequence protocol -----------------------------------------------------
    def _send(self, reply: Reply, lock_related: bool) -> None:
        if not lock_related:
            self.net.server_to_switch(reply)
            return
        self.stats["lock_replies"] += 1
        self.outq.append(reply)
        if self.outstanding is None:
            self._send_next()

    def _send_next(self) -> None:
        if not self.outq:
            return
        reply = self.outq.popleft()
        reply.seq = self.seq
        self.outstanding = reply
        self.net.server_to_switch(reply)
        if self.retransmit:
            self.net.engine.after(self.rto, self._timeout, reply, reply.seq)

    def _timeout(self, reply: Reply, seq: int) -> None:
        if self.outstanding is reply and reply.seq == seq:
            self.stats["retransmits"] += 1
            self.net.server_to_switch(reply)
            self.net.engine.after(self.rto, self._timeout, reply, seq)

    def on_ack(self, seq: int) -> None:
        out = self.outstanding
        if out is None or out.seq != seq:
            return
        self.outstanding = None
        self.seq = (self.seq + 1) & 0xFF
        self._send_next()

    # control plane ---------------------------------------------------------
    def on_fetch(self, paths) -> dict:
        """Block writes to ``paths`` and return their (record, version); a
        path that does not exist maps to None."""
        cl = self.cluster
        cl.block(paths)
        out = {}
        for p in paths:
            rec = cl.tree.get(p)
            out[p] = None if rec is None else (rec, cl.version.get(p, 0))
        return out

    def on_grant(self, path_tokens) -> None:
        now = self.net.engine.now
        cl = self.cluster
        for p, tok in path_tokens:
            self.tokens.learn(p, tok, now)
            if cl.owner(p) == self.sid:
                cl.cached[p] = tok

    def on_evict(self, paths) -> None:
        cl = self.cluster
        for p in paths:
            self.tokens.forget(p)
            if cl.owner(p) == self.sid:
                cl.cached.pop(p, None)

    def export_shard(self) -> list[str]:
        tree = self.cluster.tree
        mine = [p for p in tree.paths()
                if tree.get(p).kind == NodeKind.DIRECTORY or self.cluster.owner(p) == self.sid]
        return tree.export_lines(mine)

    def check_quiescent(self) -> list[str]:
        problems = []
        if self.outstanding is not None or self.outq:
            problems.append(f"server {self.sid} has unacknowledged lock-related replies")
        if self.parked:
            problems.append(f"server {self.sid} still has {len(self.parked)} parked writes")
        return problems
