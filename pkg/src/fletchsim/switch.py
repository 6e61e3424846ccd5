"""Programmable-switch data plane: cache table, lock counters, validation
flags, count-min sketch and the per-server sequence protocol.

Every handler below models one pass through the pipeline.  A handler that
needs another pass returns the next handler; the caller schedules it one
traversal time later and counts a recirculation.
"""

from __future__ import annotations

import struct
from array import array

from .engine import InvariantViolation
from .hashing import HashTokenMap, INVALID_TOKEN
from .namespace import (MULTI_PATH_READS, MetadataRecord, NodeKind, OpKind, Path,
                        READ, TRAVERSE, permission_check)
from .packets import Packet, Reply, Response

N_VALUE_ARRAYS = 32
N_LOCK_ARRAYS = 8
LOCK_SLOTS = 1 << 16
COUNTER_MAX = 0xFFFF
CMS_ROWS = 3
CMS_WIDTH = 1 << 16
FREQ_MAX = 0xFFFFFFFF
_CMS_SEEDS = (0x9E3779B97F4A7C15, 0xC2B2AE3D27D4EB4F, 0x165667B19E3779F9)
_M64 = (1 << 64) - 1


class SlotOccupied(Exception):
    pass


class UnknownEntry(Exception):
    pass


def lock_index(level: int, keys, single: bool = False) -> tuple[int, int]:
    """Lock counter (array 1..8, slot) for ``level`` of a path whose
    per-level keys are ``keys`` (``keys[0]`` is the root)."""
    if level < 1:
        raise ValueError("root has no lock counter")
    if single:
        return 1, keys[1] & 0xFFFF
    a = level if level < N_LOCK_ARRAYS else N_LOCK_ARRAYS
    return a, keys[a] & 0xFFFF


def read_locks(keys, depth: int, single: bool = False) -> list[tuple[int, int]]:
    """0-based (array, slot) for levels 1..depth."""
    out = []
    for lvl in range(1, depth + 1):
        a, s = lock_index(lvl, keys, single)
        out.append((a - 1, s))
    return out


def _mix64(x: int) -> int:
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _M64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _M64
    return x ^ (x >> 31)


class CountMinSketch:
    """3 x 64K saturating 16-bit counters."""

    def __init__(self, rows: int = CMS_ROWS, width: int = CMS_WIDTH):
        self.rows = [array("H", bytes(2 * width)) for _ in range(rows)]
        self.width = width
        self._mask = width - 1
        self._seeds = _CMS_SEEDS[:rows]

    def _slots(self, key: int):
        m = self._mask
        return [_mix64(key ^ s) & m for s in self._seeds]

    def add(self, key: int) -> int:
        est = COUNTER_MAX
        for row, i in zip(self.rows, self._slots(key)):
            v = row[i]
            if v < COUNTER_MAX:
                v += 1
                row[i] = v
            if v < est:
                est = v
        return est

    def estimate(self, key: int) -> int:
        return min(row[i] for row, i in zip(self.rows, self._slots(key)))

    def reset(self) -> None:
        for row in self.rows:
            row[:] = array("H", bytes(2 * self.width))


def seq_is_older(seq: int, expected: int) -> bool:
    """``seq`` lies in the half window just below ``expected`` (mod 256)."""
    return 1 <= ((expected - seq) & 0xFF) < 128


class Switch:
    """State and per-traversal packet processing.

    ``net`` provides the engine plus the outbound links; see
    :class:`fletchsim.sim.Simulation`.  Without ``net`` the switch can still
    be driven directly through :meth:`install`, :meth:`evict` and friends.
    """

    def __init__(self, capacity: int = 8192, n_servers: int = 1, cms_threshold: int = 10,
                 lock_mode: str = "multi", root_record: MetadataRecord | None = None,
                 traversal_time: float = 0.5e-6, n_pipes: int = 2, fidelity: bool = False,
                 starvation_limit: int = 10_000, net=None, trace_events: bool = False):
        if lock_mode not in ("multi", "single"):
            raise ValueError(f"unknown lock mode {lock_mode!r}")
        self.capacity = capacity
        self.single = lock_mode == "single"
        self.threshold = cms_threshold
        self.tau = traversal_time
        self.n_pipes = max(1, n_pipes)
        self.fidelity = fidelity
        self.starvation_limit = starvation_limit
        self.net = net
        self.root_record = root_record or MetadataRecord(NodeKind.DIRECTORY, 0o755)

        self.values = [array("I", bytes(4 * capacity)) for _ in range(N_VALUE_ARRAYS)]
        self._decoded: list[MetadataRecord | None] = [None] * capacity
        self.version = [0] * capacity
        self.valid = array("B", bytes(capacity))
        self.freq = array("I", bytes(4 * capacity))
        self.pending = [0] * capacity
        self.gen = [0] * capacity
        self.slot_kt: list[tuple[int, int] | None] = [None] * capacity
        self.slot_path: list[Path | None] = [None] * capacity
        self.slot_lock: list[tuple[int, int] | None] = [None] * capacity
        self.mat = HashTokenMap()
        self.locks = [array("H", bytes(2 * LOCK_SLOTS)) for _ in range(N_LOCK_ARRAYS)]
        self.cms = CountMinSketch()
        self.expected = array("B", bytes(max(1, n_servers)))
        self.inprog = [0] * max(1, n_servers)
        self.pending_reports: set[Path] = set()
        # deepest path ever installed: bounds how many passes an in-switch read can take
        self.max_depth = 0

        self.stats = {"traversals": 0, "recirculations": 0, "redirects": 0, "hits": 0,
                      "misses": 0, "forwarded": 0, "hot_reports": 0, "dup_replies": 0,
                      "stale_replies": 0, "starvation_warnings": 0, "retries": 0,
                      "updates_applied": 0, "updates_dropped": 0}
        self.trace_events = trace_events
        self.event_log: list[str] = []
        self._touched: set | None = None
        self.fidelity_violations: list[str] = []

    # ------------------------------------------------------------------
    # register helpers
    def _touch(self, name) -> None:
        t = self._touched
        if t is None:
            return
        if name in t:
            self.fidelity_violations.append(f"array {name} accessed twice in one traversal")
        t.add(name)

    def _apply_locks(self, deltas) -> None:
        """Apply aggregated (array, slot, delta) lock updates."""
        agg: dict = {}
        for a, s, dl in deltas:
            k = (a, s)
            agg[k] = agg.get(k, 0) + dl
        if self._touched is not None:
            seen: dict = {}
            for a, s in agg:
                if a in seen:
                    self.fidelity_violations.append(f"lock array {a + 1} accessed at two slots")
                seen[a] = s
            for a in seen:
                self._touch(("lock", a))
        locks = self.locks
        for (a, s), dl in agg.items():
            v = locks[a][s] + dl
            if v < 0:
                raise InvariantViolation(f"lock counter underflow at array {a + 1} slot {s}")
            if v > COUNTER_MAX:
                raise InvariantViolation(f"lock counter overflow at array {a + 1} slot {s}")
            locks[a][s] = v

    def _write_value(self, slot: int, rec: MetadataRecord, version: int) -> None:
        raw = rec.pack()
        words = struct.unpack(f">{len(raw) // 4}I", raw)
        for i, w in enumerate(words):
            self.values[i][slot] = w
        self._decoded[slot] = rec
        self.version[slot] = version

    def read_value(self, slot: int) -> MetadataRecord:
        rec = self._decoded[slot]
        if rec is None:
            rec = self.decode_registers(slot)
            self._decoded[slot] = rec
        return rec

    def decode_registers(self, slot: int) -> MetadataRecord:
        w0 = self.values[0][slot]
        n = 10 if (w0 >> 24) == NodeKind.FILE else 6
        raw = struct.pack(f">{n}I", *(self.values[i][slot] for i in range(n)))
        return MetadataRecord.unpack(raw)

    def lock_value(self, array_no: int, slot: int) -> int:
        return self.locks[array_no - 1][slot]

    def nonzero_locks(self) -> list[tuple[int, int, int]]:
        out = []
        for a, arr in enumerate(self.locks):
            if any(arr):
                out.extend((a + 1, i, v) for i, v in enumerate(arr) if v)
        return out

    # ------------------------------------------------------------------
    # lookups
    def cache_lookup(self, key: int, token: int) -> int | None:
        return self.mat.lookup(key, token)

    def cms_update_and_check(self, key: int, path: Path) -> Path | None:
        est = self.cms.add(key)
        if est > self.threshold and path not in self.pending_reports:
            self.pending_reports.add(path)
            self.stats["hot_reports"] += 1
            return path
        return None

    # ------------------------------------------------------------------
    # control plane
    def install(self, key: int, token: int, slot: int, record: MetadataRecord, path: Path,
                lock: tuple[int, int], version: int = 0) -> None:
        if not 0 <= slot < self.capacity:
            raise SlotOccupied(f"slot {slot} out of range")
        if self.slot_kt[slot] is not None:
            raise SlotOccupied(f"slot {slot} in use by {self.slot_path[slot]}")
        self.mat.insert(key, token, slot)
        self.slot_kt[slot] = (key, token)
        self.slot_path[slot] = path
        self.max_depth = max(self.max_depth, len(path))
        self.slot_lock[slot] = (lock[0] - 1, lock[1])
        self.gen[slot] += 1
        self.pending[slot] = 0
        self._write_value(slot, record, version)
        self.freq[slot] = 0
        self.valid[slot] = 1

    def evict(self, key: int, token: int) -> int:
        try:
            slot = self.mat.remove(key, token)
        except KeyError:
            raise UnknownEntry(f"({key:#x}, {token}) not cached") from None
        self.slot_kt[slot] = None
        self.slot_path[slot] = None
        self.slot_lock[slot] = None
        self.valid[slot] = 0
        self.pending[slot] = 0
        self.gen[slot] += 1
        self._decoded[slot] = None
        return slot

    def pull_frequencies(self, slots=None) -> dict[int, int]:
        if slots is None:
            slots = [s for s in range(self.capacity) if self.slot_kt[s] is not None]
        return {s: self.freq[s] for s in slots}

    def reset_sketch(self) -> None:
        self.cms.reset()
        f = self.freq
        f[:] = array("I", bytes(4 * self.capacity))
        self.pending_reports.clear()

    def ack_report(self, path: Path) -> None:
        self.pending_reports.discard(path)

    def controller_apply(self, update: tuple):
        kind = update[0]
        if kind == "admit":
            for key, token, slot, record, path, lock, version in update[1]:
                self.install(key, token, slot, record, path, lock, version)
            return None
        if kind == "evict":
            return [self.evict(k, t) for k, t in update[1]]
        if kind == "pull_frequencies":
            return self.pull_frequencies(update[1] if len(update) > 1 else None)
        if kind == "reset_sketch":
            self.reset_sketch()
            return None
        raise ValueError(f"unknown control update {kind!r}")

    def cached_entries(self):
        """(slot, path, record, valid) for every installed slot."""
        for s in range(self.capacity):
            if self.slot_kt[s] is not None:
                yield s, self.slot_path[s], self.read_value(s), self.valid[s]

    # ------------------------------------------------------------------
    # traversal driver
    def _drive(self, step, obj) -> None:
        net = self.net
        eng = net.engine
        tau = self.tau
        stats = self.stats
        while True:
            stats["traversals"] += 1
            if self.fidelity:
                self._touched = set()
            if self.trace_events:
                self._log_traversal(step, obj)
            step = step(obj)
            self._touched = None
            if step is None:
                return
            t = eng.now + tau
            if eng.next_time() > t:
                eng.advance_to(t)
                continue
            eng.at(t, self._drive, step, obj)
            return

    def _log_traversal(self, step, obj) -> None:
        eng = self.net.engine
        if isinstance(obj, Packet):
            self.event_log.append(f"{eng.now:.9f}\t{obj.pid}\t{obj.op.kind}\t{obj.cursor}\t{step.__name__}")
        else:
            self.event_log.append(f"{eng.now:.9f}\treply:{obj.server}:{obj.seq}\t{obj.kind}\t{obj.cursor}\t{step.__name__}")

    def _recirc(self, pkt: Packet) -> None:
        pkt.recirc += 1
        self.stats["recirculations"] += 1

    # ------------------------------------------------------------------
    # client requests
    def on_request(self, pkt: Packet) -> None:
        """Packet arrives at an ingress pipeline."""
        pkt.arrived_at = self.net.engine.now
        if pkt.client % self.n_pipes != 0:
            pkt.redirects += 1
            self.stats["redirects"] += 1
            self.net.engine.after(self.tau, self._drive, self._first, pkt)
        else:
            self._drive(self._first, pkt)

    def _first(self, pkt: Packet):
        if pkt.is_read:
            return self.process_read(pkt)
        return self.process_write(pkt)

    def _forward(self, pkt: Packet) -> None:
        self.stats["forwarded"] += 1
        self.net.switch_to_server(pkt)

    def _respond(self, pkt: Packet, status: str, record=None, hit=False, version=None,
                 served_path=None) -> None:
        self.net.switch_to_client(Response(pkt, status, record, hit=hit, version=version,
                                           served_path=served_path))

    # reads -------------------------------------------------------------
    def process_read(self, pkt: Packet):
        op = pkt.op
        p = op.target
        d = len(p)
        if op.kind in MULTI_PATH_READS:
            self._forward(pkt)
            return None
        who = pkt.principal
        if d == 0:
            err = _target_error(self.root_record, who, op.kind)
            self.stats["hits"] += 1
            self._respond(pkt, err or "ok", None if err else self.root_record, hit=True,
                          version=0, served_path=p)
            return None
        if self.fidelity:
            self._touch("mat")
        slot = self.mat.lookup(pkt.keys[d], pkt.tokens[d])
        if slot is None:
            self.stats["misses"] += 1
            if self.fidelity:
                for r in range(CMS_ROWS):
                    self._touch(("cms", r))
            hot = self.cms_update_and_check(pkt.keys[d], p)
            if hot is not None:
                self.net.report_hot(hot)
            self._forward(pkt)
            return None
        locks = read_locks(pkt.keys, d, self.single)
        pkt.locks = locks
        self._apply_locks([(a, s, 1) for a, s in locks])
        pkt.cursor = 1
        if self.net.observe:
            pkt.observed = []
        if not permission_check(self.root_record, who, TRAVERSE):
            self._apply_locks([(a, s, -1) for a, s in locks])
            self._respond(pkt, "PermissionDenied")
            return None
        return self._resolve(pkt, True)

    def _resolve(self, pkt: Packet, first: bool = False):
        lvl = pkt.cursor
        d = len(pkt.op.target)
        locks = pkt.locks
        dec = [] if first else [(locks[lvl - 2][0], locks[lvl - 2][1], -1)]
        slot = self.mat.lookup(pkt.keys[lvl], pkt.tokens[lvl])
        if slot is None or not self.valid[slot]:
            if self.fidelity and slot is not None:
                self._touch("valid")
            if dec:
                self._apply_locks(dec)
            pkt.held = locks[lvl - 1:]
            pkt.observed = None
            self._forward(pkt)
            return None
        if self.fidelity:
            self._touch("valid")
            self._touch("value")
        rec = self.read_value(slot)
        if pkt.observed is not None:
            pkt.observed.append((self.slot_path[slot], self.version[slot]))
        who = pkt.principal
        if rec.deleted:
            err = "NotFound"
        elif lvl < d:
            if rec.kind != NodeKind.DIRECTORY:
                err = "NotADirectory"
            elif not permission_check(rec, who, TRAVERSE):
                err = "PermissionDenied"
            else:
                err = None
        else:
            err = _target_error(rec, who, pkt.op.kind)
        if err is not None:
            dec.extend((a, s, -1) for a, s in locks[lvl - 1:])
            self._apply_locks(dec)
            self._respond(pkt, err, served_path=self.slot_path[slot] if lvl == d else None)
            return None
        if lvl == d:
            if self.fidelity:
                self._touch("freq")
            if self.freq[slot] < FREQ_MAX:
                self.freq[slot] += 1
            dec.append((locks[d - 1][0], locks[d - 1][1], -1))
            self._apply_locks(dec)
            self.stats["hits"] += 1
            self._respond(pkt, "ok", rec, hit=True, version=self.version[slot],
                          served_path=self.slot_path[slot])
            return None
        if dec:
            self._apply_locks(dec)
        pkt.cursor = lvl + 1
        self._recirc(pkt)
        return self._resolve

    # writes ------------------------------------------------------------
    def process_write(self, pkt: Packet):
        op = pkt.op
        pkt.inval = []
        hits = []
        if self.fidelity:
            self._touch("mat")
        k, t = pkt.keys[-1], pkt.tokens[-1]
        if len(op.target) and self.mat.lookup(k, t) is not None:
            hits.append((op.target, k, t))
        if op.dst is not None and self.mat.lookup(pkt.dst_key, pkt.dst_token) is not None:
            hits.append((op.dst, pkt.dst_key, pkt.dst_token))
        if not hits:
            self.stats["misses"] += 1
            self._forward(pkt)
            return None
        self.stats["hits"] += 1
        pkt.targets = hits
        pkt.cursor = 0
        self._recirc(pkt)
        return self._write_lock

    def _write_lock(self, pkt: Packet):
        path, k, t = pkt.targets[pkt.cursor]
        slot = self.mat.lookup(k, t)
        if slot is not None:
            a, s = self.slot_lock[slot]
            if self.fidelity:
                self._touch(("lock", a))
            if self.locks[a][s]:
                self._recirc(pkt)
                if pkt.recirc > self.starvation_limit and not pkt.starved:
                    pkt.starved = True
                    self.stats["starvation_warnings"] += 1
                return self._write_lock
            if self.fidelity:
                self._touch("valid")
                self._touch("pending")
            self.valid[slot] = 0
            self.pending[slot] += 1
            pkt.inval.append((path, k, t, slot, self.gen[slot]))
        pkt.cursor += 1
        if pkt.cursor < len(pkt.targets):
            self._recirc(pkt)
            return self._write_lock
        self._forward(pkt)
        return None

    # ------------------------------------------------------------------
    # server replies
    def handle_server_response(self, reply: Reply) -> None:
        if reply.seq is None:
            self._deliver(reply)
            return
        s = reply.server
        exp = self.expected[s]
        if reply.seq == exp:
            self.expected[s] = (exp + 1) & 0xFF
            self.net.ack_to_server(s, reply.seq)
            if reply.kind == "update":
                self.inprog[s] += 1
            self._drive(self._apply_reply, reply)
        elif seq_is_older(reply.seq, exp):
            self.stats["dup_replies"] += 1
            self.net.ack_to_server(s, reply.seq)
        else:
            self.stats["stale_replies"] += 1

    on_reply = handle_server_response

    def _deliver(self, reply: Reply) -> None:
        pkt = reply.pkt
        self.net.switch_to_client(Response(pkt, reply.status, reply.record, reply.entries,
                                           reply.tokens, hit=False, version=reply.version,
                                           served_path=pkt.op.target))

    def _release(self, entry) -> None:
        path, k, t, slot, gen, rec, ver = entry
        if self.gen[slot] != gen or self.slot_kt[slot] != (k, t):
            return
        if self.fidelity:
            self._touch("pending")
            self._touch("valid")
        if rec is not None and ver > self.version[slot]:
            if self.fidelity:
                self._touch("value")
            self._write_value(slot, rec, ver)
        self.pending[slot] -= 1
        if self.pending[slot] <= 0:
            self.pending[slot] = 0
            self.valid[slot] = 1

    def _apply_reply(self, reply: Reply):
        kind = reply.kind
        if kind == "update":
            return self._apply_update(reply)
        pkt = reply.pkt
        if reply.cursor == 0 and pkt.held:
            self._apply_locks([(a, s, -1) for a, s in pkt.held])
            pkt.held = ()
        rel = reply.release
        if rel:
            if self.inprog[reply.server] > 0:
                # a recursive write's descendant updates are still running
                reply.gated = True
                self._recirc(pkt)
                return self._apply_reply
            i = reply.cursor
            self._release(rel[i])
            reply.cursor = i + 1
            if reply.cursor < len(rel):
                self._recirc(pkt)
                return self._apply_reply
        reply.cursor = max(reply.cursor, 1)
        if kind == "retry":
            self.stats["retries"] += 1
            for path, tok in reply.tokens:
                if path == pkt.op.target:
                    pkt.tokens[-1] = tok
                elif path == pkt.op.dst:
                    pkt.dst_token = tok
            pkt.retries += 1
            self._recirc(pkt)
            # the request itself goes round again, not the reply
            self.net.engine.after(self.tau, self._drive, self.process_write, pkt)
            return None
        self._deliver(reply)
        return None

    def _apply_update(self, reply: Reply):
        path, k, t, rec, ver = reply.update
        slot = self.mat.lookup(k, t)
        if slot is None or self.slot_path[slot] != path:
            self.inprog[reply.server] -= 1
            self.stats["updates_dropped"] += 1
            return None
        a, s = self.slot_lock[slot]
        if self.fidelity:
            self._touch(("lock", a))
        if self.locks[a][s] and reply.cursor < self.max_depth:
            # Reads that got past the invalidated ancestor finish within one
            # pass per level; whatever still holds the counter after that is
            # a forwarded read, which never looks at this slot.
            reply.cursor += 1
            self.stats["recirculations"] += 1
            return self._apply_update
        if ver > self.version[slot]:
            if self.fidelity:
                self._touch("value")
            self._write_value(slot, rec, ver)
        self.inprog[reply.server] -= 1
        self.stats["updates_applied"] += 1
        return None


def _target_error(rec: MetadataRecord, who, kind: OpKind) -> str | None:
    if kind in (OpKind.STATDIR, OpKind.READDIR) and rec.kind != NodeKind.DIRECTORY:
        return "NotADirectory"
    if not permission_check(rec, who, READ):
        return "PermissionDenied"
    return None
