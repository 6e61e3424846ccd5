"""Run-time and end-of-run invariant checks."""

from __future__ import annotations

import bisect

from .namespace import ROOT, MetadataRecord, Path, levels_of


class HistoryRecorder:
    """Per-path version history on the server side.

    Version ``v`` of a path is current over ``[t_v, t_next)``.  A path that
    never changed is current from time 0 with version 0.
    """

    def __init__(self, tree):
        self.tree = tree
        self.times: dict[Path, list[float]] = {}
        self.versions: dict[Path, list[int]] = {}
        self.records: dict[Path, list] = {}

    def record_change(self, path: Path, time: float, version: int, new_raw, old_raw) -> None:
        if path not in self.times:
            self.times[path] = [0.0]
            self.versions[path] = [0]
            self.records[path] = [old_raw]
        self.times[path].append(time)
        self.versions[path].append(version)
        self.records[path].append(new_raw)

    def _interval(self, path: Path, i: int) -> tuple[float, float]:
        ts = self.times[path]
        return ts[i], ts[i + 1] if i + 1 < len(ts) else float("inf")

    def record_valid_between(self, path: Path, rec: MetadataRecord, t0: float, t1: float) -> bool:
        """Was ``rec`` the server's record for ``path`` at some instant in
        ``[t0, t1]``?"""
        if path not in self.times:
            return self.tree.raw(path) == rec
        ts = self.times[path]
        recs = self.records[path]
        # versions whose interval overlaps [t0, t1]
        lo = max(0, bisect.bisect_right(ts, t0) - 1)
        hi = bisect.bisect_right(ts, t1)
        return any(recs[i] == rec for i in range(lo, hi))

    def version_interval(self, path: Path, version: int) -> tuple[float, float] | None:
        if path not in self.versions:
            return (0.0, float("inf")) if version == 0 else None
        vs = self.versions[path]
        try:
            i = vs.index(version)
        except ValueError:
            return None
        return self._interval(path, i)

    def consistent_snapshot(self, observed, t0: float, t1: float) -> bool:
        """Were all observed (path, version) pairs current together at some
        instant in ``[t0, t1]``?"""
        lo, hi = t0, t1
        strict_hi = False
        for path, version in observed:
            iv = self.version_interval(path, version)
            if iv is None:
                return False
            s, e = iv
            lo = max(lo, s)
            if e <= hi:
                hi = e
                strict_hi = True
        return lo < hi if strict_hi else lo <= hi


def lock_balance(switch) -> list[str]:
    return [f"lock array {a} slot {s} = {v} at quiescence" for a, s, v in switch.nonzero_locks()]


def write_through(switch, cluster) -> list[str]:
    """Every valid cached slot matches the server record byte-for-byte."""
    out = []
    for slot, path, rec, valid in switch.cached_entries():
        if not valid:
            continue
        srv = cluster.tree.raw(path)
        if srv is None or srv.pack() != switch.decode_registers(slot).pack():
            out.append(f"write-through mismatch at {path} (slot {slot})")
        elif rec != srv:
            out.append(f"decoded register cache stale at {path}")
    return out


def invalid_slots(switch) -> list[str]:
    return [f"slot {s} ({p}) still invalid at quiescence"
            for s, p, _, v in switch.cached_entries() if not v]


def closure(state) -> list[str]:
    return state.check()


def mirror(state, switch) -> list[str]:
    """Controller's cached set equals the switch's installed entries."""
    out = []
    sw = {p for _, p, _, _ in switch.cached_entries()}
    ctl = set(state.slot_of)
    for p in sorted(ctl - sw, key=str):
        out.append(f"controller lists {p} but switch does not")
    for p in sorted(sw - ctl, key=str):
        out.append(f"switch holds {p} unknown to controller")
    for p, s in state.slot_of.items():
        if switch.slot_path[s] != p:
            out.append(f"slot mismatch for {p}")
    return out


def token_uniqueness(state, switch) -> list[str]:
    out = list(state.tokens.check())
    seen: dict = {}
    for (k, t), slot in switch.mat.items():
        if t == 0:
            out.append(f"token 0 installed at slot {slot}")
        if (k, t) in seen:
            out.append(f"duplicate (key, token) {k:#x},{t}")
        seen[(k, t)] = slot
    return out


def sequence_agreement(switch, servers) -> list[str]:
    out = []
    for srv in servers:
        if switch.expected[srv.sid] != srv.seq:
            out.append(f"server {srv.sid} seq {srv.seq} != switch expected {switch.expected[srv.sid]}")
        if switch.inprog[srv.sid]:
            out.append(f"server {srv.sid} has updates in progress at quiescence")
    return out


def quiescence(servers) -> list[str]:
    out = []
    for srv in servers:
        out.extend(srv.check_quiescent())
    return out


def path_closure_of(paths) -> list[str]:
    s = set(paths)
    return [f"{p} cached without ancestor {q}" for p in s for q in levels_of(p)[:-1]
            if q != ROOT and q not in s]
