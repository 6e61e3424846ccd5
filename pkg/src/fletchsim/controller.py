"""Control plane: path-aware admission and eviction, token allocation.

The admission procedure is a generator that yields commands and receives
their results, so the same logic runs against directly-driven components
(:class:`SyncDriver`) or inside the event simulation (:class:`SimDriver`).
"""

from __future__ import annotations

from collections import deque

from .hashing import TokenAllocator, TokenSpaceExhausted, hash_read_request
from .namespace import ROOT, Path, levels_of
from .switch import lock_index


class AdmissionAborted(Exception):
    pass


class NothingEvictable(Exception):
    pass


class InsufficientSpace(Exception):
    pass


def _order_key(freq: int, p: Path):
    # lower frequency, then deeper, then lexicographic
    return (freq, -len(p), str(p))


class ControllerState:
    """Global view of the cached sub-forest plus slot and token bookkeeping."""

    def __init__(self, capacity: int, hasher, lock_mode: str = "multi"):
        if capacity < 1:
            raise ValueError("capacity must be at least 1 (the root)")
        self.capacity = capacity
        self.hasher = hasher
        self.single = lock_mode == "single"
        self.children: dict[Path, int] = {ROOT: 0}
        self.slot_of: dict[Path, int] = {}
        # slot 0.. capacity-1; the root is held as a constant and takes none
        self.free_slots = list(range(capacity - 1, -1, -1))
        self.tokens = TokenAllocator()
        self.reported: dict[Path, int] = {}
        self.log: list[str] = []
        self.threshold = 10
        self.clock = lambda: 0.0

    def note(self, action: str, detail: str) -> None:
        """Append a decision-log line: time, action, path:token:slot list."""
        self.log.append(f"{self.clock():.6f}\t{action}\t{detail}")

    @property
    def cached(self):
        return self.children.keys()

    def __contains__(self, p: Path) -> bool:
        return p in self.children

    def size(self) -> int:
        return len(self.children)

    def free(self) -> int:
        return self.capacity - len(self.children)

    def add(self, p: Path, slot: int) -> None:
        if p in self.children:
            raise ValueError(f"{p} already cached")
        if p.parent not in self.children:
            raise ValueError(f"closure violated adding {p}")
        self.children[p] = 0
        self.children[p.parent] += 1
        self.slot_of[p] = slot

    def remove(self, p: Path) -> int:
        if p == ROOT:
            raise ValueError("root is never evicted")
        if self.children.get(p):
            raise ValueError(f"{p} still has cached children")
        del self.children[p]
        self.children[p.parent] -= 1
        self.reported.pop(p, None)
        slot = self.slot_of.pop(p)
        self.free_slots.append(slot)
        return slot

    def take_slot(self) -> int:
        return self.free_slots.pop()

    def lock_for(self, p: Path) -> tuple[int, int]:
        keys = hash_read_request(p, self.hasher)
        return lock_index(len(p), keys, self.single)

    def check(self) -> list[str]:
        problems = []
        if ROOT not in self.children:
            problems.append("root not cached")
        if len(self.children) > self.capacity:
            problems.append("cache over capacity")
        counts: dict[Path, int] = {p: 0 for p in self.children}
        for p in self.children:
            if p == ROOT:
                continue
            if p.parent not in self.children:
                problems.append(f"closure broken: {p} cached without {p.parent}")
            else:
                counts[p.parent] += 1
        for p, n in counts.items():
            if self.children[p] != n:
                problems.append(f"child count drift at {p}")
        return problems


def select_eviction_candidates(state: ControllerState, need: int,
                               protected=frozenset()) -> list[Path]:
    """Pick about ``2 * need`` eviction candidates from reported frequencies."""
    if need <= 0:
        return []
    remaining = dict(state.children)
    out: list[Path] = []
    taken: set[Path] = set()
    target = 2 * need
    freq = state.reported
    while len(out) < target:
        leaves = [p for p, n in remaining.items()
                  if n == 0 and p != ROOT and p not in taken and p not in protected]
        if not leaves:
            break
        pick = min(leaves, key=lambda p: _order_key(freq.get(p, 0), p))
        out.append(pick)
        taken.add(pick)
        q = pick
        while True:
            parent = q.parent
            remaining[parent] -= 1
            if parent == ROOT or parent in protected or remaining[parent] != 0:
                break
            out.append(parent)
            taken.add(parent)
            q = parent
    if not out and len(state.children) > 1 and not protected:
        raise NothingEvictable("no evictable path")
    if not out and len(state.children) <= 1:
        raise NothingEvictable("only the root is cached")
    return out


def evict_until_space(state: ControllerState, candidates: list[Path], live: dict, need: int,
                      protected=frozenset()) -> list[Path]:
    """Choose victims among ``candidates`` by live frequency until ``need``
    slots are free.  Does not mutate ``state``; returns victims in removal
    order (descendants before ancestors)."""
    free = state.free()
    if free >= need:
        return []
    remaining = dict(state.children)
    pool = set(candidates)
    out: list[Path] = []
    gone: set[Path] = set()
    while free < need:
        ready = [p for p in pool if remaining.get(p, 1) == 0 and p not in gone]
        if not ready:
            raise InsufficientSpace(f"freed {len(out)} of {need - state.free()}")
        pick = min(ready, key=lambda p: _order_key(live.get(p, 0), p))
        chain = [pick]
        q = pick
        while True:
            parent = q.parent
            remaining[parent] -= 1
            if parent == ROOT or parent in protected or remaining[parent] != 0:
                break
            chain.append(parent)
            q = parent
        for p in chain:
            gone.add(p)
            pool.discard(p)
            remaining.pop(p, None)
            out.append(p)
            free += 1
    return out


def admission(state: ControllerState, p: Path):
    """Generator implementing admission of hot path ``p``.

    Yields ``(command, arg)`` pairs; the driver sends back the result:
      fetch: paths -> {path: (record, version) | None}   (blocks writes)
      pull_live: paths -> {path: live frequency}
      evict: paths -> None   (switch first, then servers)
      install: entries -> None
      grant: [(path, token)] -> None   (servers learn tokens, unblock)
      unblock: paths -> None
    Returns a summary dict.
    """
    if p in state:
        return {"status": "noop", "path": p}
    todo = [q for q in levels_of(p)[1:] if q not in state]
    recs = yield ("fetch", todo)
    if any(recs.get(q) is None for q in todo):
        yield ("unblock", todo)
        state.note("abort", f"{p}\tmissing")
        return {"status": "aborted", "path": p, "reason": "missing"}
    if len(todo) >= state.capacity:
        yield ("unblock", todo)
        return {"status": "aborted", "path": p, "reason": "too deep for capacity"}
    try:
        toks = {q: state.tokens.allocate(q, state.hasher(q)) for q in todo}
    except TokenSpaceExhausted:
        yield ("unblock", todo)
        state.note("abort", f"{p}\ttokens")
        return {"status": "aborted", "path": p, "reason": "tokens"}
    need = len(todo)
    evicted: list[Path] = []
    if state.free() < need:
        protected = frozenset(levels_of(p))
        try:
            cands = select_eviction_candidates(state, need, protected)
        except NothingEvictable:
            yield ("unblock", todo)
            return {"status": "aborted", "path": p, "reason": "nothing evictable"}
        live = yield ("pull_live", cands)
        try:
            evicted = evict_until_space(state, cands, live, need, protected)
        except InsufficientSpace:
            cands = select_eviction_candidates(state, state.size(), protected)
            live = yield ("pull_live", cands)
            try:
                evicted = evict_until_space(state, cands, live, need, protected)
            except InsufficientSpace:
                yield ("unblock", todo)
                return {"status": "aborted", "path": p, "reason": "no space"}
        coldest = min((live.get(q, 0) for q in evicted), default=0)
        if evicted and coldest > state.threshold:
            # every victim was hotter than the admission threshold
            state.note("inversion", f"{p}\t{coldest}")
        victims = [(q, state.hasher(q), state.tokens.token_of(q)) for q in evicted]
        yield ("evict", victims)
        state.note("evict", ",".join(f"{q}:{t}:{state.slot_of[q]}" for q, _, t in victims))
        for q in evicted:
            state.remove(q)
    entries = []
    for q in todo:
        slot = state.take_slot()
        rec, ver = recs[q]
        entries.append((state.hasher(q), toks[q], slot, rec, q, state.lock_for(q), ver))
        state.add(q, slot)
        state.reported.setdefault(q, 0)
    yield ("install", entries)
    yield ("grant", [(q, toks[q]) for q in todo])
    state.note("admit", ",".join(f"{q}:{toks[q]}:{state.slot_of[q]}" for q in todo))
    return {"status": "admitted", "path": p, "admitted": todo, "evicted": evicted}


def preload(state: ControllerState, switch, servers_grant, tree, paths) -> list[Path]:
    """Install ``paths`` (plus ancestors) directly, stopping at capacity.
    A file whose key has run out of tokens is skipped.  ``servers_grant`` is
    called with [(path, token)]."""
    added = []
    for f in paths:
        todo = [q for q in levels_of(f)[1:] if q not in state]
        if len(todo) > state.free():
            break
        for q in todo:
            rec = tree.get(q)
            if rec is None:
                break
            try:
                tok = state.tokens.allocate(q, state.hasher(q))
            except TokenSpaceExhausted:
                break
            slot = state.take_slot()
            switch.install(state.hasher(q), tok, slot, rec, q, state.lock_for(q), 0)
            state.add(q, slot)
            state.reported.setdefault(q, 0)
            added.append(q)
    servers_grant([(q, state.tokens.token_of(q)) for q in added])
    return added


class SyncDriver:
    """Runs controller commands immediately against a switch and servers."""

    def __init__(self, state: ControllerState, switch, cluster):
        self.state = state
        self.switch = switch
        self.cluster = cluster

    def _servers_for(self, p: Path):
        tree = self.cluster.tree
        rec = tree.raw(p)
        if rec is not None and rec.is_dir:
            return self.cluster.servers
        return [self.cluster.servers[self.cluster.owner(p)]]

    def execute(self, cmd: str, arg):
        sw, cl, st = self.switch, self.cluster, self.state
        if cmd == "fetch":
            out = {}
            for p in arg:
                out.update(cl.servers[cl.owner(p)].on_fetch([p]))
            return out
        if cmd == "pull_live":
            freqs = sw.pull_frequencies([st.slot_of[p] for p in arg])
            return {p: freqs[st.slot_of[p]] for p in arg}
        if cmd == "evict":
            for q, k, t in arg:
                sw.evict(k, t)
            for q, k, t in arg:
                for srv in self._servers_for(q):
                    srv.on_evict([q])
            return None
        if cmd == "install":
            for e in arg:
                sw.install(*e)
            return None
        if cmd == "grant":
            for q, tok in arg:
                for srv in self._servers_for(q):
                    srv.on_grant([(q, tok)])
            cl.unblock([q for q, _ in arg])
            return None
        if cmd == "unblock":
            cl.unblock(arg)
            return None
        raise ValueError(cmd)

    def on_hot_report(self, p: Path) -> dict:
        gen = admission(self.state, p)
        result = None
        try:
            cmd = next(gen)
            while True:
                result = self.execute(*cmd)
                cmd = gen.send(result)
        except StopIteration as stop:
            self.switch.ack_report(p)
            return stop.value

    def periodic_frequency_pull(self) -> dict:
        return periodic_frequency_pull(self.state, self.switch)


def periodic_frequency_pull(state: ControllerState, switch) -> dict:
    freqs = switch.pull_frequencies([state.slot_of[p] for p in state.slot_of])
    state.reported = {p: freqs[s] for p, s in state.slot_of.items()}
    switch.reset_sketch()
    return dict(state.reported)


class SimDriver:
    """Runs admissions inside the simulation, one at a time.

    Every command is a round trip over the control channel; fetches are
    retransmitted on timeout and give up after ``max_retries``.
    """

    def __init__(self, state: ControllerState, switch, cluster, engine, latency: float = 1e-5,
                 timeout: float = 0.01, max_retries: int = 5, loss: float = 0.0, rng=None,
                 pull_period: float = 2.0):
        self.state = state
        self.switch = switch
        self.cluster = cluster
        self.eng = engine
        self.lat = latency
        self.timeout = timeout
        self.max_retries = max_retries
        self.loss = loss
        self.rng = rng
        self.pull_period = pull_period
        self.queue: deque[Path] = deque()
        self.queued: set[Path] = set()
        self.busy = False
        self._gen = None
        self._current = None
        self._waiting = None
        self._blocked = False
        self.stats = {"admissions": 0, "admitted_paths": 0, "evictions": 0, "aborts": 0,
                      "noops": 0, "pulls": 0, "ctrl_retransmits": 0}
        self.history: list[tuple[float, str, tuple]] = []
        self.sync = SyncDriver(state, switch, cluster)

    def start_timers(self) -> None:
        if self.pull_period and self.pull_period > 0:
            self.eng.after(self.pull_period, self._pull_tick, daemon=True)

    def _pull_tick(self) -> None:
        self.stats["pulls"] += 1
        self.eng.after(self.lat, self._do_pull, daemon=True)
        self.eng.after(self.pull_period, self._pull_tick, daemon=True)

    def _do_pull(self) -> None:
        periodic_frequency_pull(self.state, self.switch)

    def _lost(self) -> bool:
        return self.loss > 0 and self.rng.random() < self.loss

    # hot reports -----------------------------------------------------------
    def on_hot_report(self, p: Path) -> None:
        if p in self.queued or p == self._current:
            return
        self.queue.append(p)
        self.queued.add(p)
        if not self.busy:
            self._start_next()

    def _start_next(self) -> None:
        while self.queue:
            p = self.queue.popleft()
            self.queued.discard(p)
            if p in self.state:
                self.stats["noops"] += 1
                self.eng.after(self.lat, self.switch.ack_report, p)
                continue
            self.busy = True
            self._current = p
            self._gen = admission(self.state, p)
            self._advance(None, first=True)
            return
        self.busy = False
        self._current = None

    def _advance(self, result, first: bool = False) -> None:
        try:
            cmd = next(self._gen) if first else self._gen.send(result)
        except StopIteration as stop:
            self._finish(stop.value)
            return
        self._dispatch(*cmd)

    def _finish(self, summary: dict) -> None:
        p = self._current
        st = summary["status"]
        if st == "admitted":
            self.stats["admissions"] += 1
            self.stats["admitted_paths"] += len(summary["admitted"])
            self.stats["evictions"] += len(summary["evicted"])
            self.history.append((self.eng.now, "admit", tuple(summary["admitted"])))
        elif st == "aborted":
            self.stats["aborts"] += 1
        else:
            self.stats["noops"] += 1
        self.eng.after(self.lat, self.switch.ack_report, p)
        self._gen = None
        self._start_next()

    def _dispatch(self, cmd: str, arg) -> None:
        lat = self.lat
        if cmd == "fetch":
            self._fetch(arg, 0)
            return
        if cmd == "pull_live":
            def pull():
                res = self.sync.execute("pull_live", arg)
                self.eng.after(lat, self._advance, res)
            self.eng.after(lat, pull)
            return
        if cmd == "evict":
            def at_switch():
                for q, k, t in arg:
                    self.switch.evict(k, t)
                self.eng.after(lat, at_controller)

            def at_controller():
                self.eng.after(lat, at_servers)

            def at_servers():
                for q, k, t in arg:
                    for srv in self.sync._servers_for(q):
                        srv.on_evict([q])
                self.eng.after(lat, self._advance, None)
            self.eng.after(lat, at_switch)
            return
        if cmd == "install":
            def install():
                for e in arg:
                    self.switch.install(*e)
                self.eng.after(lat, self._advance, None)
            self.eng.after(lat, install)
            return
        if cmd in ("grant", "unblock"):
            def deliver():
                self.sync.execute(cmd, arg)
                self.eng.after(lat, self._advance, None)
            self.eng.after(lat, deliver)
            return
        raise ValueError(cmd)

    def _fetch(self, paths, attempt: int) -> None:
        """Fetch and block at the owning servers, with retransmission.
        A retransmitted fetch that reaches the servers a second time reads
        the records again but does not stack a second block."""
        token = (tuple(paths), attempt)
        self._waiting = token
        if attempt == 0:
            self._blocked = False

        def at_server():
            if self._lost():
                return
            if self._blocked:
                cl = self.cluster
                res = {}
                for p in paths:
                    rec = cl.tree.get(p)
                    res[p] = None if rec is None else (rec, cl.version.get(p, 0))
            else:
                res = self.sync.execute("fetch", paths)
                self._blocked = True
            self.eng.after(self.lat, reply, res)

        def reply(res):
            if self._waiting is not token or self._lost():
                return
            self._waiting = None
            self._advance(res)

        def timer():
            if self._waiting is not token:
                return
            if attempt >= self.max_retries:
                self._waiting = None
                self.stats["aborts"] += 1
                if self._blocked:
                    self.cluster.unblock(paths)
                self._gen = None
                self.state.note("abort", f"{self._current}\ttimeout")
                self.eng.after(self.lat, self.switch.ack_report, self._current)
                self._start_next()
                return
            self.stats["ctrl_retransmits"] += 1
            self._fetch(paths, attempt + 1)

        self.eng.after(self.lat, at_server)
        if self.loss > 0:
            self.eng.after(self.timeout, timer)
