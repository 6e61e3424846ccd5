"""Message types exchanged between clients, switch, servers and controller."""

from __future__ import annotations

import itertools

from .namespace import MetaOp

_pids = itertools.count(1)


class Packet:
    """A client request on its way through the switch to a server.

    ``locks`` lists the lock counter (array, index) for levels 1..depth;
    ``held`` are the entries of ``locks`` still incremented on behalf of this
    packet when it leaves the switch.  ``inval`` records the cache entries
    this write invalidated, as (path, key, token, slot, gen) tuples.
    """

    __slots__ = ("pid", "req_id", "client", "op", "keys", "tokens", "dst_key",
                 "dst_token", "is_read", "sent_at", "arrived_at", "recirc",
                 "redirects", "cursor", "locks", "held", "inval", "targets",
                 "retries", "observed", "attempt", "starved", "principal")

    def __init__(self, req_id: int, client: int, op: MetaOp, keys: list, tokens: list,
                 is_read: bool, sent_at: float, dst_key: int | None = None,
                 dst_token: int = 0, attempt: int = 0, principal=None):
        self.pid = next(_pids)
        self.req_id = req_id
        self.client = client
        self.op = op
        self.keys = keys
        self.tokens = tokens
        self.dst_key = dst_key
        self.dst_token = dst_token
        self.is_read = is_read
        self.sent_at = sent_at
        self.arrived_at = 0.0
        self.recirc = 0
        self.redirects = 0
        self.cursor = 0
        self.locks = None
        self.held = ()
        self.inval = []
        self.targets = None
        self.retries = 0
        self.observed = None
        self.attempt = attempt
        self.starved = False
        self.principal = principal

    @property
    def depth(self) -> int:
        return len(self.op.target)


class Reply:
    """Server -> switch message.

    kind is one of "resp", "retry", "update".  ``seq`` is None for replies
    that carry no lock or cache bookkeeping.  ``release`` lists
    (path, key, token, slot, gen, record, version) for entries the request
    invalidated; the record may be None when the write changed nothing.
    """

    __slots__ = ("kind", "server", "seq", "pkt", "status", "record", "entries",
                 "tokens", "release", "update", "served_at", "version", "cursor",
                 "gated", "path")

    def __init__(self, kind: str, server: int, pkt: Packet | None, status: str = "ok",
                 record=None, entries=None, tokens=(), release=(), update=None,
                 served_at: float = 0.0, version: int = 0):
        self.kind = kind
        self.server = server
        self.seq = None
        self.pkt = pkt
        self.status = status
        self.record = record
        self.entries = entries
        self.tokens = tokens
        self.release = release
        self.update = update
        self.served_at = served_at
        self.version = version
        self.cursor = 0
        self.gated = False
        self.path = None

    @property
    def lock_related(self) -> bool:
        return self.seq is not None


class Response:
    """Switch -> client."""

    __slots__ = ("req_id", "client", "status", "record", "entries", "tokens",
                 "hit", "recirc", "redirects", "pkt", "version", "served_path")

    def __init__(self, pkt: Packet, status: str, record=None, entries=None, tokens=(),
                 hit: bool = False, version: int | None = None, served_path=None):
        self.req_id = pkt.req_id
        self.client = pkt.client
        self.status = status
        self.record = record
        self.entries = entries
        self.tokens = tokens
        self.hit = hit
        self.recirc = pkt.recirc
        self.redirects = pkt.redirects
        self.pkt = pkt
        self.version = version
        self.served_path = served_path
