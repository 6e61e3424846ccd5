"""Closed-loop logical clients."""

from __future__ import annotations

from .hashing import DEFAULT_TOKEN_TTL, PathTokenMap, hash_read_request
from .namespace import MetaOp, Principal, level_paths
from .packets import Packet, Response


class Client:
    """Issues one request at a time and learns tokens from server replies.

    ``source`` yields the next MetaOp (or None when the client is done).
    """

    def __init__(self, cid: int, net, source, principal: Principal,
                 token_ttl: float = DEFAULT_TOKEN_TTL, retransmit: bool = False,
                 timeout_floor: float = 1e-3):
        self.cid = cid
        self.net = net
        self.source = source
        self.principal = principal
        self.tokens = PathTokenMap(ttl=token_ttl)
        self.retransmit = retransmit
        self.timeout_floor = timeout_floor
        self.rtt = None
        self.req_id = 0
        self.current: Packet | None = None
        self.op: MetaOp | None = None
        self.first_sent = 0.0
        self.received_tokens: set[tuple] = set()
        self.done = False
        self.finished_at = None
        self.stats = {"issued": 0, "completed": 0, "retransmits": 0, "fabricated": 0}

    def start(self) -> None:
        self._issue_next()

    def _issue_next(self) -> None:
        op = self.source(self.cid, self.net.engine.now)
        if op is None:
            self.done = True
            self.current = None
            self.finished_at = self.net.engine.now
            self.net.client_finished(self)
            return
        self.req_id += 1
        self.op = op
        self.first_sent = self.net.engine.now
        self.stats["issued"] += 1
        self._send(self.issue(op, self.net.engine.now))

    def issue(self, op: MetaOp, now: float, attempt: int = 0) -> Packet:
        h = self.net.hasher
        p = op.target
        if op.is_read:
            keys = hash_read_request(p, h)
            get = self.tokens.get
            toks = [0] + [get(q, now) for q in level_paths(p)[1:]]
            pkt = Packet(self.req_id, self.cid, op, keys, toks, True, now, attempt=attempt,
                         principal=self.principal)
        else:
            keys = [h(p)]
            toks = [self.tokens.get(p, now) if len(p) else 0]
            dkey = dtok = None
            if op.dst is not None:
                dkey, dtok = h(op.dst), self.tokens.get(op.dst, now)
            pkt = Packet(self.req_id, self.cid, op, keys, toks, False, now, dst_key=dkey,
                         dst_token=dtok or 0, attempt=attempt, principal=self.principal)
        if self.net.check_tokens:
            sent = list(zip(level_paths(p), pkt.tokens)) if op.is_read else [(p, pkt.tokens[0])]
            if op.dst is not None:
                sent.append((op.dst, pkt.dst_token))
            for q, t in sent:
                if t and (q, t) not in self.received_tokens and not self._warm(q, t):
                    self.stats["fabricated"] += 1
        return pkt

    def _warm(self, q, t) -> bool:
        base = self.tokens.base
        return base is not None and base.get(q) == t

    def _send(self, pkt: Packet) -> None:
        self.current = pkt
        self.net.client_to_switch(pkt)
        if self.retransmit:
            rto = self.timeout_floor if self.rtt is None else max(self.timeout_floor, 8 * self.rtt)
            self.net.engine.after(rto, self._timeout, self.req_id, pkt.attempt)

    def _timeout(self, req_id: int, attempt: int) -> None:
        cur = self.current
        if cur is None or cur.req_id != req_id or cur.attempt != attempt:
            return
        self.stats["retransmits"] += 1
        self._send(self.issue(self.op, self.net.engine.now, attempt + 1))

    def on_response(self, resp: Response) -> None:
        cur = self.current
        if cur is None or resp.req_id != self.req_id:
            return
        now = self.net.engine.now
        for p, tok in resp.tokens:
            self.tokens.learn(p, tok, now)
            if tok and self.net.check_tokens:
                self.received_tokens.add((p, tok))
        lat = now - self.first_sent
        rtt = now - resp.pkt.sent_at
        self.rtt = rtt if self.rtt is None else 0.875 * self.rtt + 0.125 * rtt
        self.stats["completed"] += 1
        self.current = None
        self.net.record_completion(self, self.op, resp, lat)
        self._issue_next()
