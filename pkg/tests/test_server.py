import random
from collections import Counter

from fletchsim.engine import Engine
from fletchsim.hashing import Md5Hasher
from fletchsim.namespace import MetaOp, OpKind, Principal
from fletchsim.packets import Packet
from fletchsim.server import Cluster, Server, place_file

from .helpers import P, make_tree

WHO = Principal(1000, 1000)


class ServerNet:
    def __init__(self):
        self.engine = Engine()
        self.hasher = Md5Hasher()
        self.sent = []

    def server_to_switch(self, reply):
        self.sent.append(reply)


def rig(spec, n_servers=1, **kw):
    net = ServerNet()
    cl = Cluster(make_tree(spec), n_servers)
    srvs = [Server(i, cl, net, **kw) for i in range(n_servers)]
    cl.servers = srvs
    return net, cl, srvs


def req(kind, raw, is_read, req_id=1, mode=None):
    return Packet(req_id, 0, MetaOp(OpKind(kind), P(raw), mode=mode), [], [], is_read, 0.0,
                  principal=WHO)


def test_place_file():
    paths = [P(f"/d{i % 97}/f{i}.txt") for i in range(100_000)]
    assert {place_file(p, 1) for p in paths[:1000]} == {0}
    counts = Counter(place_file(p, 16) for p in paths)
    assert len(counts) == 16
    assert all(abs(n - 6250) <= 0.2 * 6250 for n in counts.values())
    assert [place_file(p, 16) for p in paths[:500]] == [place_file(p, 16) for p in paths[:500]]


def test_read_reply_carries_level_tokens():
    net, cl, (srv,) = rig({"/a": 0o755, "/a/b.txt": 0o644})
    srv.on_grant([(P("/a"), 3)])
    srv.handle_request(req("stat", "/a/b.txt", True))
    net.engine.run()
    (r,) = net.sent
    assert r.status == "ok" and r.seq is None
    assert list(r.tokens) == [(P("/a"), 3), (P("/a/b.txt"), 0)]


def test_blocked_write_waits_for_admission():
    net, cl, (srv,) = rig({"/a": 0o755, "/a/b.txt": 0o644})
    cl.block([P("/a/b.txt")])
    srv.handle_request(req("chmod", "/a/b.txt", False, mode=0o600))
    net.engine.run()
    assert net.sent == [] and len(srv.parked) == 1
    # reads are never blocked
    srv.handle_request(req("stat", "/a/b.txt", True, req_id=2))
    net.engine.run()
    assert len(net.sent) == 1
    cl.unblock([P("/a/b.txt")])
    net.engine.run()
    assert len(net.sent) == 2 and net.sent[1].status == "ok"
    assert cl.tree.get(P("/a/b.txt")).mode == 0o600
    assert srv.check_quiescent() == []


def test_retransmission_replays_same_reply():
    net, cl, (srv,) = rig({"/a": 0o755}, rto=1e-5)
    pkt = req("stat", "/a", True)
    pkt.held = [(0, 1)]
    srv.handle_request(pkt)
    net.engine.run(until=4e-5)
    assert len(net.sent) >= 3
    assert all(r is net.sent[0] for r in net.sent) and net.sent[0].seq == 0
    srv.on_ack(7)                      # stale: no-op
    assert srv.outstanding is not None
    srv.on_ack(0)
    assert srv.outstanding is None and srv.seq == 1
    n = len(net.sent)
    net.engine.run()
    assert len(net.sent) == n


def test_multipath_write_updates_descendants_first():
    net, cl, (srv,) = rig({"/a": 0o755, "/a/b": 0o755, "/a/b/c.txt": 0o644, "/a/d.txt": 0o644},
                          retransmit=False)
    srv.on_grant([(P("/a"), 1), (P("/a/b"), 1), (P("/a/b/c.txt"), 1)])
    pkt = req("chmod_recursive", "/a", False, mode=0o700)
    pkt.inval = [(P("/a"), 11, 1, 0, 0)]
    srv.handle_request(pkt)
    net.engine.run()
    updates = [net.sent[0]]
    while True:
        srv.on_ack(net.sent[-1].seq)
        net.engine.run()
        if net.sent[-1] is updates[-1]:
            break
        updates.append(net.sent[-1])
    kinds = [r.kind for r in updates]
    assert kinds == ["update", "update", "resp"]
    assert {r.update[0] for r in updates[:2]} == {P("/a/b"), P("/a/b/c.txt")}
    last = updates[-1]
    assert [e[0] for e in last.release] == [P("/a")]
    assert last.release[0][5].mode == 0o700
    assert all(r.update[3].mode == 0o700 for r in updates[:2])
    assert [r.seq for r in updates] == [0, 1, 2]


def test_multipath_without_cached_descendants():
    net, cl, (srv,) = rig({"/a": 0o755, "/a/b.txt": 0o644}, retransmit=False)
    srv.on_grant([(P("/a"), 1)])
    pkt = req("chmod_recursive", "/a", False, mode=0o700)
    pkt.inval = [(P("/a"), 11, 1, 0, 0)]
    srv.handle_request(pkt)
    net.engine.run()
    assert [r.kind for r in net.sent] == ["resp"]


def test_write_to_cached_path_without_invalidation_is_retried():
    net, cl, (srv,) = rig({"/a": 0o755, "/a/b.txt": 0o644}, retransmit=False)
    srv.on_grant([(P("/a/b.txt"), 2)])
    srv.handle_request(req("chmod", "/a/b.txt", False, mode=0o600))
    net.engine.run()
    (r,) = net.sent
    assert r.kind == "retry" and r.tokens == [(P("/a/b.txt"), 2)]
    assert cl.tree.get(P("/a/b.txt")).mode == 0o644


def test_duplicate_write_not_reapplied():
    net, cl, (srv,) = rig({"/a": 0o755}, retransmit=False)
    for _ in range(2):
        srv.handle_request(req("mkdir", "/a/n", False, req_id=9))
    net.engine.run()
    assert [r.status for r in net.sent] == ["ok", "ok"]
    assert srv.stats["dedup"] == 1


def test_seq_agreement_under_ack_loss():
    """30% ACK loss over 1e4 lock-related replies: every reply is accepted
    exactly once and the counters agree at the end."""
    rng = random.Random(5)
    net, cl, (srv,) = rig({"/a": 0o755}, rto=8e-6, service_time=1e-6)
    eng = net.engine
    state = {"expected": 0, "accepted": 0, "sends": 0}

    def deliver(reply):
        state["sends"] += 1
        if reply.seq == state["expected"]:
            state["accepted"] += 1
            state["expected"] = (state["expected"] + 1) & 0xFF
        if rng.random() >= 0.3:
            eng.after(1e-6, srv.on_ack, reply.seq)

    net.server_to_switch = lambda r: eng.after(1e-6, deliver, r)
    n = 10_000
    for i in range(n):
        pkt = req("stat", "/a", True, req_id=i)
        pkt.held = [(0, 1)]
        srv.handle_request(pkt)
    eng.run()
    assert state["accepted"] == n
    assert state["expected"] == srv.seq == n % 256
    assert srv.stats["lock_replies"] == n
    assert state["sends"] == n + srv.stats["retransmits"]
    assert srv.stats["retransmits"] > 0
    assert srv.check_quiescent() == []
