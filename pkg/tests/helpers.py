"""Small rigs shared by the test modules."""

from __future__ import annotations

from fletchsim.engine import Engine
from fletchsim.namespace import MetadataRecord, MetaOp, NamespaceTree, NodeKind, OpKind, parse_path
from fletchsim.sim import SimConfig, Simulation, _trace_source

UID = 1000


def P(s: str):
    return parse_path(s)


def make_tree(spec: dict[str, int]) -> NamespaceTree:
    """``{"/a": 0o755, "/a/b.txt": 0o644}``; names ending in .txt are files,
    everything owned by uid/gid 1000."""
    tree = NamespaceTree(MetadataRecord(NodeKind.DIRECTORY, 0o755, 0, 0))
    for raw in sorted(spec, key=lambda s: s.count("/")):
        kind = NodeKind.FILE if raw.endswith(".txt") else NodeKind.DIRECTORY
        rec = MetadataRecord(kind, spec[raw], UID, UID,
                             replication=3 if kind == NodeKind.FILE else 0)
        tree.insert(P(raw), rec)
    return tree


def scripted(tree, per_client: list[list[MetaOp]], preload=(), **cfg) -> Simulation:
    """A simulation whose client ``i`` runs ``per_client[i]`` in order."""
    base = dict(n_servers=2, n_clients=len(per_client), preload=0, seed=0)
    base.update(cfg)
    config = SimConfig(**base)
    sim = Simulation(config, tree, _trace_source(per_client, 0.0))
    if preload:
        sim.do_preload([P(p) if isinstance(p, str) else p for p in preload])
    return sim


def op(kind: str, path: str, **kw) -> MetaOp:
    return MetaOp(OpKind(kind), P(path), **kw)


class StubNet:
    """Collects everything a lone switch sends out."""

    observe = False
    check_tokens = False

    def __init__(self):
        self.engine = Engine()
        self.to_server = []
        self.to_client = []
        self.acks = []
        self.hot = []

    def switch_to_server(self, pkt):
        self.to_server.append(pkt)

    def switch_to_client(self, resp):
        self.to_client.append(resp)

    def ack_to_server(self, sid, seq):
        self.acks.append((sid, seq))

    def report_hot(self, path):
        self.hot.append(path)
