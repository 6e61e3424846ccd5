"""Walk one hot path through detection, admission and in-switch hits.

A single client stats /c/d.txt over and over.  The first reads go to the
server; once the sketch count passes the threshold the controller admits
/c and /c/d.txt, and later reads are answered by the switch.
"""
from fletchsim.namespace import MetaOp, MetadataRecord, NamespaceTree, NodeKind, OpKind, parse_path
from fletchsim.sim import SimConfig, Simulation, _trace_source

tree = NamespaceTree(MetadataRecord(NodeKind.DIRECTORY, 0o755, 0, 0))
tree.insert(parse_path("/c"), MetadataRecord(NodeKind.DIRECTORY, 0o755, 1000, 1000))
tree.insert(parse_path("/c/d.txt"), MetadataRecord(NodeKind.FILE, 0o644, 1000, 1000,
                                                   replication=3))
ops = [MetaOp(OpKind.STAT, parse_path("/c/d.txt")) for _ in range(40)]
sim = Simulation(SimConfig(n_servers=2, n_clients=1, preload=0),
                 tree, _trace_source([ops], 0.0))
sim.record_requests = True
sim.start()
m = sim.run()

for i, (kind, depth, hit, recirc, _) in enumerate(sim.per_request):
    where = "switch" if hit else "server"
    print(f"read {i:2d}: {where:<6} recirculations={recirc}")
print(f"cached now: {sorted(str(p) for p in sim.state.cached)}")
print(f"hits {m.hits}/{m.reads}, admissions {m.admissions}, violations {len(m.violations)}")
