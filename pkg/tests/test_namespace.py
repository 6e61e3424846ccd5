import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fletchsim.namespace import (AlreadyExists, DIR_RECORD_BYTES, FILE_RECORD_BYTES,
                                 MalformedPath, MetadataRecord, MetaOp, NamespaceTree, NodeKind,
                                 NotEmpty, NotFound, OpKind, Path, PermissionDenied, Principal,
                                 ROOT, SUPERUSER, apply_op, is_ancestor, levels_of, parse_path,
                                 permission_check)

from .helpers import P, make_tree

OWNER = Principal(1000, 1000)
OTHER = Principal(2000, 2000)


def test_parse_path_examples():
    p = parse_path("/a/b/c.txt")
    assert list(p) == ["a", "b", "c.txt"] and p.depth == 3
    assert parse_path("/") == ROOT and ROOT.depth == 0
    for bad in ("/a//b", "a/b", "", "/" + "x" * 256):
        with pytest.raises(MalformedPath):
            parse_path(bad)
    assert parse_path("/" + "x" * 255).depth == 1


def test_levels_and_ancestry():
    assert [str(q) for q in levels_of(P("/a/b/c.txt"))] == ["/", "/a", "/a/b", "/a/b/c.txt"]
    assert levels_of(ROOT) == [ROOT]
    assert [str(q) for q in levels_of(P("/x"))] == ["/", "/x"]
    assert is_ancestor(P("/a"), P("/a/b"))
    assert not is_ancestor(P("/a"), P("/a"))
    assert not is_ancestor(P("/a/b"), P("/a"))
    assert P("/a/b/c").level(2) == P("/a/b")


def test_permission_examples():
    d755 = MetadataRecord(NodeKind.DIRECTORY, 0o755, 1000, 1000)
    d700 = MetadataRecord(NodeKind.DIRECTORY, 0o700, 1000, 1000)
    f644 = MetadataRecord(NodeKind.FILE, 0o644, 1000, 1000)
    assert permission_check(d755, OTHER, "traverse")
    assert not permission_check(d700, OTHER, "traverse")
    assert permission_check(f644, OWNER, "read")
    assert not permission_check(f644, OTHER, "modify")
    assert permission_check(d700, SUPERUSER, "modify")


def test_record_sizes():
    f = MetadataRecord(NodeKind.FILE, 0o644, 1, 2, 3, 4, 5, 3)
    d = MetadataRecord(NodeKind.DIRECTORY, 0o755, 1, 2, 3, 4)
    assert len(f.pack()) == FILE_RECORD_BYTES == 40
    assert len(d.pack()) == DIR_RECORD_BYTES == 24


@given(kind=st.sampled_from(list(NodeKind)), mode=st.integers(0, 0o7777),
       owner=st.integers(0, 2**32 - 1), group=st.integers(0, 2**32 - 1),
       mtime=st.integers(0, 2**32 - 1), atime=st.integers(0, 2**32 - 1),
       size=st.integers(0, 2**64 - 1), repl=st.integers(0, 2**16 - 1), deleted=st.booleans())
def test_record_roundtrip(kind, mode, owner, group, mtime, atime, size, repl, deleted):
    if kind == NodeKind.DIRECTORY:
        size = repl = 0
    rec = MetadataRecord(kind, mode, owner, group, mtime, atime, size, repl, deleted)
    raw = rec.pack()
    assert len(raw) == (40 if kind == NodeKind.FILE else 24)
    assert MetadataRecord.unpack(raw) == rec
    assert MetadataRecord.unpack(raw).pack() == raw


def test_apply_op_examples():
    tree = NamespaceTree()
    apply_op(tree, MetaOp(OpKind.MKDIR, P("/a")), SUPERUSER, now=7)
    rec = apply_op(tree, MetaOp(OpKind.STAT, P("/a")), SUPERUSER).record
    assert rec.kind == NodeKind.DIRECTORY and rec.mtime == 7
    with pytest.raises(NotFound):
        apply_op(tree, MetaOp(OpKind.CREATE, P("/b/c.txt")), SUPERUSER)
    with pytest.raises(AlreadyExists):
        apply_op(tree, MetaOp(OpKind.MKDIR, P("/a")), SUPERUSER)
    apply_op(tree, MetaOp(OpKind.CREATE, P("/a/x.txt")), SUPERUSER)
    with pytest.raises(NotEmpty):
        apply_op(tree, MetaOp(OpKind.RMDIR, P("/a")), SUPERUSER)
    # close is a read
    assert apply_op(tree, MetaOp(OpKind.CLOSE, P("/a/x.txt")), SUPERUSER).changed == []


def test_chmod_recursive_matches_tree_walk():
    tree = make_tree({"/a": 0o755, "/a/b": 0o755, "/a/b/c.txt": 0o644, "/a/d.txt": 0o644,
                      "/e": 0o755})
    apply_op(tree, MetaOp(OpKind.CHMOD_RECURSIVE, P("/a"), mode=0o700), OWNER)
    # brute force: every path with prefix /a
    under = [p for p in tree.paths() if str(p) == "/a" or str(p).startswith("/a/")]
    assert len(under) == 4
    assert all(tree.get(p).mode == 0o700 for p in under)
    assert tree.get(P("/e")).mode == 0o755


def test_permission_denied_on_traverse():
    tree = make_tree({"/a": 0o700, "/a/b.txt": 0o644})
    with pytest.raises(PermissionDenied):
        apply_op(tree, MetaOp(OpKind.STAT, P("/a/b.txt")), OTHER)
    assert apply_op(tree, MetaOp(OpKind.STAT, P("/a/b.txt")), OWNER).record.mode == 0o644


def test_root_is_protected():
    tree = NamespaceTree()
    for kind in (OpKind.CHMOD, OpKind.RMDIR):
        with pytest.raises(PermissionDenied):
            apply_op(tree, MetaOp(kind, ROOT, mode=0o700), SUPERUSER)
    assert tree.get(ROOT).mode == 0o755


def test_snapshot_roundtrip():
    tree = make_tree({"/a": 0o750, "/a/b.txt": 0o640, "/c": 0o755})
    lines = tree.export_lines()
    assert lines[0] == "/a\td\t0750\t1000\t1000\t0\t0"
    again = NamespaceTree.import_lines(lines)
    assert again.export_lines() == lines


# ----------------------------------------------------------------------
# flat-map oracle: full path string -> dict, prefixes validated by hand

class FlatFs:
    def __init__(self):
        self.m = {"/": {"kind": "d", "mode": 0o755, "owner": 0, "group": 0}}

    @staticmethod
    def parent(s):
        i = s.rfind("/")
        return "/" if i == 0 else s[:i]

    @staticmethod
    def prefixes(s):
        parts = s.strip("/").split("/")
        return ["/"] + ["/" + "/".join(parts[:i]) for i in range(1, len(parts))]

    @staticmethod
    def bits(rec, who):
        if who.uid == 0:
            return 7
        if who.uid == rec["owner"]:
            return (rec["mode"] >> 6) & 7
        if who.gid == rec["group"]:
            return (rec["mode"] >> 3) & 7
        return rec["mode"] & 7

    def resolve(self, s, who):
        if s == "/":
            return self.m["/"]
        for q in self.prefixes(s):
            r = self.m.get(q)
            if r is None:
                return "NotFound"
            if r["kind"] != "d":
                return "NotADirectory"
            if not self.bits(r, who) & 1:
                return "PermissionDenied"
        r = self.m.get(s)
        return r if r is not None else "NotFound"

    def parent_ok(self, s, who):
        par = self.resolve(self.parent(s), who)
        if isinstance(par, str):
            return par
        if par["kind"] != "d":
            return "NotADirectory"
        if self.bits(par, who) & 3 != 3:
            return "PermissionDenied"
        return None

    def kids(self, s):
        pre = s.rstrip("/") + "/"
        return [q for q in self.m if q.startswith(pre) and q != s]

    def apply(self, kind, s, who, mode=None, dst=None):
        if kind in ("stat", "open"):
            r = self.resolve(s, who)
            if isinstance(r, str):
                return r
            return "ok" if self.bits(r, who) & 4 else "PermissionDenied"
        if kind in ("create", "mkdir"):
            if s == "/":
                return "AlreadyExists"
            e = self.parent_ok(s, who)
            if e:
                return e
            if s in self.m:
                return "AlreadyExists"
            self.m[s] = {"kind": "f" if kind == "create" else "d",
                         "mode": mode if mode is not None else
                         (0o644 if kind == "create" else 0o755),
                         "owner": who.uid, "group": who.gid}
            return "ok"
        if kind in ("delete", "rmdir"):
            if s == "/":
                return "PermissionDenied"
            e = self.parent_ok(s, who)
            if e:
                return e
            r = self.m.get(s)
            if r is None:
                return "NotFound"
            if kind == "rmdir" and r["kind"] != "d":
                return "NotADirectory"
            if r["kind"] == "d" and self.kids(s):
                return "NotEmpty"
            del self.m[s]
            return "ok"
        if kind == "rename":
            if s == "/" or dst == "/":
                return "PermissionDenied"
            e = self.parent_ok(s, who)
            if e:
                return e
            r = self.m.get(s)
            if r is None:
                return "NotFound"
            if r["kind"] == "d":
                return "IsADirectory"
            e = self.parent_ok(dst, who)
            if e:
                return e
            if dst in self.m:
                return "AlreadyExists"
            self.m[dst] = self.m.pop(s)
            return "ok"
        if kind in ("chmod", "chmod_recursive"):
            if s == "/":
                return "PermissionDenied"
            r = self.resolve(s, who)
            if isinstance(r, str):
                return r
            if who.uid not in (0, r["owner"]):
                return "PermissionDenied"
            targets = [s] + (self.kids(s) if kind == "chmod_recursive" else [])
            for q in targets:
                self.m[q] = dict(self.m[q], mode=mode)
            return "ok"
        raise AssertionError(kind)


NAMES = ["a", "b", "c", "x.txt", "y.txt"]
KINDS = ["stat", "open", "create", "mkdir", "delete", "rmdir", "rename", "chmod",
         "chmod_recursive"]


def _random_path(rng):
    return "/" + "/".join(rng.choice(NAMES) for _ in range(rng.randint(1, 4)))


def _run_against_oracle(seed, n_ops):
    rng = random.Random(seed)
    tree, flat = NamespaceTree(), FlatFs()
    whos = [SUPERUSER, OWNER, OTHER]
    for _ in range(n_ops):
        kind = rng.choice(KINDS)
        s = _random_path(rng)
        who = rng.choice(whos)
        mode = rng.choice([0o700, 0o755, 0o644, 0o600, 0o711])
        dst = _random_path(rng) if kind == "rename" else None
        expect = flat.apply(kind, s, who, mode, dst)
        try:
            apply_op(tree, MetaOp(OpKind(kind), parse_path(s), mode=mode,
                                  dst=parse_path(dst) if dst else None), who)
            got = "ok"
        except Exception as e:      # FsError subclasses carry their name
            got = type(e).__name__
        assert got == expect, (kind, s, who, dst)
    live = {str(p): tree.get(p) for p in tree.paths()}
    assert set(live) == set(flat.m)
    for s, r in flat.m.items():
        rec = live[s]
        assert (rec.mode, rec.owner, rec.kind == NodeKind.DIRECTORY) == \
            (r["mode"], r["owner"], r["kind"] == "d")
    # closure: every live node's prefixes are live directories
    for p in tree.paths():
        for q in levels_of(p)[:-1]:
            assert tree.get(q) is not None and tree.get(q).kind == NodeKind.DIRECTORY


def test_apply_op_matches_flat_map_oracle_10k():
    _run_against_oracle(seed=12345, n_ops=10_000)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_apply_op_matches_flat_map_oracle_property(seed):
    _run_against_oracle(seed, 400)
