"""Hierarchical namespace, metadata records and metadata operations.

The tree keeps tombstones: ``rename``, ``delete`` and ``rmdir`` mark a node
deleted instead of unlinking it, so the last record stays around for
auditing against cached copies.  Deleted nodes are invisible to every
operation; creating the same path again replaces the tombstone.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Iterator

MAX_NAME_BYTES = 255
MODE_MASK = 0o7777


class FsError(Exception):
    """Base class for metadata operation failures."""

    code = "Error"


class MalformedPath(FsError):
    code = "MalformedPath"


class NotFound(FsError):
    code = "NotFound"


class PermissionDenied(FsError):
    code = "PermissionDenied"


class AlreadyExists(FsError):
    code = "AlreadyExists"


class NotEmpty(FsError):
    code = "NotEmpty"


class NotADirectory(FsError):
    code = "NotADirectory"


class IsADirectory(FsError):
    code = "IsADirectory"


ERRORS = {cls.code: cls for cls in (MalformedPath, NotFound, PermissionDenied,
                                     AlreadyExists, NotEmpty, NotADirectory,
                                     IsADirectory)}


class Path(tuple):
    """An absolute path as a tuple of components; ``Path()`` is the root."""

    __slots__ = ()

    def __new__(cls, components: Iterable[str] = ()):
        return super().__new__(cls, components)

    @classmethod
    def parse(cls, raw: str) -> "Path":
        return parse_path(raw)

    @property
    def depth(self) -> int:
        return len(self)

    @property
    def is_root(self) -> bool:
        return len(self) == 0

    @property
    def name(self) -> str:
        return self[-1] if self else "/"

    @property
    def parent(self) -> "Path":
        if not self:
            raise ValueError("root has no parent")
        return Path(self[:-1])

    def level(self, i: int) -> "Path":
        """Prefix made of the first ``i`` components (``level(0)`` is root)."""
        if not 0 <= i <= len(self):
            raise IndexError(f"level {i} outside 0..{len(self)}")
        return Path(self[:i])

    def child(self, name: str) -> "Path":
        return Path(self + (name,))

    def __str__(self) -> str:
        return "/" + "/".join(self)

    def __repr__(self) -> str:
        return f"Path({str(self)!r})"


ROOT = Path()


def _check_component(name: str) -> None:
    if not name:
        raise MalformedPath("empty path component")
    if "/" in name:
        raise MalformedPath(f"component contains '/': {name!r}")
    if len(name.encode("utf-8")) > MAX_NAME_BYTES:
        raise MalformedPath(f"component longer than {MAX_NAME_BYTES} bytes")


def parse_path(raw: str) -> Path:
    if not raw.startswith("/"):
        raise MalformedPath(f"path must start with '/': {raw!r}")
    if raw == "/":
        return ROOT
    parts = raw[1:].split("/")
    for part in parts:
        _check_component(part)
    return Path(parts)


@lru_cache(maxsize=1 << 18)
def level_paths(p: Path) -> tuple[Path, ...]:
    """Cached tuple form of :func:`levels_of`."""
    return tuple(Path(p[:i]) for i in range(len(p))) + (p,)


def levels_of(p: Path) -> list[Path]:
    """``[/, level(1), ..., p]``."""
    return list(level_paths(p))


def is_ancestor(p: Path, q: Path) -> bool:
    return len(p) < len(q) and q[:len(p)] == tuple(p)


class NodeKind(enum.IntEnum):
    FILE = 1
    DIRECTORY = 2


_FILE_FMT = struct.Struct(">BHIIIIQHB10s")
_DIR_FMT = struct.Struct(">BHIIIIB4s")
FILE_RECORD_BYTES = _FILE_FMT.size
DIR_RECORD_BYTES = _DIR_FMT.size
assert FILE_RECORD_BYTES == 40 and DIR_RECORD_BYTES == 24


@dataclass(frozen=True)
class MetadataRecord:
    kind: NodeKind
    mode: int = 0o755
    owner: int = 0
    group: int = 0
    mtime: int = 0
    atime: int = 0
    size: int = 0
    replication: int = 0
    deleted: bool = False

    def __post_init__(self):
        if not 0 <= self.mode <= MODE_MASK:
            raise ValueError(f"mode {self.mode:o} exceeds 12 bits")

    @property
    def is_dir(self) -> bool:
        return self.kind == NodeKind.DIRECTORY

    def pack(self) -> bytes:
        flags = 1 if self.deleted else 0
        if self.kind == NodeKind.FILE:
            return _FILE_FMT.pack(int(self.kind), self.mode, self.owner, self.group,
                                  self.mtime, self.atime, self.size, self.replication,
                                  flags, bytes(10))
        return _DIR_FMT.pack(int(self.kind), self.mode, self.owner, self.group,
                             self.mtime, self.atime, flags, bytes(4))

    @classmethod
    def unpack(cls, raw: bytes) -> "MetadataRecord":
        kind = raw[0]
        if kind == NodeKind.FILE:
            if len(raw) != FILE_RECORD_BYTES:
                raise ValueError("file record must be 40 bytes")
            k, mode, owner, group, mtime, atime, size, repl, flags, _ = _FILE_FMT.unpack(raw)
            return cls(NodeKind.FILE, mode, owner, group, mtime, atime, size, repl, bool(flags))
        if kind == NodeKind.DIRECTORY:
            if len(raw) != DIR_RECORD_BYTES:
                raise ValueError("directory record must be 24 bytes")
            k, mode, owner, group, mtime, atime, flags, _ = _DIR_FMT.unpack(raw)
            return cls(NodeKind.DIRECTORY, mode, owner, group, mtime, atime, 0, 0, bool(flags))
        raise ValueError(f"unknown record kind byte {kind}")


@dataclass(frozen=True)
class Principal:
    uid: int
    gid: int

    @property
    def is_superuser(self) -> bool:
        return self.uid == 0


SUPERUSER = Principal(0, 0)

# access classes for permission_check
TRAVERSE = "traverse"
READ = "read"
MODIFY = "modify"   # write + execute, checked on a parent directory

_NEED_BITS = {TRAVERSE: 0o1, READ: 0o4, MODIFY: 0o3}


def permission_check(record: MetadataRecord, requester: Principal, need: str) -> bool:
    if requester.uid == 0:
        return True
    bits = _NEED_BITS[need]
    if requester.uid == record.owner:
        granted = (record.mode >> 6) & 0o7
    elif requester.gid == record.group:
        granted = (record.mode >> 3) & 0o7
    else:
        granted = record.mode & 0o7
    return granted & bits == bits


class OpKind(str, enum.Enum):
    OPEN = "open"
    CLOSE = "close"
    STAT = "stat"
    STATDIR = "statdir"
    READDIR = "readdir"
    CREATE = "create"
    MKDIR = "mkdir"
    RMDIR = "rmdir"
    DELETE = "delete"
    RENAME = "rename"
    CHMOD = "chmod"
    CHMOD_RECURSIVE = "chmod_recursive"
    CHOWN = "chown"
    CHOWN_RECURSIVE = "chown_recursive"
    UTIME = "utime"

    def __str__(self) -> str:
        return self.value


SINGLE_PATH_READS = frozenset({OpKind.OPEN, OpKind.CLOSE, OpKind.STAT, OpKind.STATDIR})
MULTI_PATH_READS = frozenset({OpKind.READDIR})
READS = SINGLE_PATH_READS | MULTI_PATH_READS
MULTI_PATH_WRITES = frozenset({OpKind.CHMOD_RECURSIVE, OpKind.CHOWN_RECURSIVE})
WRITES = frozenset(OpKind) - READS


@dataclass(frozen=True)
class MetaOp:
    kind: OpKind
    target: Path
    mode: int | None = None
    owner: int | None = None
    group: int | None = None
    dst: Path | None = None
    mtime: int | None = None
    atime: int | None = None

    @property
    def is_read(self) -> bool:
        return self.kind in READS

    @property
    def is_single_path_read(self) -> bool:
        return self.kind in SINGLE_PATH_READS

    @property
    def is_multi_path_write(self) -> bool:
        return self.kind in MULTI_PATH_WRITES


@dataclass
class OpResult:
    record: MetadataRecord | None = None
    entries: list[tuple[str, MetadataRecord]] | None = None
    changed: list[Path] = field(default_factory=list)


@dataclass
class _Node:
    record: MetadataRecord
    children: dict[str, None] | None = None   # insertion-ordered set; None for files


DEFAULT_DIR_RECORD = MetadataRecord(NodeKind.DIRECTORY, 0o755, 0, 0)


class NamespaceTree:
    """A namespace shard: path -> node, with per-directory child sets."""

    def __init__(self, root_record: MetadataRecord = DEFAULT_DIR_RECORD):
        if root_record.kind != NodeKind.DIRECTORY:
            raise ValueError("root must be a directory")
        self._nodes: dict[Path, _Node] = {ROOT: _Node(root_record, {})}

    # -- inspection -------------------------------------------------------
    def __contains__(self, p: Path) -> bool:
        node = self._nodes.get(p)
        return node is not None and not node.record.deleted

    def __len__(self) -> int:
        return sum(1 for n in self._nodes.values() if not n.record.deleted)

    def get(self, p: Path) -> MetadataRecord | None:
        """Live record at ``p`` or None."""
        node = self._nodes.get(p)
        if node is None or node.record.deleted:
            return None
        return node.record

    def raw(self, p: Path) -> MetadataRecord | None:
        """Record at ``p`` including tombstones."""
        node = self._nodes.get(p)
        return None if node is None else node.record

    def children(self, p: Path) -> list[Path]:
        node = self._nodes.get(p)
        if node is None or node.children is None or node.record.deleted:
            return []
        out = []
        for name in node.children:
            c = p.child(name)
            if not self._nodes[c].record.deleted:
                out.append(c)
        return out

    def descendants(self, p: Path) -> Iterator[Path]:
        stack = self.children(p)
        while stack:
            q = stack.pop()
            yield q
            stack.extend(self.children(q))

    def paths(self) -> Iterator[Path]:
        for p, node in self._nodes.items():
            if not node.record.deleted:
                yield p

    def files(self) -> list[Path]:
        return [p for p, n in self._nodes.items()
                if not n.record.deleted and n.record.kind == NodeKind.FILE]

    def directories(self) -> list[Path]:
        return [p for p, n in self._nodes.items()
                if not n.record.deleted and n.record.kind == NodeKind.DIRECTORY]

    # -- raw mutation (no permission checks) ------------------------------
    def insert(self, p: Path, record: MetadataRecord) -> None:
        """Add or replace a node; the parent must be a live directory."""
        if p.is_root:
            raise AlreadyExists("/")
        parent = self._nodes.get(p.parent)
        if parent is None or parent.record.deleted:
            raise NotFound(str(p.parent))
        if parent.children is None:
            raise NotADirectory(str(p.parent))
        old = self._nodes.get(p)
        if old is not None and not old.record.deleted:
            raise AlreadyExists(str(p))
        children = {} if record.kind == NodeKind.DIRECTORY else None
        if old is not None and old.children and children is not None:
            children = old.children     # keep tombstoned grandchildren reachable
        self._nodes[p] = _Node(record, children)
        parent.children[p[-1]] = None

    def set_record(self, p: Path, record: MetadataRecord) -> None:
        node = self._nodes[p]
        if node.record.kind != record.kind:
            raise ValueError("cannot change node kind")
        node.record = record

    def mark_deleted(self, p: Path) -> None:
        node = self._nodes[p]
        node.record = replace(node.record, deleted=True)

    def mkdirs(self, p: Path, record: MetadataRecord = DEFAULT_DIR_RECORD) -> None:
        for lvl in levels_of(p)[1:]:
            if lvl not in self:
                self.insert(lvl, record)

    # -- resolution -------------------------------------------------------
    def resolve(self, p: Path, requester: Principal) -> MetadataRecord:
        """Root-down resolution of ``p``'s ancestors; returns the target's live
        record.  Raises NotFound / NotADirectory / PermissionDenied."""
        node = self._nodes[ROOT]
        for i in range(len(p)):
            rec = node.record
            if rec.kind != NodeKind.DIRECTORY:
                raise NotADirectory(str(p.level(i)))
            if not permission_check(rec, requester, TRAVERSE):
                raise PermissionDenied(str(p.level(i)))
            node = self._nodes.get(Path(p[:i + 1]))
            if node is None or node.record.deleted:
                raise NotFound(str(p.level(i + 1)))
        return node.record

    def resolve_parent(self, p: Path, requester: Principal) -> MetadataRecord:
        parent = self.resolve(p.parent, requester)
        if parent.kind != NodeKind.DIRECTORY:
            raise NotADirectory(str(p.parent))
        if not permission_check(parent, requester, MODIFY):
            raise PermissionDenied(str(p.parent))
        return parent

    # -- snapshot ---------------------------------------------------------
    def export_lines(self, paths: Iterable[Path] | None = None) -> list[str]:
        if paths is None:
            paths = self.paths()
        lines = []
        for p in sorted(paths, key=lambda q: (len(q), q)):
            if p.is_root:
                continue
            r = self.get(p)
            if r is None:
                continue
            kind = "d" if r.is_dir else "f"
            lines.append(f"{p}\t{kind}\t{r.mode:04o}\t{r.owner}\t{r.group}\t{r.size}\t{r.replication}")
        return lines

    @classmethod
    def import_lines(cls, lines: Iterable[str]) -> "NamespaceTree":
        tree = cls()
        rows = []
        for line in lines:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            path, kind, mode, owner, group, size, repl = line.split("\t")
            rows.append((parse_path(path), kind, int(mode, 8), int(owner), int(group),
                         int(size), int(repl)))
        rows.sort(key=lambda r: len(r[0]))
        for p, kind, mode, owner, group, size, repl in rows:
            nk = NodeKind.DIRECTORY if kind == "d" else NodeKind.FILE
            tree.insert(p, MetadataRecord(nk, mode, owner, group, 0, 0,
                                          size if nk == NodeKind.FILE else 0,
                                          repl if nk == NodeKind.FILE else 0))
        return tree


def _owner_or_super(rec: MetadataRecord, requester: Principal, p: Path) -> None:
    if not (requester.uid == 0 or requester.uid == rec.owner):
        raise PermissionDenied(str(p))


def apply_op(tree: NamespaceTree, op: MetaOp, requester: Principal, now: int = 0) -> OpResult:
    """Resolve ``op.target`` root-down and apply the operation.

    Raises an :class:`FsError` subclass on failure; the tree is unchanged
    in that case.
    """
    k = op.kind
    p = op.target
    now = int(now)

    if k in (OpKind.OPEN, OpKind.CLOSE, OpKind.STAT):
        rec = tree.resolve(p, requester)
        if not permission_check(rec, requester, READ):
            raise PermissionDenied(str(p))
        return OpResult(record=rec)

    if k in (OpKind.STATDIR, OpKind.READDIR):
        rec = tree.resolve(p, requester)
        if rec.kind != NodeKind.DIRECTORY:
            raise NotADirectory(str(p))
        if not permission_check(rec, requester, READ):
            raise PermissionDenied(str(p))
        if k == OpKind.STATDIR:
            return OpResult(record=rec)
        entries = [(c[-1], tree.get(c)) for c in tree.children(p)]
        entries.sort(key=lambda e: e[0])
        return OpResult(record=rec, entries=entries)

    if k in (OpKind.CREATE, OpKind.MKDIR):
        if p.is_root:
            raise AlreadyExists("/")
        tree.resolve_parent(p, requester)
        if p in tree:
            raise AlreadyExists(str(p))
        if k == OpKind.CREATE:
            rec = MetadataRecord(NodeKind.FILE, 0o644 if op.mode is None else op.mode,
                                 requester.uid, requester.gid, now, now, 0, 3)
        else:
            rec = MetadataRecord(NodeKind.DIRECTORY, 0o755 if op.mode is None else op.mode,
                                 requester.uid, requester.gid, now, now)
        tree.insert(p, rec)
        return OpResult(record=rec, changed=[p])

    if k in (OpKind.RMDIR, OpKind.DELETE):
        if p.is_root:
            raise PermissionDenied("/")
        tree.resolve_parent(p, requester)
        rec = tree.get(p)
        if rec is None:
            raise NotFound(str(p))
        if k == OpKind.RMDIR and rec.kind != NodeKind.DIRECTORY:
            raise NotADirectory(str(p))
        if rec.kind == NodeKind.DIRECTORY and tree.children(p):
            raise NotEmpty(str(p))
        tree.mark_deleted(p)
        return OpResult(record=tree.raw(p), changed=[p])

    if k == OpKind.RENAME:
        dst = op.dst
        if dst is None:
            raise ValueError("rename needs a destination")
        if p.is_root or dst.is_root:
            raise PermissionDenied("/")
        tree.resolve_parent(p, requester)
        rec = tree.get(p)
        if rec is None:
            raise NotFound(str(p))
        if rec.kind == NodeKind.DIRECTORY:
            raise IsADirectory(str(p))
        tree.resolve_parent(dst, requester)
        if dst in tree:
            raise AlreadyExists(str(dst))
        tree.mark_deleted(p)
        tree.insert(dst, rec)
        return OpResult(record=rec, changed=[p, dst])

    if k in (OpKind.CHMOD, OpKind.CHOWN, OpKind.UTIME,
             OpKind.CHMOD_RECURSIVE, OpKind.CHOWN_RECURSIVE):
        if p.is_root:
            raise PermissionDenied("/")
        rec = tree.resolve(p, requester)
        _owner_or_super(rec, requester, p)
        if k in (OpKind.CHMOD, OpKind.CHMOD_RECURSIVE):
            if op.mode is None:
                raise ValueError("chmod needs a mode")
            changes = {"mode": op.mode & MODE_MASK}
        elif k in (OpKind.CHOWN, OpKind.CHOWN_RECURSIVE):
            changes = {}
            if op.owner is not None:
                changes["owner"] = op.owner
            if op.group is not None:
                changes["group"] = op.group
        else:
            changes = {"mtime": now if op.mtime is None else op.mtime,
                       "atime": now if op.atime is None else op.atime}
        targets = [p]
        if k in MULTI_PATH_WRITES:
            targets.extend(sorted(tree.descendants(p), key=lambda q: (len(q), q)))
        for q in targets:
            tree.set_record(q, replace(tree.get(q), **changes))
        return OpResult(record=tree.get(p), changed=targets)

    raise ValueError(f"unsupported op {k}")
