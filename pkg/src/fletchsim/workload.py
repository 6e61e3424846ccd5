"""mdtest-style namespaces, skewed access weights and operation traces."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .namespace import (MetaOp, MetadataRecord, NamespaceTree, NodeKind, OpKind, Path, ROOT,
                        WRITES, parse_path)

TRACE_MAGIC = "#fletchsim-trace v1"
OWNER_UID = 1000
OWNER_GID = 1000
MKDIR_AREA = Path(("mkdir_area",))
RMDIR_AREA = Path(("rmdir_area",))
DESTRUCTIVE = frozenset({OpKind.RENAME, OpKind.DELETE, OpKind.RMDIR})
CHMOD_MODES = (0o600, 0o640, 0o644)


class InvalidSpec(ValueError):
    pass


def _split(openclose: float) -> dict:
    return {OpKind.OPEN: openclose / 2, OpKind.CLOSE: openclose / 2}


# percentages; open/close shares are split evenly between the two kinds
MIXES: dict[str, dict[OpKind, float]] = {
    "alibaba": {**_split(52.6), OpKind.CREATE: 9.59, OpKind.READDIR: 3.9, OpKind.CHMOD: 0.1,
                OpKind.DELETE: 11.9, OpKind.STAT: 12.4, OpKind.STATDIR: 0.2,
                OpKind.MKDIR: 0.005, OpKind.RMDIR: 0.005, OpKind.RENAME: 9.3},
    "training": {**_split(54.32), OpKind.STAT: 28.5, OpKind.READDIR: 0.13, OpKind.CREATE: 9.01,
                 OpKind.MKDIR: 0.13, OpKind.RMDIR: 0.13, OpKind.DELETE: 9.01,
                 OpKind.STATDIR: 0.13},
    "thumb": {**_split(57.01), OpKind.STAT: 28.44, OpKind.READDIR: 0.13, OpKind.CREATE: 14.16,
              OpKind.MKDIR: 0.13, OpKind.STATDIR: 0.13},
    "linkedin": {OpKind.OPEN: 42.0, OpKind.STAT: 42.0, OpKind.CREATE: 4.5, OpKind.MKDIR: 4.5,
                 OpKind.CHMOD: 1.0, OpKind.DELETE: 3.0, OpKind.RENAME: 3.0},
}


def normalize_mix(mix: dict) -> dict[OpKind, float]:
    out = {OpKind(k): float(v) for k, v in mix.items() if float(v) > 0}
    total = sum(out.values())
    if total <= 0:
        raise InvalidSpec("operation mix is empty")
    return {k: v / total for k, v in out.items()}


def mix_preset(name: str) -> dict[OpKind, float]:
    try:
        return normalize_mix(MIXES[name])
    except KeyError:
        raise InvalidSpec(f"unknown mix {name!r}") from None


def chmod_mix(ratio: float) -> dict[OpKind, float]:
    """open/chmod read-write mix used by the chmod-ratio sweep."""
    if not 0 <= ratio <= 1:
        raise InvalidSpec("chmod ratio must be in [0, 1]")
    mix = {}
    if ratio < 1:
        mix[OpKind.OPEN] = 1 - ratio
    if ratio > 0:
        mix[OpKind.CHMOD] = ratio
    return mix


def read_fraction(mix: dict) -> float:
    return sum(v for k, v in mix.items() if OpKind(k) not in WRITES)


@dataclass
class WorkloadSpec:
    name: str = "thumb"
    mix: dict = field(default_factory=dict)
    n_files: int = 100_000
    max_depth: int = 9
    skew: str = "powerlaw"         # powerlaw | uniform
    exponent: float = 0.9
    eighty_twenty: bool = True
    order: str = "random"          # random | hlf | llf
    length: int = 1_000_000
    n_clients: int = 128
    hot_in_period: float | None = None
    hot_in_k: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.mix:
            if self.name not in MIXES:
                raise InvalidSpec(f"no mix given and {self.name!r} is not a preset")
            self.mix = mix_preset(self.name)
        else:
            self.mix = normalize_mix(self.mix)
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise InvalidSpec("mix ratios must sum to 1")
        if self.n_files < 1:
            raise InvalidSpec("n_files must be >= 1")
        if self.max_depth < 2:
            raise InvalidSpec("max_depth must be >= 2")
        if self.skew not in ("powerlaw", "uniform"):
            raise InvalidSpec(f"unknown skew {self.skew!r}")
        if self.skew == "powerlaw" and not self.exponent > 0:
            raise InvalidSpec("exponent must be > 0")
        if self.order not in ("random", "hlf", "llf"):
            raise InvalidSpec(f"unknown order {self.order!r}")
        if self.length < 0 or self.n_clients < 1:
            raise InvalidSpec("length must be >= 0 and n_clients >= 1")
        if self.hot_in_k < 0:
            raise InvalidSpec("hot_in_k must be >= 0")

    def echo(self) -> str:
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "mix":
                v = ",".join(f"{k.value}:{r:.6g}" for k, r in sorted(v.items()))
            parts.append(f"{f.name}={v}")
        return " ".join(parts)

    def n_rmdir_targets(self) -> int:
        return int(math.ceil(self.length * self.mix.get(OpKind.RMDIR, 0.0))) + 1


TREE_ROOT = Path(("tree",))


def _fanout(n_files: int, levels: int) -> int:
    if levels <= 0:
        return 1
    return max(2, round((n_files / 10) ** (1.0 / levels)))


def build_namespace(spec: WorkloadSpec, n_rmdir: int | None = None):
    """mdtest-style layout: one top directory, then a balanced tree of
    ``max_depth - 2`` further directory levels, with files spread evenly
    over every directory.  Returns (tree, files)."""
    D = spec.max_depth - 1
    b = _fanout(spec.n_files, D - 1)
    dmode = MetadataRecord(NodeKind.DIRECTORY, 0o755, OWNER_UID, OWNER_GID)
    fmode = MetadataRecord(NodeKind.FILE, 0o644, OWNER_UID, OWNER_GID, replication=3)
    tree = NamespaceTree(MetadataRecord(NodeKind.DIRECTORY, 0o755, 0, 0))
    tree.insert(TREE_ROOT, dmode)
    dirs: list[Path] = [TREE_ROOT]
    frontier = [TREE_ROOT]
    for _ in range(D - 1):
        if len(dirs) >= spec.n_files:
            break
        nxt = []
        for d in frontier:
            for j in range(b):
                c = d.child(f"d{j}")
                tree.insert(c, dmode)
                nxt.append(c)
        dirs.extend(nxt)
        frontier = nxt
    files: list[Path] = []
    nd = len(dirs)
    per = [spec.n_files // nd + (1 if i < spec.n_files % nd else 0) for i in range(nd)]
    for d, n in zip(dirs, per):
        for j in range(n):
            f = d.child(f"f{j}.txt")
            tree.insert(f, fmode)
            files.append(f)
    tree.insert(MKDIR_AREA, dmode)
    tree.insert(RMDIR_AREA, dmode)
    for i in range(spec.n_rmdir_targets() if n_rmdir is None else n_rmdir):
        tree.insert(RMDIR_AREA.child(f"d{i}"), dmode)
    return tree, files


def power_law_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** (-exponent)
    return w / w.sum()


def apply_eighty_twenty(w: np.ndarray) -> np.ndarray:
    """Rescale descending weights so the top 20% carry 80% of the mass."""
    n = len(w)
    top = max(1, int(round(0.2 * n)))
    if top >= n:
        return w / w.sum()
    out = w.astype(float).copy()
    out[:top] *= 0.8 / out[:top].sum()
    out[top:] *= 0.2 / out[top:].sum()
    return out


def rank_files(files: list[Path], order: str, rng: np.random.Generator) -> list[Path]:
    """Hottest-first ranking.  hlf puts the deepest files first, llf the
    shallowest; ties (and the whole list for random) are shuffled."""
    perm = rng.permutation(len(files))
    shuffled = [files[i] for i in perm]
    if order == "random":
        return shuffled
    if order == "hlf":
        return sorted(shuffled, key=lambda p: -len(p))
    if order == "llf":
        return sorted(shuffled, key=len)
    raise InvalidSpec(f"unknown order {order!r}")


def assign_frequencies(files: list[Path], skew: str = "powerlaw", order: str = "random",
                       exponent: float = 0.9, eighty_twenty: bool = True,
                       rng: np.random.Generator | None = None) -> dict[Path, float]:
    """file -> access probability; the dict is ordered hottest first."""
    if not files:
        raise InvalidSpec("no files")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(files)
    ranked = rank_files(files, order, rng)
    if skew == "uniform":
        w = np.full(n, 1.0 / n)
    else:
        w = power_law_weights(n, exponent)
        if eighty_twenty:
            w = apply_eighty_twenty(w)
    return dict(zip(ranked, w.tolist()))


def hot_in_shift(weights: dict[Path, float], k: int) -> dict[Path, float]:
    """The ``k`` coldest files take the top ``k`` ranks; everyone else moves
    down ``k`` ranks.  The rank -> weight shape is unchanged."""
    if k <= 0 or not weights:
        return dict(weights)
    ranked = sorted(weights, key=weights.get, reverse=True)   # stable for ties
    values = sorted(weights.values(), reverse=True)
    k = min(k, len(ranked))
    new_order = ranked[-k:] + ranked[:-k]
    return dict(zip(new_order, values))


@dataclass
class Trace:
    ops: list[tuple[int, MetaOp]]
    header: str = ""

    def __len__(self) -> int:
        return len(self.ops)

    def per_client(self, n_clients: int) -> list[list[MetaOp]]:
        out: list[list[MetaOp]] = [[] for _ in range(n_clients)]
        for c, op in self.ops:
            out[c % n_clients].append(op)
        return out

    def kind_counts(self) -> dict[OpKind, int]:
        out: dict[OpKind, int] = {}
        for _, op in self.ops:
            out[op.kind] = out.get(op.kind, 0) + 1
        return out

    def to_lines(self) -> list[str]:
        lines = [f"{TRACE_MAGIC} {self.header}".rstrip()]
        for c, op in self.ops:
            lines.append(f"{c}\t{op.kind.value}\t{op.target}\t{_format_args(op)}")
        return lines

    def dumps(self) -> str:
        return "\n".join(self.to_lines()) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Trace":
        lines = text.splitlines()
        if not lines or not lines[0].startswith(TRACE_MAGIC):
            raise InvalidSpec("not a fletchsim trace")
        header = lines[0][len(TRACE_MAGIC):].strip()
        ops = []
        for ln in lines[1:]:
            if not ln.strip():
                continue
            c, kind, path, args = ln.split("\t")
            ops.append((int(c), _parse_op(OpKind(kind), parse_path(path), args)))
        return cls(ops, header)

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def _format_args(op: MetaOp) -> str:
    parts = []
    if op.mode is not None:
        parts.append(f"mode={op.mode:o}")
    if op.owner is not None:
        parts.append(f"owner={op.owner}")
    if op.group is not None:
        parts.append(f"group={op.group}")
    if op.dst is not None:
        parts.append(f"dst={op.dst}")
    if op.mtime is not None:
        parts.append(f"mtime={op.mtime}")
    if op.atime is not None:
        parts.append(f"atime={op.atime}")
    return ",".join(parts) or "-"


def _parse_op(kind: OpKind, target: Path, args: str) -> MetaOp:
    kw = {}
    if args != "-":
        for item in args.split(","):
            k, v = item.split("=", 1)
            if k == "mode":
                kw[k] = int(v, 8)
            elif k == "dst":
                kw[k] = parse_path(v)
            else:
                kw[k] = int(v)
    return MetaOp(kind, target, **kw)


def _op_for(kind: OpKind, f: Path, i: int, rng_mode: int, state: dict) -> MetaOp:
    if kind in (OpKind.OPEN, OpKind.CLOSE, OpKind.STAT):
        return MetaOp(kind, f)
    if kind in (OpKind.STATDIR, OpKind.READDIR):
        return MetaOp(kind, f.parent)
    if kind == OpKind.CREATE:
        return MetaOp(kind, f.parent.child(f"n{i}.txt"))
    if kind == OpKind.MKDIR:
        return MetaOp(kind, MKDIR_AREA.child(f"m{i}"))
    if kind == OpKind.RMDIR:
        j = state["rmdir"]
        state["rmdir"] = j + 1
        return MetaOp(kind, RMDIR_AREA.child(f"d{j}"))
    if kind == OpKind.CHMOD:
        return MetaOp(kind, f, mode=CHMOD_MODES[rng_mode])
    if kind == OpKind.CHMOD_RECURSIVE:
        return MetaOp(kind, f.parent, mode=0o755 if rng_mode else 0o775)
    if kind == OpKind.CHOWN:
        return MetaOp(kind, f, owner=OWNER_UID, group=OWNER_GID + rng_mode)
    if kind == OpKind.CHOWN_RECURSIVE:
        return MetaOp(kind, f.parent, owner=OWNER_UID, group=OWNER_GID + rng_mode)
    if kind == OpKind.UTIME:
        return MetaOp(kind, f, mtime=i, atime=i)
    raise InvalidSpec(f"no generator for {kind}")


def sample_trace(spec: WorkloadSpec, weights: dict[Path, float], length: int | None = None,
                 rng: np.random.Generator | None = None) -> Trace:
    """Draw ``length`` ops: files by weight, kinds by the mix.  Renames,
    deletes and rmdirs are moved to the end of the sequence."""
    n_ops = spec.length if length is None else length
    rng = rng if rng is not None else np.random.default_rng(spec.seed + 1)
    if n_ops == 0:
        return Trace([], spec.echo())
    files = list(weights)
    w = np.fromiter(weights.values(), float, len(files))
    w = w / w.sum()
    kinds = sorted(spec.mix, key=lambda k: k.value)
    probs = np.array([spec.mix[k] for k in kinds])
    kind_idx = rng.choice(len(kinds), size=n_ops, p=probs / probs.sum())
    file_idx = rng.choice(len(files), size=n_ops, p=w)
    mode_idx = rng.integers(0, len(CHMOD_MODES), size=n_ops)
    # delete / rename sources: distinct files, drawn by weight
    is_src = np.isin(kind_idx, [i for i, k in enumerate(kinds)
                                if k in (OpKind.DELETE, OpKind.RENAME)])
    m = int(is_src.sum())
    if m:
        take = min(m, len(files))
        src = rng.choice(len(files), size=take, replace=False, p=w)
        if take < m:
            src = np.concatenate([src, rng.choice(len(files), size=m - take, p=w)])
        file_idx[is_src] = src
    state = {"rmdir": 0}
    head: list[MetaOp] = []
    tail: list[MetaOp] = []
    for i in range(n_ops):
        kind = kinds[kind_idx[i]]
        f = files[file_idx[i]]
        if kind == OpKind.DELETE:
            tail.append(MetaOp(kind, f))
        elif kind == OpKind.RENAME:
            tail.append(MetaOp(kind, f, dst=f.parent.child(f"{f.name}.r{i}")))
        elif kind == OpKind.RMDIR:
            tail.append(_op_for(kind, f, i, 0, state))
        else:
            head.append(_op_for(kind, f, i, int(mode_idx[i]), state))
    nc = spec.n_clients
    ops = [(i % nc, op) for i, op in enumerate(head + tail)]
    return Trace(ops, spec.echo())


def generate(spec: WorkloadSpec):
    """Namespace, weights and trace for ``spec``; a pure function of it."""
    rng = np.random.default_rng(spec.seed)
    tree, files = build_namespace(spec)
    weights = assign_frequencies(files, spec.skew, spec.order, spec.exponent,
                                 spec.eighty_twenty, rng)
    trace = sample_trace(spec, weights, rng=rng)
    return tree, weights, trace


class DynamicWorkload:
    """On-line op source whose weights rotate every ``period`` seconds.

    Each op is drawn when a client asks for it, so the access pattern
    follows simulated time.  Returns None once ``duration`` has passed.
    """

    def __init__(self, spec: WorkloadSpec, weights: dict[Path, float], period: float,
                 duration: float, k: int = 100, rng: np.random.Generator | None = None,
                 block: int = 4096):
        self.spec = spec
        self.period = period
        self.duration = duration
        self.k = k
        self.rng = rng if rng is not None else np.random.default_rng(spec.seed + 7)
        self.ranked = sorted(weights, key=weights.get, reverse=True)
        self.values = np.array(sorted(weights.values(), reverse=True))
        self.shifts = 0
        self.kinds = sorted((k for k in spec.mix if k not in DESTRUCTIVE), key=lambda k: k.value)
        p = np.array([spec.mix[k] for k in self.kinds])
        self.kind_p = p / p.sum()
        self.block = block
        self._buf_f = self._buf_k = self._buf_m = None
        self._pos = block
        self.counter = 0
        self.history: list[tuple[float, list[Path]]] = []

    def weights(self) -> dict[Path, float]:
        return dict(zip(self.ranked, self.values.tolist()))

    def top(self, n: int) -> list[Path]:
        return self.ranked[:n]

    def _maybe_shift(self, now: float) -> None:
        due = int(now // self.period) if self.period else 0
        while self.shifts < due:
            self.shifts += 1
            k = min(self.k, len(self.ranked))
            if k:
                self.ranked = self.ranked[-k:] + self.ranked[:-k]
                self.history.append((self.shifts * self.period, self.ranked[:k]))
            self._pos = self.block   # drop samples drawn under the old ranking

    def _refill(self) -> None:
        n = self.block
        self._buf_f = self.rng.choice(len(self.ranked), size=n, p=self.values / self.values.sum())
        self._buf_k = self.rng.choice(len(self.kinds), size=n, p=self.kind_p)
        self._buf_m = self.rng.integers(0, len(CHMOD_MODES), size=n)
        self._pos = 0

    def __call__(self, cid: int, now: float) -> MetaOp | None:
        if now >= self.duration:
            return None
        self._maybe_shift(now)
        if self._pos >= self.block:
            self._refill()
        i = self._pos
        self._pos += 1
        self.counter += 1
        f = self.ranked[self._buf_f[i]]
        return _op_for(self.kinds[self._buf_k[i]], f, self.counter, int(self._buf_m[i]),
                       {"rmdir": 0})


def parse_spec(text: str) -> WorkloadSpec:
    """Flat ``key = value`` spec; ``mix`` as ``op:ratio,op:ratio``."""
    kw: dict = {}
    types = {f.name: f.type for f in fields(WorkloadSpec)}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"bad spec line {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in types:
            raise InvalidSpec(f"unknown spec key {k!r}")
        kw[k] = _coerce_spec(k, v)
    return WorkloadSpec(**kw)


def _coerce_spec(k: str, v: str):
    if k == "mix":
        out = {}
        for item in v.split(","):
            op, r = item.split(":")
            out[OpKind(op.strip())] = float(r)
        return out
    if k in ("name", "skew", "order"):
        return v
    if k == "eighty_twenty":
        return v.lower() in ("1", "true", "yes", "on")
    if k in ("exponent",):
        return float(v)
    if k == "hot_in_period":
        return None if v.lower() in ("none", "") else float(v)
    return int(v)


def spec_dict(spec: WorkloadSpec) -> dict:
    d = asdict(spec)
    d["mix"] = {k.value: v for k, v in spec.mix.items()}
    return d
