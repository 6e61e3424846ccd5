"""Path hashing and token tables.

A cached path is identified by its 64-bit key plus an 8-bit token.  The
controller hands out tokens; clients, servers and the switch only store
what they were given.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from .namespace import Path, level_paths

INVALID_TOKEN = 0
MAX_TOKEN = 255
DEFAULT_TOKEN_TTL = 3600.0


class TokenSpaceExhausted(Exception):
    pass


@lru_cache(maxsize=1 << 18)
def _md5_key(canonical: str) -> int:
    return int.from_bytes(hashlib.md5(canonical.encode("utf-8")).digest()[:8], "big")


class Md5Hasher:
    """First 64 bits of MD5 over the canonical path string."""

    name = "md5"

    def __init__(self):
        self.root_key = _md5_key("/")
        self._levels: dict[Path, list[int]] = {}

    def __call__(self, p: Path) -> int:
        if not p:
            return self.root_key
        return _md5_key(str(p))


class WeakHasher:
    """Test hasher that forces collisions: key = depth * buckets + bucket.

    With ``buckets=1`` every path at the same depth gets the same key.
    """

    name = "weak"

    def __init__(self, buckets: int = 1):
        if buckets < 1:
            raise ValueError("buckets must be >= 1")
        self.buckets = buckets
        self.root_key = 0
        self._levels: dict[Path, list[int]] = {}

    def __call__(self, p: Path) -> int:
        b = _md5_key(str(p)) % self.buckets if self.buckets > 1 else 0
        return len(p) * self.buckets + b


def make_hasher(name: str = "md5", buckets: int = 1):
    if name == "md5":
        return Md5Hasher()
    if name == "weak":
        return WeakHasher(buckets)
    raise ValueError(f"unknown hasher {name!r}")


_DEFAULT = Md5Hasher()


def hash_level(p: Path, hasher=None) -> int:
    return (hasher or _DEFAULT)(p)


def hash_read_request(p: Path, hasher=None) -> list[int]:
    h = hasher or _DEFAULT
    memo = getattr(h, "_levels", None)
    if memo is None:
        return [h(q) for q in level_paths(p)]
    keys = memo.get(p)
    if keys is None:
        keys = memo[p] = [h(q) for q in level_paths(p)]
    return list(keys)


def hash_write_request(p: Path, hasher=None) -> int:
    return (hasher or _DEFAULT)(p)


class TokenAllocator:
    """Controller-side path->token and key->tokens maps.

    Entries are never dropped, so a path that gets evicted and re-admitted
    keeps its token.
    """

    def __init__(self):
        self.path_token: dict[Path, int] = {}
        self.key_tokens: dict[int, dict[int, Path]] = {}
        self.next_free: dict[int, int] = {}

    def allocate(self, p: Path, key: int) -> int:
        tok = self.path_token.get(p)
        if tok is not None:
            return tok
        used = self.key_tokens.setdefault(key, {})
        if len(used) >= MAX_TOKEN:
            raise TokenSpaceExhausted(f"key {key:#x} already has {MAX_TOKEN} paths")
        tok = 1
        while tok in used:
            tok += 1
        used[tok] = p
        self.path_token[p] = tok
        nf = tok + 1
        while nf in used:
            nf += 1
        self.next_free[key] = max(self.next_free.get(key, 1), nf)
        return tok

    def token_of(self, p: Path) -> int:
        return self.path_token.get(p, INVALID_TOKEN)

    def check(self) -> list[str]:
        problems = []
        for key, used in self.key_tokens.items():
            if used and self.next_free.get(key, 1) <= max(used):
                problems.append(f"next_free for {key:#x} not above issued tokens")
            for tok, p in used.items():
                if not 1 <= tok <= MAX_TOKEN:
                    problems.append(f"token {tok} out of range for {p}")
                if self.path_token.get(p) != tok:
                    problems.append(f"maps disagree for {p}")
        return problems


def allocate_token(controller_maps: TokenAllocator, p: Path, k: int) -> int:
    return controller_maps.allocate(p, k)


@dataclass
class PathTokenMap:
    """Path -> (token, expiry).  ``ttl=None`` means entries never expire.

    ``base`` is an optional shared, read-only path -> token map that stands
    in for tokens learned before the run started; local entries override
    it and it never expires.
    """

    ttl: float | None = DEFAULT_TOKEN_TTL
    entries: dict[Path, tuple[int, float]] = field(default_factory=dict)
    base: dict[Path, int] | None = None

    def learn(self, p: Path, token: int, now: float) -> None:
        if token == INVALID_TOKEN:
            self.forget(p)
            return
        expiry = float("inf") if self.ttl is None else now + self.ttl
        self.entries[p] = (token, expiry)

    def forget(self, p: Path) -> None:
        if self.base is not None and p in self.base:
            self.entries[p] = (INVALID_TOKEN, float("inf"))
        else:
            self.entries.pop(p, None)

    def get(self, p: Path, now: float) -> int:
        e = self.entries.get(p)
        if e is None:
            return self.base.get(p, INVALID_TOKEN) if self.base is not None else INVALID_TOKEN
        if e[1] <= now:
            del self.entries[p]
            return INVALID_TOKEN
        return e[0]

    def __len__(self) -> int:
        return sum(1 for p in self.paths())

    def paths(self):
        seen = set()
        for p, (t, _) in self.entries.items():
            seen.add(p)
            if t != INVALID_TOKEN:
                yield p
        if self.base is not None:
            for p in self.base:
                if p not in seen:
                    yield p

    def __contains__(self, p: Path) -> bool:
        e = self.entries.get(p)
        if e is not None:
            return e[0] != INVALID_TOKEN
        return self.base is not None and p in self.base


def client_token_for(client_map: PathTokenMap, p: Path, now: float) -> int:
    return client_map.get(p, now)


class HashTokenMap:
    """(key, token) -> cache slot, with per-key token uniqueness."""

    def __init__(self):
        self._map: dict[tuple[int, int], int] = {}

    def lookup(self, key: int, token: int) -> int | None:
        if token == INVALID_TOKEN:
            return None
        return self._map.get((key, token))

    def insert(self, key: int, token: int, slot: int) -> None:
        if token == INVALID_TOKEN:
            raise ValueError("token 0 cannot be installed")
        if (key, token) in self._map:
            raise KeyError(f"({key:#x}, {token}) already installed")
        self._map[(key, token)] = slot

    def remove(self, key: int, token: int) -> int:
        return self._map.pop((key, token))

    def __contains__(self, kt) -> bool:
        return kt in self._map

    def __len__(self) -> int:
        return len(self._map)

    def items(self):
        return self._map.items()
