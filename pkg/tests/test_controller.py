import random
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fletchsim.controller import (ControllerState, NothingEvictable, SyncDriver, admission,
                                  evict_until_space, periodic_frequency_pull,
                                  select_eviction_candidates)
from fletchsim.hashing import Md5Hasher
from fletchsim.namespace import ROOT, levels_of

from .helpers import P, make_tree, scripted

SWAP_TREE = {"/a": 0o755, "/a/b.txt": 0o644, "/e": 0o755, "/e/f.txt": 0o644,
             "/c": 0o755, "/c/d.txt": 0o644}


def swap_rig():
    sim = scripted(make_tree(SWAP_TREE), [[]], capacity=5)
    sim.do_preload([P("/a/b.txt"), P("/e/f.txt")])
    st_ = sim.state
    st_.reported = {P("/a"): 1, P("/e"): 1, P("/a/b.txt"): 12, P("/e/f.txt"): 5}
    live = {"/a": 0, "/e": 0, "/a/b.txt": 5, "/e/f.txt": 10}
    for raw, n in live.items():
        sim.switch.freq[st_.slot_of[P(raw)]] = n
    return sim


def test_swap_candidates():
    sim = swap_rig()
    cands = select_eviction_candidates(sim.state, 2, frozenset(levels_of(P("/c/d.txt"))))
    assert set(cands) == {P("/a"), P("/e"), P("/a/b.txt"), P("/e/f.txt")}
    live = {P("/a"): 0, P("/e"): 0, P("/a/b.txt"): 5, P("/e/f.txt"): 10}
    assert evict_until_space(sim.state, cands, live, 2) == [P("/a/b.txt"), P("/a")]


def test_swap_replay():
    t0 = time.perf_counter()
    sim = swap_rig()
    drv = SyncDriver(sim.state, sim.switch, sim.cluster)
    out = drv.on_hot_report(P("/c/d.txt"))
    assert out["status"] == "admitted"
    assert set(out["evicted"]) == {P("/a"), P("/a/b.txt")}
    assert out["admitted"] == [P("/c"), P("/c/d.txt")]
    final = {str(p) for p in sim.state.cached}
    assert final == {"/", "/e", "/e/f.txt", "/c", "/c/d.txt"}
    assert {str(p) for _, p, _, _ in sim.switch.cached_entries()} == final - {"/"}
    assert sim.state.check() == []
    assert time.perf_counter() - t0 < 1.0


def test_chain_candidates():
    st_ = ControllerState(8, Md5Hasher())
    st_.add(P("/x"), st_.take_slot())
    st_.add(P("/x/y.txt"), st_.take_slot())
    assert select_eviction_candidates(st_, 1) == [P("/x/y.txt"), P("/x")]


def test_candidate_cap_and_need_zero():
    st_ = ControllerState(32, Md5Hasher())
    for i in range(10):
        st_.add(P(f"/l{i}"), st_.take_slot())
    assert len(select_eviction_candidates(st_, 1)) == 2
    assert select_eviction_candidates(st_, 0) == []
    assert evict_until_space(st_, [], {}, 0) == []


def test_only_root_is_not_evictable():
    st_ = ControllerState(4, Md5Hasher())
    with pytest.raises(NothingEvictable):
        select_eviction_candidates(st_, 1)


def test_tie_break_deepest_then_lexicographic():
    st_ = ControllerState(16, Md5Hasher())
    for raw in ("/b", "/b/z", "/a", "/a/y"):
        st_.add(P(raw), st_.take_slot())
    live = {}
    cands = select_eviction_candidates(st_, 2)
    runs = {tuple(evict_until_space(st_, cands, live, st_.free() + 1)) for _ in range(5)}
    assert len(runs) == 1
    (order,) = runs
    assert order[:2] == (P("/a/y"), P("/a"))


def test_admission_single_and_noop():
    sim = scripted(make_tree(SWAP_TREE), [[]], capacity=16)
    drv = SyncDriver(sim.state, sim.switch, sim.cluster)
    assert drv.on_hot_report(P("/a"))["admitted"] == [P("/a")]
    assert drv.on_hot_report(P("/a/b.txt"))["admitted"] == [P("/a/b.txt")]
    assert drv.on_hot_report(P("/a/b.txt"))["status"] == "noop"


def test_admission_of_missing_path_aborts_and_unblocks():
    sim = scripted(make_tree(SWAP_TREE), [[]], capacity=16)
    drv = SyncDriver(sim.state, sim.switch, sim.cluster)
    out = drv.on_hot_report(P("/zz/q.txt"))
    assert out["status"] == "aborted"
    assert not sim.cluster.blocked
    assert sim.state.size() == 1


def test_token_kept_across_eviction():
    sim = scripted(make_tree(SWAP_TREE), [[]], capacity=2)
    drv = SyncDriver(sim.state, sim.switch, sim.cluster)
    drv.on_hot_report(P("/a"))
    t = sim.state.tokens.token_of(P("/a"))
    drv.on_hot_report(P("/e"))                 # evicts /a
    assert P("/a") not in sim.state
    drv.on_hot_report(P("/a"))                 # evicts /e, readmits /a
    assert sim.state.tokens.token_of(P("/a")) == t


def test_periodic_pull():
    sim = swap_rig()
    sw = sim.switch
    for _ in range(11):
        sw.cms_update_and_check(99, P("/c"))
    before = {p: int(sw.freq[s]) for p, s in sim.state.slot_of.items()}
    rep = periodic_frequency_pull(sim.state, sw)
    assert rep == before and sim.state.reported == before
    assert sw.cms.estimate(99) == 0
    assert sw.pull_frequencies(list(sim.state.slot_of.values())) == \
        {s: 0 for s in sim.state.slot_of.values()}
    assert set(periodic_frequency_pull(sim.state, sw).values()) == {0}


# ----------------------------------------------------------------------
# closure fuzz: random admissions/evictions under capacity pressure

def _fuzz(seed: int, n_actions: int):
    rng = random.Random(seed)
    names = ["a", "b", "c", "d"]
    spec = {}
    for d1 in names:
        spec[f"/{d1}"] = 0o755
        for d2 in names:
            spec[f"/{d1}/{d2}"] = 0o755
            for f in names:
                spec[f"/{d1}/{d2}/{f}.txt"] = 0o644
    tree = make_tree(spec)
    paths = [P(s) for s in spec]
    cap = rng.choice([2, 3, 4, 6, 9, 16])
    sim = scripted(tree, [[]], capacity=cap)
    st_, sw = sim.state, sim.switch
    drv = SyncDriver(st_, sw, sim.cluster)
    # watch every eviction: a path is never removed while a descendant is cached
    real_evict = sw.evict

    def watched(k, t):
        slot = sw.mat.lookup(k, t)
        victim = sw.slot_path[slot]
        cached_now = {p for _, p, _, _ in sw.cached_entries()}
        bad = [q for q in cached_now if q != victim and victim in levels_of(q)]
        assert not bad, f"evicted {victim} with cached descendants {bad}"
        return real_evict(k, t)
    sw.evict = watched
    for _ in range(n_actions):
        r = rng.random()
        if r < 0.15:
            periodic_frequency_pull(st_, sw)
        elif r < 0.3 and st_.slot_of:
            p = rng.choice(sorted(st_.slot_of, key=str))
            sw.freq[st_.slot_of[p]] += rng.randint(0, 20)
        else:
            drv.on_hot_report(rng.choice(paths))
        assert st_.check() == []
        cached = set(st_.cached)
        for p in cached:
            assert all(q in cached for q in levels_of(p))
        assert ROOT in cached and st_.size() <= cap
        sw_paths = {p for _, p, _, _ in sw.cached_entries()}
        assert sw_paths == cached - {ROOT}


def test_closure_fuzz_10k():
    _fuzz(7, 10_000)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_closure_fuzz_property(seed):
    _fuzz(seed, 300)


def test_admission_generator_install_order():
    """Ancestors are installed before descendants within one admission."""
    sim = scripted(make_tree(SWAP_TREE), [[]], capacity=16)
    gen = admission(sim.state, P("/c/d.txt"))
    drv = SyncDriver(sim.state, sim.switch, sim.cluster)
    cmd = next(gen)
    seen = []
    try:
        while True:
            if cmd[0] == "install":
                seen = [e[4] for e in cmd[1]]
            cmd = gen.send(drv.execute(*cmd))
    except StopIteration:
        pass
    assert seen == [P("/c"), P("/c/d.txt")]

