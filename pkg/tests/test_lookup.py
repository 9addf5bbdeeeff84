import math
import random

import pytest

from hichord.chord import ChordRing
from hichord.errors import InvalidOrigin
from hichord.hierarchy import Role
from hichord.ident import IdSpace, hash_id
from hichord.lookup import (
    FlatNetwork,
    Level,
    account_latency,
    flat_lookup,
    flat_lookup_id,
    hierarchical_lookup,
    lookup_key_id,
)

from conftest import make_overlay


@pytest.fixture
def four_ultras():
    ov = make_overlay([10, 25, 40, 55], [5, 8, 20, 22, 35, 38, 50, 52],
                      [1, 3, 6, 9, 12, 18, 21, 24, 30, 36, 39, 45, 51, 53, 60])
    for pid in ov.role_ids(Role.ORDINARY):
        ov.publish_id(pid, pid)  # key id equals publisher id keeps the fixture readable
    return ov


def test_case_a(four_ultras):
    t = lookup_key_id(3, 1, four_ultras)  # 1 and 3 share superpeer 5
    assert (t.resolution_level, t.hops, t.found) == (Level.LOCAL_SUPER, 1, True)
    assert t.peers == {1}


def test_case_b(four_ultras):
    t = lookup_key_id(1, 6, four_ultras)  # 6 sits under superpeer 8, same ultra 10
    assert (t.resolution_level, t.hops) == (Level.OWN_ULTRA, 2)
    assert t.peers == {6}


def test_case_c(four_ultras):
    t = lookup_key_id(1, 45, four_ultras)
    assert t.resolution_level is Level.RING
    assert t.hops == 2 + t.ring_hops
    assert t.ring_hops <= math.log2(4)
    assert t.peers == {45}


def test_not_found_ends_at_owner(four_ultras):
    t = lookup_key_id(1, 47, four_ultras)
    assert not t.found and t.owner == 55  # ring owner of 47 among {10,25,40,55}
    assert t.hops == 2 + t.ring_hops


def test_invalid_origins(four_ultras):
    with pytest.raises(InvalidOrigin):
        lookup_key_id(5, 1, four_ultras)  # a superpeer
    four_ultras.fail(3)
    with pytest.raises(InvalidOrigin):
        lookup_key_id(3, 1, four_ultras)


def test_by_name_hashes_key(four_ultras):
    k = four_ultras.publish(60, "report.pdf")
    assert k == hash_id("report.pdf", four_ultras.space)
    assert hierarchical_lookup(1, "report.pdf", four_ultras).peers == {60}


def test_latency_examples():
    lat = {1: 10.0, 2: 80.0, 3: 60.0}
    assert account_latency([(1, Role.ORDINARY)], lat, "flat") == 0.0
    assert account_latency([(1, Role.ORDINARY), (2, Role.ORDINARY), (3, Role.ORDINARY)], lat, "flat") == 140.0
    path = [(1, Role.ORDINARY), (2, Role.SUPER), (3, Role.ULTRA)]
    assert account_latency(path, lat, "hierarchical") == 70.0
    assert account_latency(path, lat, "flat") == 140.0


def test_trace_latency_matches_path(four_ultras):
    t = lookup_key_id(1, 45, four_ultras)
    assert t.latency == pytest.approx(account_latency(t.path, four_ultras.latency, "hierarchical"))


def test_flat_examples():
    s = IdSpace(3)
    net = FlatNetwork(ChordRing.from_ids([0, 1, 3], s), {0: 50.0, 1: 50.0, 3: 50.0})
    t = flat_lookup_id(1, 6, net)
    assert t.owner == 0
    t = flat_lookup_id(1, 1, net)
    assert t.hops == 0 and t.latency == 0.0
    net.publish_id(3, 7)
    assert flat_lookup_id(1, 7, net).peers == {3}


def test_flat_by_name():
    s = IdSpace(8)
    ring = ChordRing.from_ids(range(0, 256, 16), s)
    net = FlatNetwork(ring, {n: 40.0 for n in ring.live})
    net.publish(32, "song")
    assert flat_lookup(0, "song", net).peers == {32}


def test_flat_mean_hops_n1024():
    rng = random.Random(3)
    s = IdSpace(16)
    ids = rng.sample(range(s.modulus), 1024)
    net = FlatNetwork(ChordRing.from_ids(ids, s), {i: 65.0 for i in ids})
    hops = [flat_lookup_id(rng.choice(ids), rng.randrange(s.modulus), net).hops for _ in range(10_000)]
    assert sum(hops) / len(hops) == pytest.approx(5.0, abs=0.75)


def test_soundness_and_completeness():
    from hichord.harness import ExperimentConfig, build_overlay

    ov = build_overlay(ExperimentConfig(N=400, U=16, S=64, lookups=0, seed=2))
    reg = ov.registry()
    rng = random.Random(0)
    origins = ov.role_ids(Role.ORDINARY)
    for k in sorted(reg):
        t = lookup_key_id(rng.choice(origins), k, ov)
        assert t.found and t.peers <= reg[k]
        assert t.hops == {Level.LOCAL_SUPER: 1, Level.OWN_ULTRA: 2}.get(t.resolution_level, 2 + t.ring_hops)
