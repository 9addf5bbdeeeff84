import itertools
import random

import pytest

from hichord.chord import (
    ChordRing,
    FingerEntry,
    RingNode,
    build_finger_table,
    closest_preceding_finger,
    optimize_finger_table,
    successor_of,
)
from hichord.errors import CollisionError, NoRouteError
from hichord.ident import IdSpace

S3 = IdSpace(3)


def scan_owner(ids, key, modulus):
    return min(ids, key=lambda n: (n - key) % modulus)


def test_find_successor_examples():
    ring = ChordRing.from_ids([0, 1, 3], S3)
    assert ring.find_successor(1, 6).owner == 0
    r = ring.find_successor(1, 1)
    assert (r.owner, r.ring_hops) == (1, 0)
    single = ChordRing.from_ids([5], S3)
    for t in range(8):
        r = single.find_successor(5, t)
        assert (r.owner, r.ring_hops) == (5, 0)


def test_empty_ring_has_no_route():
    with pytest.raises(NoRouteError):
        ChordRing(S3).find_successor(0, 1)
    with pytest.raises(NoRouteError):
        successor_of([], 3)


def test_finger_table_examples():
    ring_ids = [0, 1, 3]
    t = build_finger_table(1, ring_ids, S3)
    assert [f.start for f in t] == [2, 3, 5]
    assert [f.node for f in t] == [3, 3, 0]
    t = build_finger_table(3, ring_ids, S3)
    assert [f.start for f in t] == [4, 5, 7]
    assert [f.node for f in t] == [0, 0, 0]
    assert [f.node for f in build_finger_table(0, [0], S3)] == [0, 0, 0]


def test_closest_preceding_finger_examples():
    node = RingNode(1, 3, 0, [FingerEntry(2, 3), FingerEntry(3, 3), FingerEntry(5, 0)])
    assert closest_preceding_finger(node, 6) == 3
    assert closest_preceding_finger(node, 2) == 1
    lone = RingNode(1, 3, 0, [FingerEntry(2, 3)])
    assert closest_preceding_finger(lone, 6) == 3


def test_optimize_examples():
    def nodes(xs):
        return [f.node for f in optimize_finger_table([FingerEntry(i, n) for i, n in enumerate(xs)])]

    assert nodes([3, 3, 0]) == [3, 0]
    assert nodes([0, 0, 0]) == [0]
    assert nodes([1, 2, 4]) == [1, 2, 4]
    kept = optimize_finger_table([FingerEntry(2, 3), FingerEntry(3, 3), FingerEntry(5, 0)])
    assert kept[0].start == 2


def test_stabilize_after_failure():
    ring = ChordRing.from_ids([0, 1, 3], S3)
    ring.fail(3)
    ring.stabilize(1)
    assert ring.nodes[1].successor == 0


def test_stabilize_is_identity_on_stable_ring():
    ring = ChordRing.from_ids([0, 1, 3, 6], S3)
    before = ring._pointer_snapshot()
    for nid in ring.live:
        ring.stabilize(nid)
    assert ring._pointer_snapshot() == before


def test_join_then_stabilize():
    ring = ChordRing.from_ids([0, 1, 3], S3)
    ring.join(6, bootstrap=1)
    assert ring.live == [0, 1, 3, 6]
    ring.stabilize_all()
    assert ring.nodes[0].predecessor == 6
    assert ring.nodes[3].successor == 6
    assert ring.is_converged()


def test_join_empty_and_duplicate():
    ring = ChordRing(S3)
    ring.join(4)
    assert ring.live == [4] and ring.nodes[4].successor == 4
    ring.join(1, bootstrap=4)
    with pytest.raises(CollisionError):
        ring.join(1, bootstrap=4)


def test_leave_rewires_neighbours():
    ring = ChordRing.from_ids([0, 1, 3, 6], S3)
    ring.leave(3)
    assert ring.nodes[1].successor == 6 and ring.nodes[6].predecessor == 1
    ring.leave(6)
    ring.leave(1)
    assert ring.nodes[0].successor == 0
    assert ring.find_successor(0, 5).owner == 0


def test_all_others_dead_gives_singleton():
    ring = ChordRing.from_ids([0, 2, 5], S3)
    ring.fail(2)
    ring.fail(5)
    ring.stabilize(0)
    assert ring.nodes[0].successor == 0
    assert ring.find_successor(0, 3).owner == 0


def test_successor_walk_visits_every_node_once():
    rng = random.Random(4)
    s = IdSpace(12)
    ids = rng.sample(range(s.modulus), 60)
    ring = ChordRing(s)
    ring.join(ids[0])
    for nid in ids[1:]:
        ring.join(nid, bootstrap=ids[0])
        ring.stabilize_all()
    assert ring.is_converged()
    seen, cur = [], ids[0]
    for _ in range(len(ids)):
        seen.append(cur)
        cur = ring.nodes[cur].successor
    assert cur == ids[0] and sorted(seen) == sorted(ids)


def test_routing_survives_dead_hops():
    rng = random.Random(9)
    s = IdSpace(10)
    ids = rng.sample(range(s.modulus), 80)
    ring = ChordRing.from_ids(ids, s)
    for victim in ids[::5]:
        ring.fail(victim)
    live = ring.live
    for _ in range(300):
        key = rng.randrange(s.modulus)
        r = ring.find_successor(rng.choice(live), key)
        assert r.owner == scan_owner(live, key, s.modulus)


def all_rings(m, max_members=None):
    mod = 1 << m
    for size in range(1, (max_members or mod) + 1):
        yield from itertools.combinations(range(mod), size)


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_exhaustive_owner_oracle_small(m):
    s = IdSpace(m)
    for ids in all_rings(m):
        ring = ChordRing.from_ids(ids, s)
        for origin in ids:
            for key in range(s.modulus):
                assert ring.find_successor(origin, key).owner == scan_owner(ids, key, s.modulus)


def test_randomized_owner_oracle_m6():
    s = IdSpace(6)
    rng = random.Random(1)
    for _ in range(200):
        ids = rng.sample(range(64), rng.randint(1, 64))
        ring = ChordRing.from_ids(ids, s)
        for origin in ids:
            key = rng.randrange(64)
            assert ring.find_successor(origin, key).owner == scan_owner(ids, key, 64)


@pytest.mark.parametrize("n", [256, 1024])
def test_mean_hops_near_half_log(n):
    import math

    rng = random.Random(n)
    s = IdSpace(16)
    ids = rng.sample(range(s.modulus), n)
    ring = ChordRing.from_ids(ids, s)
    hops = [ring.find_successor(rng.choice(ids), rng.randrange(s.modulus)).ring_hops for _ in range(10_000)]
    mean = sum(hops) / len(hops)
    assert abs(mean - 0.5 * math.log2(n)) <= 0.15 * 0.5 * math.log2(n)
