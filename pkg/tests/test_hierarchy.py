import pytest
from hypothesis import given, strategies as st

from hichord.errors import CollisionError, NotFoundError, PlacementUnavailable, UnsupportedTopology
from hichord.hierarchy import CapabilityProfile, Role, select_candidate
from hichord.errors import InvalidArgument
from hichord.lookup import lookup_key_id

from conftest import make_overlay, peer


def resolvable(ov):
    """Map key -> set of peers found from the first live ordinary."""
    origin = ov.role_ids(Role.ORDINARY, alive_only=True)[0]
    return {k: lookup_key_id(origin, k, ov).peers for k in ov.registry()}


def test_profile_rejects_negative():
    with pytest.raises(InvalidArgument):
        CapabilityProfile(-1.0, 0.0)
    with pytest.raises(InvalidArgument):
        CapabilityProfile(1.0, -5.0)


def test_assign_group_examples():
    ov = make_overlay([40], [20, 35])
    assert ov.assign_group(7) == (40, 20)
    assert ov.assign_group(36) == (40, 20)
    assert ov.assign_group(21) == (40, 35)
    single = make_overlay([9], [3])
    assert {single.assign_group(x) for x in range(64)} == {(9, 3)}


def test_assign_group_needs_a_super():
    ov = make_overlay([10, 40], [5])
    with pytest.raises(PlacementUnavailable):
        ov.assign_group(30)


def test_join_places_peer_in_one_group(small_overlay):
    ov = small_overlay
    groups = [s for s in ov.role_ids(Role.SUPER) if 25 in ov.peers[s].group]
    assert groups == [30]
    assert ov.peers[25].superpeer == 30
    assert ov.validate_topology() == []


def test_join_duplicate_is_rejected(small_overlay):
    before = {pid: (p.role, set(p.group)) for pid, p in small_overlay.peers.items()}
    with pytest.raises(CollisionError):
        small_overlay.join_overlay(peer(25))
    assert {pid: (p.role, set(p.group)) for pid, p in small_overlay.peers.items()} == before


def test_sequential_joins_are_resolvable(small_overlay):
    ov = small_overlay
    ov.join_overlay(peer(33))
    ov.join_overlay(peer(55))
    k1, k2 = ov.publish(33, "alpha"), ov.publish(55, "beta")
    for origin in (2, 47):
        assert 33 in lookup_key_id(origin, k1, ov).peers
        assert 55 in lookup_key_id(origin, k2, ov).peers


def test_publish_rows():
    # ordinary 12 under superpeer 1 publishes key X
    ov = make_overlay([40], [1], [12])
    x = ov.publish(12, "X")
    assert ov.peers[1].index.get(x) == {12}
    assert (12, 1) in ov.peers[40].ultra_index.get(x)
    ov.publish(12, "X")
    assert ov.peers[1].index.get(x) == {12}
    assert len(ov.peers[40].ultra_index.get(x)) == 1


def test_two_publishers_share_a_key(small_overlay):
    ov = small_overlay
    a, b = ov.publish(2, "shared"), ov.publish(40, "shared")
    assert a == b
    assert ov.registry()[a] == {2, 40}


def test_publish_unknown_peer():
    ov = make_overlay([40], [1])
    with pytest.raises(NotFoundError):
        ov.publish(13, "X")


def test_supers_and_ultras_publish_at_their_level(small_overlay):
    ov = small_overlay
    k = ov.publish(30, "from-super")
    assert ov.peers[30].index.get(k) == {30}
    k2 = ov.publish(50, "from-ultra")
    assert (50, 50) in ov.peers[50].ultra_index.get(k2)
    assert ov.validate_topology() == []
    assert lookup_key_id(2, k2, ov).peers == {50}


def test_ping_threshold(small_overlay):
    ov = small_overlay
    _, det = ov.ping_round(10, 0.0)
    assert det == set()
    assert all(v == 0 for v in ov.peers[10].liveness.missed.values())
    k = ov.publish(5, "doomed")
    ov.fail(5)
    assert ov.ping_round(10, 1.0)[1] == set()
    assert ov.ping_round(10, 2.0)[1] == set()
    assert ov.ping_round(10, 3.0)[1] == {5}
    assert not lookup_key_id(2, k, ov).found
    assert ov.validate_topology() == []


def test_ordinary_leave(small_overlay):
    ov = small_overlay
    k = ov.publish(12, "only-here")
    other = ov.publish(40, "stays")
    ov.leave(12)
    assert not lookup_key_id(2, k, ov).found
    assert lookup_key_id(2, other, ov).found
    ov.handle_ordinary_leave(12)  # second call is a no-op
    assert ov.validate_topology() == []


def test_ordinary_leave_without_keys_keeps_indexes(small_overlay):
    ov = small_overlay
    snap = {u: sorted(ov.peers[u].ultra_index.triples()) for u in ov.ultra_ids}
    ov.leave(60)
    assert {u: sorted(ov.peers[u].ultra_index.triples()) for u in ov.ultra_ids} == snap


def test_select_candidate_examples():
    g = [peer(9, cap=10, avail=100), peer(5, cap=10, avail=100)]
    assert select_candidate(g) == 5
    g = [peer(1, cap=99, avail=99, open_=False), peer(7, cap=0, avail=0), peer(3, cap=50, avail=1, open_=False)]
    assert select_candidate(g) == 7
    g = [peer(8, cap=1, avail=1000), peer(4, cap=1000, avail=1)]
    assert select_candidate(g) == 4
    assert select_candidate([]) is None
    assert select_candidate([peer(2, open_=False)]) is None


def test_select_candidate_prefers_upgrade_requests():
    g = [peer(1, cap=100, avail=100), peer(2, cap=1, avail=1)]
    assert select_candidate(g, preferred=[2]) == 2


@given(
    st.lists(st.tuples(st.floats(0, 1e6), st.floats(0, 1e6), st.booleans()), min_size=1, max_size=12),
    st.integers(-20, 20),
)
def test_select_candidate_scale_invariant(rows, power):
    group = [peer(i, cap=c, avail=a, open_=o) for i, (c, a, o) in enumerate(rows)]
    scaled = [peer(i, cap=c * 2.0 ** power, avail=a, open_=o) for i, (c, a, o) in enumerate(rows)]
    chosen = select_candidate(group)
    assert chosen == select_candidate(scaled)
    if chosen is not None:
        assert group[chosen].profile.firewall_open


def test_super_graceful_leave_preserves_lookups(small_overlay):
    ov = small_overlay
    for pid in (2, 5, 12, 25, 40, 47, 60):
        ov.publish(pid, f"k{pid}")
    ov.peers[12].profile = CapabilityProfile(50, 50)
    before = resolvable(ov)
    counts = ov.counts()
    ov.leave(10)
    assert ov.validate_topology() == []
    assert resolvable(ov) == before
    assert ov.counts()[Role.SUPER] == counts[Role.SUPER]


def test_super_failure_recovers_from_ultra_rows(small_overlay):
    ov = small_overlay
    for pid in (2, 5, 12, 25, 40, 47, 60):
        ov.publish(pid, f"k{pid}")
    before = resolvable(ov)
    ov.fail(30)
    for t in range(3):
        ov.ping_round(50, float(t))
    assert 30 not in ov.peers or not ov.peers[30].alive or ov.peers[30].role is not Role.SUPER
    assert ov.validate_topology() == []
    assert resolvable(ov) == before


def test_super_leave_with_empty_group():
    ov = make_overlay([40], [10, 20, 30], [25])
    assert ov.peers[10].group == set()
    ov.leave(10)
    assert ov.peers[40].supers == {20, 30}
    assert ov.validate_topology() == []


def test_ultra_graceful_leave(small_overlay):
    ov = make_overlay([10, 25, 40, 55], [5, 8, 20, 22, 35, 38, 50, 52],
                      [1, 3, 6, 9, 12, 18, 21, 24, 30, 36, 39, 45, 51, 53, 60])
    for pid in ov.role_ids(Role.ORDINARY):
        ov.publish(pid, f"k{pid}")
    before = resolvable(ov)
    counts = ov.counts()
    ov.leave(40)
    ov.stabilize_tick()
    assert len(ov.ring.live) == 4  # a promoted superpeer took the vacated ring slot
    assert 40 not in ov.ring.live
    assert ov.validate_topology() == []
    assert resolvable(ov) == before
    assert ov.counts()[Role.SUPER] == counts[Role.SUPER]
    assert ov.counts()[Role.ULTRA] == counts[Role.ULTRA]


def test_ultra_failure_uses_backup(small_overlay):
    ov = small_overlay
    for pid in (2, 5, 12, 25, 40, 47, 60):
        ov.publish(pid, f"k{pid}")
    ov.stabilize_tick()  # push backups
    before = resolvable(ov)
    ov.fail(50)
    for _ in range(3):
        ov.stabilize_tick()
    assert ov.validate_topology() == []
    assert ov.lost_key_count == 0
    assert resolvable(ov) == before


def test_last_ultra_cannot_leave():
    ov = make_overlay([40], [10], [5])
    with pytest.raises(UnsupportedTopology):
        ov.leave(40)


def test_validate_flags_ordinary_outside_arc():
    ov = make_overlay([40], [10, 30], [5, 20])
    # move 20 into the wrong group by hand
    ov.peers[30].group.discard(20)
    ov.peers[10].group.add(20)
    ov.peers[20].superpeer = 10
    ov.peers[30].index.drop_peer(20)
    for k in ov.peers[20].published_keys:
        ov.peers[10].index.add(k, 20)
    kinds = [v.kind for v in ov.validate_topology()]
    assert kinds == ["c"]


def test_validate_flags_index_drift(small_overlay):
    ov = small_overlay
    k = ov.publish(5, "x")
    ov.peers[10].index.discard(k, 5)
    assert any(v.kind == "d" for v in ov.validate_topology())


def test_churn_soak_keeps_topology_valid():
    from hichord.harness import ExperimentConfig, execute

    cfg = ExperimentConfig(N=200, U=8, S=40, lookups=0, seed=11, join_rate=1.0, leave_rate=1.0,
                           fail_fraction=0.3, churn_events=1000)
    res = execute(cfg)
    assert res.overlay.validate_topology() == []


def test_global_index_coverage():
    from hichord.harness import ExperimentConfig, build_overlay

    ov = build_overlay(ExperimentConfig(N=300, U=10, S=50, lookups=0, seed=5))
    rows = {(k, p) for u in ov.ultra_ids for k, p, _ in ov.peers[u].ultra_index.triples()}
    for k, pubs in ov.registry().items():
        for p in pubs:
            assert (k, p) in rows
