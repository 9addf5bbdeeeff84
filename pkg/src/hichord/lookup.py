"""Lookup procedures with per-hop and per-link latency accounting.

Hop accounting for the hierarchy: reaching the origin's superpeer is one hop,
forwarding on to its ultra-superpeer is a second, and each finger forwarding on
the ultra ring adds one more.  Index checks are free.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping

from hichord.chord import ChordRing
from hichord.errors import InvalidOrigin, NoRouteError
from hichord.hierarchy import Overlay, Role
from hichord.ident import Id, IdSpace, hash_id

HIERARCHY_DISCOUNT = 0.5


class Outcome(str, enum.Enum):
    FOUND = "found"
    NOT_FOUND = "not-found"


class Level(str, enum.Enum):
    LOCAL_SUPER = "A"
    OWN_ULTRA = "B"
    RING = "C"


@dataclass
class LookupTrace:
    key_id: Id
    origin: Id
    outcome: Outcome
    resolution_level: Level
    hops: int
    ring_hops: int
    latency: float
    path: list[tuple[Id, Role]]
    peers: frozenset[Id] = frozenset()
    mode: str = "hierarchical"
    owner: Id | None = None
    failed: bool = field(default=False)

    @property
    def found(self) -> bool:
        return self.outcome is Outcome.FOUND


def account_latency(path: list[tuple[Id, Role]], latencies: Mapping[Id, float], mode: str = "hierarchical") -> float:
    """Sum of receiver link latencies along ``path``.

    In hierarchical mode a link into a superpeer or ultra-superpeer costs half
    the receiver's base latency.
    """
    if mode not in ("flat", "hierarchical"):
        raise ValueError(f"unknown accounting mode {mode!r}")
    total = 0.0
    for pid, role in path[1:]:
        base = latencies[pid]
        if mode == "hierarchical" and role in (Role.SUPER, Role.ULTRA):
            base *= HIERARCHY_DISCOUNT
        total += base
    return total


def _trace(overlay, key, origin, outcome, level, path, ring_hops, peers=frozenset(), failed=False, owner=None):
    return LookupTrace(
        key_id=key,
        origin=origin,
        outcome=outcome,
        resolution_level=level,
        hops=len(path) - 1,
        ring_hops=ring_hops,
        latency=account_latency(path, overlay.latency, "hierarchical"),
        path=path,
        peers=frozenset(peers),
        owner=owner,
        failed=failed,
    )


def hierarchical_lookup(origin: Id, key_name: bytes | str, overlay: Overlay) -> LookupTrace:
    return lookup_key_id(origin, hash_id(key_name, overlay.space), overlay)


def lookup_key_id(origin: Id, key: Id, overlay: Overlay) -> LookupTrace:
    """Resolve ``key`` from an ordinary peer: own superpeer, own ultra-superpeer, then the ring."""
    o = overlay.peers.get(origin)
    if o is None or not o.alive:
        raise InvalidOrigin(f"origin {origin} is not a live peer")
    if o.role is not Role.ORDINARY:
        raise InvalidOrigin(f"origin {origin} is a {o.role.value}; lookups start at ordinary peers")
    path = [(origin, Role.ORDINARY)]

    sid = o.superpeer
    path.append((sid, Role.SUPER))
    s = overlay.peers.get(sid)
    if s is None or not s.alive:
        return _trace(overlay, key, origin, Outcome.NOT_FOUND, Level.LOCAL_SUPER, path, 0, failed=True)
    hit = s.index.get(key)
    if hit:
        return _trace(overlay, key, origin, Outcome.FOUND, Level.LOCAL_SUPER, path, 0, hit)

    uid = s.ultra
    path.append((uid, Role.ULTRA))
    u = overlay.peers.get(uid)
    if u is None or not u.alive:
        return _trace(overlay, key, origin, Outcome.NOT_FOUND, Level.OWN_ULTRA, path, 0, failed=True)
    hit = u.ultra_index.peers_for(key) | u.mirror.peers_for(key)
    if hit:
        return _trace(overlay, key, origin, Outcome.FOUND, Level.OWN_ULTRA, path, 0, hit)

    found: dict[str, set[Id]] = {}

    def check(node_id: Id) -> bool:
        peer = overlay.peers.get(node_id)
        if peer is None or peer.role is not Role.ULTRA:
            return False
        rows = peer.ultra_index.peers_for(key) | peer.mirror.peers_for(key)
        if rows:
            found["peers"] = rows
            return True
        return False

    try:
        route = overlay.ring.find_successor(uid, key, visit=check)
    except NoRouteError:
        return _trace(overlay, key, origin, Outcome.NOT_FOUND, Level.RING, path, 0, failed=True)
    path.extend((nid, Role.ULTRA) for nid in route.path[1:])
    peers = found.get("peers", frozenset())
    outcome = Outcome.FOUND if peers else Outcome.NOT_FOUND
    return _trace(overlay, key, origin, outcome, Level.RING, path, route.ring_hops, peers, owner=route.owner)


class FlatNetwork:
    """Baseline: every peer is a ring member and keys live at their owner."""

    def __init__(self, ring: ChordRing, latencies: Mapping[Id, float]):
        self.ring = ring
        self.space: IdSpace = ring.space
        self.latency = dict(latencies)
        self.store: dict[Id, dict[Id, set[Id]]] = {}

    def publish(self, peer: Id, key_name: bytes | str) -> Id:
        key = hash_id(key_name, self.space)
        self.publish_id(peer, key)
        return key

    def publish_id(self, peer: Id, key: Id) -> None:
        owner = self.ring.owner_of(key)
        self.store.setdefault(owner, {}).setdefault(key, set()).add(peer)

    def stored(self, node: Id, key: Id) -> set[Id]:
        return set(self.store.get(node, {}).get(key, ()))


def flat_lookup(origin: Id, key_name: bytes | str, network: FlatNetwork) -> LookupTrace:
    return flat_lookup_id(origin, hash_id(key_name, network.space), network)


def flat_lookup_id(origin: Id, key: Id, network: FlatNetwork) -> LookupTrace:
    route = network.ring.find_successor(origin, key)
    path = [(nid, Role.ORDINARY) for nid in route.path]
    peers = network.stored(route.owner, key)
    return LookupTrace(
        key_id=key,
        origin=origin,
        outcome=Outcome.FOUND if peers else Outcome.NOT_FOUND,
        resolution_level=Level.RING,
        hops=route.ring_hops,
        ring_hops=route.ring_hops,
        latency=account_latency(path, network.latency, "flat"),
        path=path,
        peers=frozenset(peers),
        mode="flat",
        owner=route.owner,
    )
