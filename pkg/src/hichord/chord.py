"""Flat Chord ring: pointers, finger tables, stabilization and iterative lookup.

The ring is used twice: as the baseline system, where every peer is a ring
member, and as the upper layer of the hierarchy, where only ultra-superpeers
are.  Membership knowledge held by ``ChordRing`` itself (``live``) is the
simulator's global view; nodes route only with their own pointers and fingers.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Iterable

from hichord.errors import CollisionError, NoRouteError
from hichord.ident import Bounds, Id, IdSpace, id_add, in_interval


@dataclass
class FingerEntry:
    start: Id
    node: Id


@dataclass
class RingNode:
    id: Id
    successor: Id
    predecessor: Id | None = None
    fingers: list[FingerEntry] = field(default_factory=list)
    optimized: bool = False
    alive: bool = True


@dataclass
class RouteResult:
    owner: Id
    ring_hops: int
    path: list[Id]
    early: bool = False


def successor_of(sorted_ids: list[Id], target: Id) -> Id:
    """First id clockwise from ``target`` (inclusive) in a sorted id list."""
    if not sorted_ids:
        raise NoRouteError("empty ring")
    i = bisect.bisect_left(sorted_ids, target)
    return sorted_ids[i % len(sorted_ids)]


def predecessor_of(sorted_ids: list[Id], target: Id) -> Id:
    """Last id strictly counter-clockwise from ``target``."""
    if not sorted_ids:
        raise NoRouteError("empty ring")
    i = bisect.bisect_left(sorted_ids, target)
    return sorted_ids[i - 1]


def build_finger_table(node_id: Id, ring_ids: Iterable[Id], space: IdSpace) -> list[FingerEntry]:
    ids = sorted(ring_ids)
    if not ids:
        raise NoRouteError("empty ring")
    table = []
    for i in range(space.m):
        start = id_add(node_id, 1 << i, space)
        table.append(FingerEntry(start, successor_of(ids, start)))
    return table


def optimize_finger_table(fingers: list[FingerEntry]) -> list[FingerEntry]:
    """Drop entries that repeat the node of the previously retained entry."""
    kept: list[FingerEntry] = []
    for entry in fingers:
        if kept and kept[-1].node == entry.node:
            continue
        kept.append(entry)
    return kept


def closest_preceding_finger(node: RingNode, target: Id) -> Id:
    for entry in reversed(node.fingers):
        if entry.node != node.id and in_interval(entry.node, node.id, target, Bounds.OPEN_OPEN):
            return entry.node
    return node.id


class ChordRing:
    """A single Chord ring over an identifier space.

    ``optimized=True`` makes every node keep the deduplicated finger table.
    """

    def __init__(self, space: IdSpace, optimized: bool = False):
        self.space = space
        self.optimized = optimized
        self.nodes: dict[Id, RingNode] = {}
        self.live: list[Id] = []

    def __len__(self):
        return len(self.live)

    def __contains__(self, node_id):
        node = self.nodes.get(node_id)
        return node is not None and node.alive

    def is_alive(self, node_id: Id) -> bool:
        return node_id in self

    def owner_of(self, key: Id) -> Id:
        """Ground-truth circular successor over live members."""
        return successor_of(self.live, key)

    # -- construction --------------------------------------------------

    @classmethod
    def from_ids(cls, ids: Iterable[Id], space: IdSpace, optimized: bool = False) -> "ChordRing":
        """A ring whose pointers and fingers are already at their fixed point."""
        ring = cls(space, optimized)
        ids = sorted(set(ids))
        if not ids:
            return ring
        ring.live = list(ids)
        for nid in ids:
            ring.nodes[nid] = RingNode(nid, nid, None, optimized=optimized)
        for nid in ids:
            ring._refresh_fingers(ring.nodes[nid])
            node = ring.nodes[nid]
            node.successor = successor_of(ids, id_add(nid, 1, space))
            node.predecessor = predecessor_of(ids, nid) if len(ids) > 1 else None
        return ring

    def join(self, new_id: Id, bootstrap: Id | None = None) -> RingNode:
        """Standard Chord join; pointers are repaired by later stabilization."""
        self.space.check(new_id)
        if new_id in self.nodes and self.nodes[new_id].alive:
            raise CollisionError(f"identifier {new_id} already on the ring")
        if not self.live:
            node = RingNode(new_id, new_id, None, optimized=self.optimized)
        else:
            if bootstrap is None or not self.is_alive(bootstrap):
                raise NoRouteError(f"bootstrap {bootstrap} is not a live ring member")
            succ = self.find_successor(bootstrap, new_id).owner
            node = RingNode(new_id, succ, None, optimized=self.optimized)
        self.nodes[new_id] = node
        bisect.insort(self.live, new_id)
        self._refresh_fingers(node)
        return node

    def fail(self, node_id: Id) -> None:
        """Crash ``node_id``; other nodes learn of it only through stabilization."""
        node = self.nodes[node_id]
        if not node.alive:
            return
        node.alive = False
        self.live.remove(node_id)

    def leave(self, node_id: Id) -> None:
        """Graceful departure: neighbours are told before the node goes."""
        node = self.nodes[node_id]
        self.fail(node_id)
        if not self.live:
            return
        if len(self.live) == 1:
            only = self.nodes[self.live[0]]
            only.successor, only.predecessor = only.id, None
            self._refresh_fingers(only)
            return
        succ = successor_of(self.live, node_id)
        pred = predecessor_of(self.live, node_id)
        self.nodes[pred].successor = succ
        self.nodes[succ].predecessor = pred
        node.successor = succ

    def purge(self, node_id: Id) -> None:
        """Forget a dead node entirely (once nobody points at it)."""
        node = self.nodes.get(node_id)
        if node is not None and not node.alive:
            del self.nodes[node_id]

    # -- maintenance ---------------------------------------------------

    def _refresh_fingers(self, node: RingNode) -> None:
        table = build_finger_table(node.id, self.live, self.space)
        node.fingers = optimize_finger_table(table) if node.optimized else table

    def _first_live_successor(self, node: RingNode) -> Id:
        # the first live finger may skip live nodes behind a dead successor, so
        # recovery reads the global view (a successor list of unbounded depth)
        return successor_of(self.live, id_add(node.id, 1, self.space))

    def stabilize(self, node_id: Id) -> RingNode:
        node = self.nodes[node_id]
        if not node.alive:
            return node
        if len(self.live) == 1:
            node.successor = node.id
            node.predecessor = None
            self._refresh_fingers(node)
            return node
        if node.predecessor is not None and not self.is_alive(node.predecessor):
            node.predecessor = None
        if not self.is_alive(node.successor) or node.successor == node.id:
            node.successor = self._first_live_successor(node)
        succ = self.nodes[node.successor]
        x = succ.predecessor
        if x is not None and self.is_alive(x) and in_interval(x, node.id, node.successor, Bounds.OPEN_OPEN):
            node.successor = x
            succ = self.nodes[x]
        # notify
        if (
            succ.predecessor is None
            or not self.is_alive(succ.predecessor)
            or in_interval(node.id, succ.predecessor, succ.id, Bounds.OPEN_OPEN)
        ):
            succ.predecessor = node.id
        self._refresh_fingers(node)
        return node

    def stabilize_all(self, max_rounds: int = 64) -> int:
        """Run stabilization rounds over every live node until nothing changes."""
        for rnd in range(1, max_rounds + 1):
            before = self._pointer_snapshot()
            for nid in list(self.live):
                self.stabilize(nid)
            if self._pointer_snapshot() == before:
                return rnd
        return max_rounds

    def _pointer_snapshot(self):
        return tuple(
            (nid, self.nodes[nid].successor, self.nodes[nid].predecessor,
             tuple(f.node for f in self.nodes[nid].fingers))
            for nid in self.live
        )

    def is_converged(self) -> bool:
        n = len(self.live)
        for i, nid in enumerate(self.live):
            node = self.nodes[nid]
            if node.successor != self.live[(i + 1) % n]:
                return False
            expected_pred = self.live[i - 1] if n > 1 else None
            if node.predecessor != expected_pred:
                return False
        return True

    # -- routing -------------------------------------------------------

    def _owns(self, node: RingNode, target: Id) -> bool:
        if node.successor == node.id:
            return True
        if node.predecessor is None:
            return target == node.id
        return in_interval(target, node.predecessor, node.id, Bounds.OPEN_CLOSED)

    def find_successor(self, origin: Id, target: Id, visit: Callable[[Id], bool] | None = None) -> RouteResult:
        """Iterative closest-preceding-finger routing from ``origin`` toward ``target``.

        ``ring_hops`` counts finger forwardings until the query sits at the
        owner's predecessor (or at the owner itself); naming the owner from the
        predecessor's successor pointer is not a forwarding.  A forwarding that
        lands on a dead node still costs a hop; the sender then stabilizes and
        retries the step once.

        ``visit`` is called on every live node the query reaches, and on the
        owner once it is named; a true result at an intermediate node ends the
        walk there with ``early=True``.
        """
        if not self.live:
            raise NoRouteError("empty ring")
        if not self.is_alive(origin):
            raise NoRouteError(f"origin {origin} is not a live ring member")
        cur = self.nodes[origin]
        path = [origin]
        hops = 0
        if self._owns(cur, target):
            return RouteResult(origin, 0, path)
        limit = 4 * max(len(self.nodes), 1) + 8
        while hops < limit:
            for _attempt in range(2):
                succ_id = cur.successor
                if in_interval(target, cur.id, succ_id, Bounds.OPEN_CLOSED):
                    if self.is_alive(succ_id):
                        if visit is not None:
                            visit(succ_id)
                        return RouteResult(succ_id, hops, path)
                    hops += 1
                    path.append(succ_id)
                    self.stabilize(cur.id)
                    continue
                nxt = closest_preceding_finger(cur, target)
                if nxt == cur.id:
                    nxt = succ_id
                hops += 1
                path.append(nxt)
                if self.is_alive(nxt):
                    cur = self.nodes[nxt]
                    if visit is not None and visit(nxt):
                        return RouteResult(nxt, hops, path, early=True)
                    break
                self.stabilize(cur.id)
            if len(self.live) == 1:
                return RouteResult(self.live[0], hops, path)
        raise NoRouteError(f"routing from {origin} to {target} did not terminate")
