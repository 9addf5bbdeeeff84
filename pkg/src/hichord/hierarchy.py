"""Three-layer overlay: ordinary peers, superpeers and ultra-superpeers.

Ordinary peers hang off a superpeer, superpeers hang off an ultra-superpeer,
and ultra-superpeers form an optimized Chord ring.  Superpeers keep a
``SuperIndex`` (key -> publishing peers of their group); ultra-superpeers keep
the extended ``UltraIndex`` (key -> (peer, superpeer)) for every superpeer they
serve, plus a ``mirror`` of every triple whose key they own on the ring so a
ring walk that ends at the key's owner is conclusive.

Placement follows circular arcs: a superpeer belongs to the ring successor of
its Id among ultra-superpeers, and an ordinary peer belongs to the successor of
its Id among that ultra-superpeer's superpeers.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from hichord.chord import ChordRing, RingNode, predecessor_of, successor_of
from hichord.errors import (
    CollisionError,
    InvalidArgument,
    NotFoundError,
    PlacementUnavailable,
    UnsupportedTopology,
)
from hichord.ident import Bounds, Id, IdSpace, hash_id, in_interval

PING_THRESHOLD = 3


class Role(str, enum.Enum):
    ORDINARY = "ordinary"
    SUPER = "super"
    ULTRA = "ultra"


@dataclass
class CapabilityProfile:
    capacity: float = 1.0
    availability: float = 0.0
    firewall_open: bool = True

    def __post_init__(self):
        if self.capacity < 0 or self.availability < 0:
            raise InvalidArgument("capacity and availability must be non-negative")


class SuperIndex:
    """key_ID -> set of peer_ID."""

    def __init__(self, entries: dict[Id, set[Id]] | None = None):
        self.entries: dict[Id, set[Id]] = {k: set(v) for k, v in (entries or {}).items()}

    def add(self, key: Id, peer: Id) -> None:
        self.entries.setdefault(key, set()).add(peer)

    def discard(self, key: Id, peer: Id) -> None:
        peers = self.entries.get(key)
        if peers is None:
            return
        peers.discard(peer)
        if not peers:
            del self.entries[key]

    def drop_peer(self, peer: Id) -> list[Id]:
        keys = [k for k, ps in self.entries.items() if peer in ps]
        for k in keys:
            self.discard(k, peer)
        return sorted(keys)

    def get(self, key: Id) -> set[Id]:
        return set(self.entries.get(key, ()))

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def pairs(self) -> Iterator[tuple[Id, Id]]:
        for k in sorted(self.entries):
            for p in sorted(self.entries[k]):
                yield k, p

    def copy(self) -> "SuperIndex":
        return SuperIndex(self.entries)


class UltraIndex:
    """key_ID -> set of (peer_ID, superpeer_ID)."""

    def __init__(self, entries: dict[Id, set[tuple[Id, Id]]] | None = None):
        self.entries: dict[Id, set[tuple[Id, Id]]] = {k: set(v) for k, v in (entries or {}).items()}

    def add(self, key: Id, peer: Id, superpeer: Id) -> None:
        self.entries.setdefault(key, set()).add((peer, superpeer))

    def discard(self, key: Id, peer: Id, superpeer: Id) -> None:
        rows = self.entries.get(key)
        if rows is None:
            return
        rows.discard((peer, superpeer))
        if not rows:
            del self.entries[key]

    def get(self, key: Id) -> set[tuple[Id, Id]]:
        return set(self.entries.get(key, ()))

    def peers_for(self, key: Id) -> set[Id]:
        return {p for p, _ in self.entries.get(key, ())}

    def pop_key(self, key: Id) -> set[tuple[Id, Id]]:
        return self.entries.pop(key, set())

    def __contains__(self, key) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def triples(self) -> Iterator[tuple[Id, Id, Id]]:
        for k in sorted(self.entries):
            for p, s in sorted(self.entries[k]):
                yield k, p, s

    def copy(self) -> "UltraIndex":
        return UltraIndex(self.entries)


@dataclass
class LivenessState:
    last_pong: dict[Id, float] = field(default_factory=dict)
    missed: dict[Id, int] = field(default_factory=dict)

    def forget(self, peer: Id) -> None:
        self.last_pong.pop(peer, None)
        self.missed.pop(peer, None)


@dataclass
class PeerState:
    id: Id
    role: Role = Role.ORDINARY
    profile: CapabilityProfile = field(default_factory=CapabilityProfile)
    link_latency: float = 65.0
    superpeer: Id | None = None
    ultra: Id | None = None
    group: set[Id] = field(default_factory=set)
    supers: set[Id] = field(default_factory=set)
    published_keys: set[Id] = field(default_factory=set)
    alive: bool = True
    upgrade_requested: bool = False
    # superpeer state
    index: SuperIndex | None = None
    candidates: list[Id] = field(default_factory=list)
    # ultra-superpeer state
    ultra_index: UltraIndex | None = None
    mirror: UltraIndex | None = None
    backups: dict[Id, tuple[UltraIndex, UltraIndex]] = field(default_factory=dict)
    liveness: LivenessState = field(default_factory=LivenessState)
    ring_node: RingNode | None = field(default=None, repr=False)

    @property
    def ring(self) -> RingNode | None:
        return self.ring_node if self.role is Role.ULTRA else None


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: Id
    detail: str


def _normalized(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def select_candidate(group: Iterable[PeerState], preferred: Iterable[Id] = (),
                     *, require_open: bool = True) -> Id | None:
    """Best live peer to take over a superpeer (or ultra-superpeer) role.

    Score is ``0.5 * capacity + 0.5 * availability`` after min-max
    normalization over the pool; firewalled peers are excluded unless
    ``require_open`` is false.  Peers that asked for an upgrade form the pool
    when any of them is eligible.  Ties go to the smaller Id.
    """
    eligible = [p for p in group if p.alive and (p.profile.firewall_open or not require_open)]
    preferred = set(preferred)
    pool = [p for p in eligible if p.id in preferred] or eligible
    if not pool:
        return None
    caps = _normalized([p.profile.capacity for p in pool])
    avails = _normalized([p.profile.availability for p in pool])
    best = max(
        range(len(pool)),
        key=lambda i: (0.5 * caps[i] + 0.5 * avails[i], -pool[i].id),
    )
    return pool[best].id


class Overlay:
    """Mutable three-layer overlay state and its membership protocols."""

    def __init__(self, space: IdSpace | None = None, *, ping_threshold: int = PING_THRESHOLD,
                 optimized_fingers: bool = True, upgrade_capacity: float | None = None):
        self.space = space or IdSpace(16)
        self.ring = ChordRing(self.space, optimized=optimized_fingers)
        self.peers: dict[Id, PeerState] = {}
        self.ultra_ids: list[Id] = []
        self.ping_threshold = ping_threshold
        self.upgrade_capacity = upgrade_capacity
        self.latency: dict[Id, float] = {}
        self.lost_key_count = 0

    # -- queries -------------------------------------------------------

    def role_ids(self, role: Role, *, alive_only: bool = False) -> list[Id]:
        return sorted(
            pid for pid, p in self.peers.items()
            if p.role is role and (p.alive or not alive_only)
        )

    def counts(self) -> dict[Role, int]:
        out = {r: 0 for r in Role}
        for p in self.peers.values():
            out[p.role] += 1
        return out

    def is_alive(self, pid: Id) -> bool:
        p = self.peers.get(pid)
        return p is not None and p.alive

    def housing_super(self, pid: Id) -> Id | None:
        """The index holder a peer's metadata rows are filed under."""
        p = self.peers[pid]
        if p.role is Role.ORDINARY:
            return p.superpeer
        return pid

    def ultra_of(self, pid: Id) -> Id | None:
        p = self.peers[pid]
        if p.role is Role.ORDINARY:
            return self.peers[p.superpeer].ultra if p.superpeer in self.peers else None
        if p.role is Role.SUPER:
            return p.ultra
        return pid

    def registry(self) -> dict[Id, set[Id]]:
        """Ground truth: key_ID -> live publishers."""
        out: dict[Id, set[Id]] = {}
        for pid, p in self.peers.items():
            if not p.alive:
                continue
            for k in p.published_keys:
                out.setdefault(k, set()).add(pid)
        return out

    def ring_owner(self, key: Id) -> Id:
        return self.ring.owner_of(key)

    # -- placement -----------------------------------------------------

    def _ultra_for(self, pid: Id) -> Id:
        if not self.ultra_ids:
            raise PlacementUnavailable("overlay has no ultra-superpeers")
        return successor_of(self.ultra_ids, pid)

    def assign_group(self, pid: Id) -> tuple[Id, Id]:
        """(ultra, super) responsible for an ordinary peer with Id ``pid``."""
        ultra = self._ultra_for(pid)
        supers = sorted(self.peers[ultra].supers)
        if not supers:
            raise PlacementUnavailable(f"ultra-superpeer {ultra} has no superpeers")
        return ultra, successor_of(supers, pid)

    # -- index plumbing --------------------------------------------------

    def _ui_add(self, ultra: Id, key: Id, peer: Id, superpeer: Id) -> None:
        u = self.peers.get(ultra)
        if u is None or not u.alive:
            return
        u.ultra_index.add(key, peer, superpeer)
        owner = self.ring_owner(key)
        self.peers[owner].mirror.add(key, peer, superpeer)

    def _ui_discard(self, ultra: Id | None, key: Id, peer: Id, superpeer: Id) -> None:
        u = self.peers.get(ultra) if ultra is not None else None
        if u is not None and u.ultra_index is not None:
            u.ultra_index.discard(key, peer, superpeer)
        if self.ring.live:
            owner = self.peers[self.ring_owner(key)]
            owner.mirror.discard(key, peer, superpeer)

    def _declare(self, pid: Id) -> None:
        """(Re)send every metadata row of ``pid`` to its current index holders."""
        p = self.peers[pid]
        if p.role is Role.ULTRA:
            for k in sorted(p.published_keys):
                self._ui_add(pid, k, pid, pid)
            return
        sid = self.housing_super(pid)
        s = self.peers.get(sid)
        if s is None or not s.alive:
            return
        for k in sorted(p.published_keys):
            s.index.add(k, pid)
            self._ui_add(s.ultra, k, pid, sid)

    def _retract(self, pid: Id) -> None:
        """Remove every metadata row naming ``pid`` from its index holders."""
        p = self.peers[pid]
        if p.role is Role.ULTRA:
            for k in sorted(p.published_keys):
                self._ui_discard(pid, k, pid, pid)
            return
        sid = self.housing_super(pid)
        s = self.peers.get(sid)
        keys = set(p.published_keys)
        if s is not None and s.index is not None:
            keys.update(s.index.drop_peer(pid))
        ultra = s.ultra if s is not None else None
        for k in sorted(keys):
            self._ui_discard(ultra, k, pid, sid)

    def _row_is_current(self, key: Id, peer: Id, superpeer: Id) -> bool:
        p = self.peers.get(peer)
        if p is None or not p.alive or key not in p.published_keys:
            return False
        return self.housing_super(peer) == superpeer

    # -- construction ----------------------------------------------------

    def _register(self, peer: PeerState) -> None:
        self.space.check(peer.id)
        if peer.id in self.peers:
            raise CollisionError(f"identifier {peer.id} already in the overlay")
        self.peers[peer.id] = peer
        self.latency[peer.id] = peer.link_latency

    def add_ultra(self, peer: PeerState, bootstrap: Id | None = None) -> None:
        """Put a peer on the ultra ring (construction / promotion path)."""
        self._register(peer)
        self._make_ultra(peer)
        node = self.ring.join(peer.id, bootstrap if bootstrap is not None else (self.ring.live[0] if self.ring.live else None))
        peer.ring_node = node
        bisect.insort(self.ultra_ids, peer.id)

    def add_ultras(self, peers: Iterable[PeerState]) -> None:
        """Bulk construction of a stabilized ultra ring."""
        peers = list(peers)
        for peer in peers:
            self._register(peer)
            self._make_ultra(peer)
        ids = sorted(set(self.ultra_ids) | {p.id for p in peers})
        self.ring = ChordRing.from_ids(ids, self.space, optimized=self.ring.optimized)
        self.ultra_ids = ids
        for uid in ids:
            self.peers[uid].ring_node = self.ring.nodes[uid]

    def _make_ultra(self, peer: PeerState) -> None:
        peer.role = Role.ULTRA
        peer.superpeer = None
        peer.ultra = None
        peer.group = set()
        peer.index = None
        peer.candidates = []
        peer.ultra_index = peer.ultra_index or UltraIndex()
        peer.mirror = peer.mirror or UltraIndex()
        peer.liveness = LivenessState()

    def add_super(self, peer: PeerState) -> Id:
        """Place a superpeer under the ultra-superpeer whose arc holds its Id."""
        self._register(peer)
        ultra = self._ultra_for(peer.id)
        peer.role = Role.SUPER
        peer.ultra = ultra
        peer.index = SuperIndex()
        self.peers[ultra].supers.add(peer.id)
        self._declare(peer.id)
        return ultra

    def join_overlay(self, peer: PeerState, bootstrap_super: Id | None = None) -> tuple[Id, Id]:
        """A new peer joins as an ordinary peer; returns its (ultra, super)."""
        if peer.role is not Role.ORDINARY:
            raise InvalidArgument("joining peers always start as ordinary peers")
        self.space.check(peer.id)
        if peer.id in self.peers:
            raise CollisionError(f"identifier {peer.id} already in the overlay")
        if bootstrap_super is not None:
            b = self.peers.get(bootstrap_super)
            if b is None or b.role is not Role.SUPER or not b.alive:
                raise InvalidArgument(f"bootstrap {bootstrap_super} is not a live superpeer")
        ultra, sid = self.assign_group(peer.id)
        if not self.is_alive(sid) or not self.is_alive(ultra):
            raise PlacementUnavailable(f"placement target {sid} under {ultra} is unreachable")
        self._register(peer)
        s = self.peers[sid]
        peer.superpeer = sid
        s.group.add(peer.id)
        s.liveness.missed[peer.id] = 0
        if self.upgrade_capacity is not None and peer.profile.capacity >= self.upgrade_capacity:
            peer.upgrade_requested = True
        if peer.upgrade_requested:
            s.candidates.append(peer.id)
        self._declare(peer.id)
        return ultra, sid

    # -- publish ---------------------------------------------------------

    def publish(self, pid: Id, key_name: bytes | str) -> Id:
        key = hash_id(key_name, self.space)
        self.publish_id(pid, key)
        return key

    def publish_id(self, pid: Id, key: Id) -> None:
        p = self.peers.get(pid)
        if p is None or not p.alive:
            raise NotFoundError(f"no live peer {pid}")
        self.space.check(key)
        if key in p.published_keys:
            return
        p.published_keys.add(key)
        if p.role is Role.ULTRA:
            self._ui_add(pid, key, pid, pid)
            return
        sid = self.housing_super(pid)
        s = self.peers.get(sid)
        if s is None or not s.alive:
            return  # re-declared when the peer is re-homed
        s.index.add(key, pid)
        self._ui_add(s.ultra, key, pid, sid)

    # -- liveness --------------------------------------------------------

    def ping_round(self, parent: Id, now: float, *, handle: bool = True) -> tuple[LivenessState, set[Id]]:
        """One PING/PONG exchange between ``parent`` and each of its children."""
        p = self.peers.get(parent)
        if p is None or not p.alive or p.role is Role.ORDINARY:
            return LivenessState(), set()
        children = sorted(p.group if p.role is Role.SUPER else p.supers)
        detected = set()
        for c in children:
            if self.is_alive(c):
                p.liveness.last_pong[c] = now
                p.liveness.missed[c] = 0
            else:
                p.liveness.missed[c] = p.liveness.missed.get(c, 0) + 1
                if p.liveness.missed[c] >= self.ping_threshold:
                    detected.add(c)
        if handle:
            for c in sorted(detected):
                if c not in self.peers:
                    continue
                if p.role is Role.SUPER:
                    self.handle_ordinary_leave(c)
                else:
                    self.handle_super_leave(c, graceful=False)
        return p.liveness, detected

    # -- departures ------------------------------------------------------

    def fail(self, pid: Id) -> None:
        """Crash a peer silently; detection happens through liveness probes."""
        p = self.peers.get(pid)
        if p is None or not p.alive:
            return
        p.alive = False
        if p.role is Role.ULTRA:
            self.ring.fail(pid)

    def leave(self, pid: Id) -> None:
        """Graceful departure, dispatched by role."""
        p = self.peers.get(pid)
        if p is None:
            return
        if p.role is Role.ORDINARY:
            self.handle_ordinary_leave(pid)
        elif p.role is Role.SUPER:
            self.handle_super_leave(pid, graceful=True)
        else:
            self.handle_ultra_leave(pid, graceful=True)

    def handle_ordinary_leave(self, pid: Id) -> None:
        p = self.peers.get(pid)
        if p is None or p.role is not Role.ORDINARY:
            return
        self._retract(pid)
        s = self.peers.get(p.superpeer)
        if s is not None:
            s.group.discard(pid)
            if pid in s.candidates:
                s.candidates.remove(pid)
            s.liveness.forget(pid)
        del self.peers[pid]

    def _detach_ordinary(self, pid: Id) -> None:
        p = self.peers[pid]
        self._retract(pid)
        s = self.peers.get(p.superpeer)
        if s is not None:
            s.group.discard(pid)
            if pid in s.candidates:
                s.candidates.remove(pid)
            s.liveness.forget(pid)
        p.superpeer = None

    def _attach_ordinary(self, pid: Id, sid: Id) -> None:
        p = self.peers[pid]
        s = self.peers[sid]
        p.superpeer = sid
        s.group.add(pid)
        s.liveness.missed.setdefault(pid, 0)
        if p.upgrade_requested and pid not in s.candidates:
            s.candidates.append(pid)
        self._declare(pid)

    def _promote_to_super(self, pid: Id, ultra: Id) -> None:
        p = self.peers[pid]
        if p.role is Role.ORDINARY and p.superpeer is not None:
            self._detach_ordinary(pid)
        p.role = Role.SUPER
        p.superpeer = None
        p.ultra = ultra
        p.index = SuperIndex()
        p.group = set()
        p.candidates = []
        p.liveness = LivenessState()
        p.upgrade_requested = False
        self.peers[ultra].supers.add(pid)
        self._declare(pid)

    def _rehome_ordinaries(self, pids: Iterable[Id]) -> None:
        """Point each ordinary at the superpeer its Id now maps to.

        An ultra-superpeer left without superpeers gets one promoted from the
        ordinary peers stranded in its arc.
        """
        orphans: dict[Id, list[Id]] = {}
        for pid in sorted(set(pids)):
            p = self.peers.get(pid)
            if p is None or p.role is not Role.ORDINARY:
                continue
            try:
                _, sid = self.assign_group(pid)
            except PlacementUnavailable:
                orphans.setdefault(self._ultra_for(pid), []).append(pid)
                continue
            if sid == p.superpeer and pid in self.peers[sid].group:
                continue
            if p.superpeer is not None:
                self._detach_ordinary(pid)
            self._attach_ordinary(pid, sid)
        for ultra, stranded in sorted(orphans.items()):
            pool = [self.peers[o] for o in stranded]
            cand = select_candidate(pool) or select_candidate(pool, require_open=False)
            if cand is None:
                # no live peer left to serve this arc; nobody can probe them either
                for o in stranded:
                    self._detach_ordinary(o)
                    del self.peers[o]
                continue
            self._promote_to_super(cand, ultra)
            self._rehome_ordinaries(o for o in stranded if o != cand)

    def handle_super_leave(self, sid: Id, graceful: bool = True, *, promoting: bool = False) -> Id | None:
        """Replace a departing or failed superpeer; returns the successor superpeer.

        With ``promoting`` the superpeer is moving up to the ultra ring, so it
        stays in the overlay (detached from the middle layer) for the caller.
        """
        s = self.peers.get(sid)
        if s is None or s.role is not Role.SUPER:
            return None
        ultra = s.ultra
        u = self.peers.get(ultra)
        members = [self.peers[g] for g in sorted(s.group) if g in self.peers]
        cand = select_candidate(members, s.candidates)

        # the leaving superpeer's own rows go away (or move up with it)
        for k in sorted(s.published_keys):
            s.index.discard(k, sid)
            self._ui_discard(ultra, k, sid, sid)
        if u is not None:
            u.supers.discard(sid)
            u.liveness.forget(sid)

        group = set(s.group)
        filed = []
        if u is not None and u.ultra_index is not None:
            filed = [(k, p) for k, p, sp in u.ultra_index.triples() if sp == sid]
        if cand is not None:
            c = self.peers[cand]
            if graceful:
                new_index = s.index.copy()
            else:
                new_index = SuperIndex()
                for k, p in filed:
                    if p != sid:
                        new_index.add(k, p)
        # every row filed under the old superpeer is withdrawn; survivors are re-filed
        for k, p in filed + list(s.index.pairs()):
            self._ui_discard(ultra, k, p, sid)
        if cand is not None:
            group.discard(cand)
            c.role = Role.SUPER
            c.superpeer = None
            c.ultra = ultra
            c.index = new_index
            c.group = group
            c.candidates = [x for x in s.candidates if x in group]
            c.liveness = LivenessState(missed={g: s.liveness.missed.get(g, 0) for g in group})
            c.upgrade_requested = False
            for g in group:
                self.peers[g].superpeer = cand
            if u is not None:
                u.supers.add(cand)
            for k, p in new_index.pairs():
                self._ui_add(ultra, k, p, cand)
            self._declare(cand)
            for g in sorted(group):
                self._declare(g)
        else:
            for g in group:
                self.peers[g].superpeer = None

        s.group = set()
        s.index = SuperIndex()
        s.candidates = []
        if not promoting:
            del self.peers[sid]
        self._rehome_ordinaries(group)
        return cand

    def handle_ultra_leave(self, uid: Id, graceful: bool = True) -> Id | None:
        """Handle an ultra-superpeer departure; returns the promoted superpeer, if any."""
        u = self.peers.get(uid)
        if u is None or u.role is not Role.ULTRA:
            return None
        others = [x for x in self.ultra_ids if x != uid and self.is_alive(x)]
        if not others:
            raise UnsupportedTopology("the last ultra-superpeer cannot leave")
        touched = set(u.supers)
        promoted = None
        if graceful:
            pool = [self.peers[s] for s in sorted(u.supers)]
            promoted = select_candidate(pool) or select_candidate(pool, require_open=False)
            for k in sorted(u.published_keys):
                self._ui_discard(uid, k, uid, uid)
            if promoted is not None:
                self.handle_super_leave(promoted, graceful=True, promoting=True)
                touched.discard(promoted)
                c = self.peers[promoted]
                c.ultra_index = u.ultra_index
                c.mirror = u.mirror
                self._make_ultra(c)
                c.supers = set(u.supers)
                for sp in c.supers:
                    self.peers[sp].ultra = promoted
                c.ring_node = self.ring.join(promoted, others[0])
                bisect.insort(self.ultra_ids, promoted)
                self._rebalance_mirrors()
                for k in sorted(c.published_keys):
                    self._ui_add(promoted, k, promoted, promoted)
                u.supers = set()
                u.ultra_index = UltraIndex()
                u.mirror = UltraIndex()
            self.ring.leave(uid)
            self.ultra_ids.remove(uid)
            heir = successor_of(self.ring.live, uid)
            # graceful hand-off: remaining rows go to the successor
            for k, p, sp in u.ultra_index.triples():
                self.peers[heir].ultra_index.add(k, p, sp)
            for k, p, sp in u.mirror.triples():
                self.peers[heir].mirror.add(k, p, sp)
            self._rebalance_mirrors()
            for sp in u.supers:
                self.peers[sp].ultra = heir
                self.peers[heir].supers.add(sp)
            del self.peers[uid]
            self._reconcile_ultras(touched | {sp for sp in (self.peers[heir].supers)})
            if promoted is not None:
                self._reconcile_ultras(set(self.peers[promoted].supers))
                self._push_backup(promoted)
        else:
            if self.is_alive(uid):
                self.fail(uid)
            heir = successor_of(self.ring.live, uid)
            backup = self._find_backup(uid)
            b_index, b_mirror = backup if backup is not None else (UltraIndex(), UltraIndex())
            surviving = {
                (k, p, sp) for k, p, sp in u.ultra_index.triples()
                if self._row_is_current(k, p, sp) and p != uid
            }
            self.lost_key_count += len(surviving - set(b_index.triples()))
            self.ultra_ids.remove(uid)
            h = self.peers[heir]
            for sp in sorted(u.supers):
                if sp in self.peers:
                    self.peers[sp].ultra = heir
                    h.supers.add(sp)
            for k, p, sp in b_index.triples():
                if self._row_is_current(k, p, sp) and sp in h.supers:
                    self._ui_add(heir, k, p, sp)
            for k, p, sp in b_mirror.triples():
                if self._row_is_current(k, p, sp):
                    self.peers[self.ring_owner(k)].mirror.add(k, p, sp)
            self._rebalance_mirrors()
            for k in sorted(u.published_keys):
                self._ui_discard(None, k, uid, uid)
            for x in list(self.peers.values()):
                if x.role is Role.ULTRA:
                    x.backups.pop(uid, None)
            del self.peers[uid]
            self.ring.purge(uid)
            for sp in sorted(u.supers):
                if sp in self.peers:
                    self._redeclare_super(sp)
            self._reconcile_ultras(set(h.supers))
        self._rebalance_mirrors()
        return promoted

    def _redeclare_super(self, sid: Id) -> None:
        s = self.peers[sid]
        if not s.alive:
            return
        for k, p in s.index.pairs():
            self._ui_add(s.ultra, k, p, sid)

    def _move_super(self, sid: Id, ultra: Id) -> None:
        s = self.peers[sid]
        if s.ultra == ultra:
            return
        old = self.peers.get(s.ultra)
        rows = list(s.index.pairs())
        if old is not None:
            old.supers.discard(sid)
            old.liveness.forget(sid)
            for k, p in rows:
                self._ui_discard(s.ultra, k, p, sid)
        s.ultra = ultra
        self.peers[ultra].supers.add(sid)
        if s.alive:
            for k, p in rows:
                self._ui_add(ultra, k, p, sid)

    def _reconcile_ultras(self, supers: set[Id]) -> None:
        """Re-home superpeers (and their groups) after the ultra ring changed."""
        ultras = set()
        for sid in sorted(supers):
            if sid not in self.peers or self.peers[sid].role is not Role.SUPER:
                continue
            ultras.add(self.peers[sid].ultra)
            target = self._ultra_for(sid)
            self._move_super(sid, target)
            ultras.add(target)
        ordinaries = set()
        for uid in sorted(ultras):
            u = self.peers.get(uid)
            if u is None:
                continue
            for sid in u.supers:
                ordinaries.update(self.peers[sid].group)
        self._rehome_ordinaries(ordinaries)

    def _find_backup(self, uid: Id) -> tuple[UltraIndex, UltraIndex] | None:
        for x in self.ultra_ids:
            p = self.peers.get(x)
            if p is not None and p.alive and uid in p.backups:
                return p.backups[uid]
        return None

    def _push_backup(self, uid: Id) -> None:
        u = self.peers[uid]
        succ = u.ring_node.successor if u.ring_node is not None else None
        if succ is None or succ == uid or not self.is_alive(succ):
            return
        self.peers[succ].backups[uid] = (u.ultra_index.copy(), u.mirror.copy())

    def _rebalance_mirrors(self) -> None:
        for uid in list(self.ring.live):
            u = self.peers[uid]
            for k in sorted(u.mirror.entries):
                owner = self.ring_owner(k)
                if owner != uid:
                    for p, sp in u.mirror.pop_key(k):
                        self.peers[owner].mirror.add(k, p, sp)

    def refresh_mirrors(self) -> None:
        """Every live ultra-superpeer republishes its rows to the key owners."""
        for uid in list(self.ring.live):
            for k, p, sp in self.peers[uid].ultra_index.triples():
                self.peers[self.ring_owner(k)].mirror.add(k, p, sp)
        self._rebalance_mirrors()

    # -- periodic maintenance --------------------------------------------

    def stabilize_tick(self) -> list[Id]:
        """Ring maintenance: detect failed ultra-superpeers, repair pointers,
        refresh successor backups and key-owner mirrors.  Returns the failed
        ultra-superpeers handled in this tick."""
        dead = [u for u in self.ultra_ids if not self.is_alive(u)]
        for u in dead:
            self.handle_ultra_leave(u, graceful=False)
        for uid in list(self.ring.live):
            self.ring.stabilize(uid)
        for uid in list(self.ring.live):
            self.peers[uid].backups = {
                k: v for k, v in self.peers[uid].backups.items() if self.is_alive(k)
            }
        for uid in list(self.ring.live):
            self._push_backup(uid)
        self.refresh_mirrors()
        return dead

    def ping_tick(self, now: float) -> dict[Id, set[Id]]:
        out = {}
        for pid in self.role_ids(Role.SUPER, alive_only=True) + self.role_ids(Role.ULTRA, alive_only=True):
            if pid not in self.peers:
                continue
            _, detected = self.ping_round(pid, now)
            if detected:
                out[pid] = detected
        return out

    def has_pending_repairs(self) -> bool:
        return any(not p.alive for p in self.peers.values()) or not self.ring.is_converged()

    # -- validation ------------------------------------------------------

    def validate_topology(self) -> list[Violation]:
        out: list[Violation] = []
        ultras = self.ultra_ids
        for pid in sorted(self.peers):
            p = self.peers[pid]
            if p.role is Role.ORDINARY:
                s = self.peers.get(p.superpeer)
                if s is None or s.role is not Role.SUPER or pid not in s.group:
                    out.append(Violation("a", pid, f"superpeer {p.superpeer} does not list it"))
                    continue
                arc = sorted(self.peers[s.ultra].supers) if s.ultra in self.peers else []
                if arc and not in_interval(pid, predecessor_of(arc, p.superpeer), p.superpeer, Bounds.OPEN_CLOSED):
                    out.append(Violation("c", pid, f"outside the arc of superpeer {p.superpeer}"))
                elif s.ultra in self.peers and ultras and successor_of(ultras, pid) != s.ultra:
                    out.append(Violation("c", pid, f"outside the arc of ultra-superpeer {s.ultra}"))
            elif p.role is Role.SUPER:
                u = self.peers.get(p.ultra)
                if u is None or u.role is not Role.ULTRA or pid not in u.supers:
                    out.append(Violation("a", pid, f"ultra-superpeer {p.ultra} does not list it"))
                    continue
                if ultras and not in_interval(pid, predecessor_of(ultras, p.ultra), p.ultra, Bounds.OPEN_CLOSED):
                    out.append(Violation("b", pid, f"outside the arc of ultra-superpeer {p.ultra}"))
                for g in sorted(p.group):
                    q = self.peers.get(g)
                    if q is None or q.role is not Role.ORDINARY or q.superpeer != pid:
                        out.append(Violation("a", pid, f"group member {g} does not point back"))
            else:
                for sp in sorted(p.supers):
                    q = self.peers.get(sp)
                    if q is None or q.role is not Role.SUPER or q.ultra != pid:
                        out.append(Violation("a", pid, f"superpeer {sp} does not point back"))
            if not p.alive:
                out.append(Violation("a", pid, "dead peer still a member"))
        out.extend(self._index_violations())
        if sorted(self.ring.live) != list(ultras):
            out.append(Violation("ring", -1, "ring membership differs from the ultra-superpeer list"))
        elif not self.ring.is_converged():
            out.append(Violation("ring", -1, "ring pointers not converged"))
        return out

    def _index_violations(self) -> list[Violation]:
        out = []
        expected_rows: set[tuple[Id, Id, Id]] = set()
        for pid in sorted(self.peers):
            p = self.peers[pid]
            if not p.alive:
                continue
            for k in p.published_keys:
                sid = self.housing_super(pid)
                expected_rows.add((k, pid, sid))
                if p.role is not Role.ULTRA:
                    s = self.peers.get(sid)
                    if s is None or s.index is None or pid not in s.index.get(k):
                        out.append(Violation("d", pid, f"key {k} missing from superpeer index {sid}"))
        actual_rows = set()
        for uid in self.ultra_ids:
            u = self.peers.get(uid)
            if u is None:
                continue
            for k, p, sp in u.ultra_index.triples():
                actual_rows.add((k, p, sp))
                if sp == uid and p == uid:
                    continue
                if sp not in u.supers:
                    out.append(Violation("d", uid, f"row ({k},{p},{sp}) names a superpeer it does not serve"))
                    continue
                s = self.peers[sp]
                if p not in s.index.get(k) or (p != sp and p not in s.group):
                    out.append(Violation("d", uid, f"row ({k},{p},{sp}) has no matching superpeer entry"))
        for row in sorted(expected_rows - actual_rows):
            out.append(Violation("d", row[1], f"row {row} missing from every ultra-superpeer index"))
        for row in sorted(actual_rows - expected_rows):
            out.append(Violation("d", row[1], f"stale row {row}"))
        for uid in self.ultra_ids:
            u = self.peers.get(uid)
            if u is None:
                continue
            for k, p, sp in u.mirror.triples():
                if self.ring_owner(k) != uid or (k, p, sp) not in expected_rows:
                    out.append(Violation("d", uid, f"misplaced or stale mirror row ({k},{p},{sp})"))
        mirrored = {
            t for uid in self.ultra_ids if uid in self.peers for t in self.peers[uid].mirror.triples()
        }
        for row in sorted(expected_rows - mirrored):
            out.append(Violation("d", row[1], f"row {row} not mirrored at its key owner"))
        return out
