"""Deterministic discrete-event engine for the hierarchical overlay.

Messages are delivered instantly at the event level; latency is an accounting
quantity attached to lookup traces.  Every random choice comes from a named
stream forked off one seed, so adding draws for one purpose never shifts the
draws of another.

Event-log lines have the form ``time_ms,seq,kind,subject_id,detail`` where
``detail`` is a ``;``-separated list of ``name=value`` pairs.  Details carry
every input an event consumed, which is what makes ``replay`` possible.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Callable

from hichord.errors import (
    CollisionError,
    InvalidArgument,
    NotFoundError,
    PlacementUnavailable,
    SchedulingError,
)
from hichord.hierarchy import CapabilityProfile, Overlay, PeerState, Role
from hichord.lookup import LookupTrace, lookup_key_id

DEFAULT_LATENCY_RANGE = (30.0, 100.0)


class EventKind(str, enum.Enum):
    JOIN = "join"
    LEAVE = "graceful-leave"
    FAIL = "fail"
    PUBLISH = "publish"
    LOOKUP = "lookup"
    PING = "ping-tick"
    STABILIZE = "stabilize-tick"


@dataclass(order=True)
class Event:
    time: int
    sequence: int
    kind: EventKind = field(compare=False)
    subject: int | None = field(default=None, compare=False)
    payload: dict = field(default_factory=dict, compare=False)


@dataclass
class ChurnModel:
    join_rate: float = 0.0
    leave_rate: float = 0.0
    fail_fraction: float = 0.0
    target_roles: dict[str, float] = field(
        default_factory=lambda: {"ordinary": 0.85, "super": 0.12, "ultra": 0.03}
    )

    def __post_init__(self):
        if self.join_rate < 0 or self.leave_rate < 0:
            raise InvalidArgument("churn rates must be non-negative")
        if not 0.0 <= self.fail_fraction <= 1.0:
            raise InvalidArgument("fail_fraction must lie in [0, 1]")
        unknown = set(self.target_roles) - {r.value for r in Role}
        if unknown:
            raise InvalidArgument(f"unknown roles in target_roles: {sorted(unknown)}")
        if any(w < 0 for w in self.target_roles.values()) or not sum(self.target_roles.values()) > 0:
            raise InvalidArgument("target_roles weights must be non-negative and not all zero")

    @property
    def total_rate(self) -> float:
        return self.join_rate + self.leave_rate


class RngStreams:
    """Named, independent ``random.Random`` streams derived from one seed."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: dict[str, random.Random] = {}

    def __getitem__(self, name: str) -> random.Random:
        if name not in self._streams:
            digest = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
            self._streams[name] = random.Random(int.from_bytes(digest[:8], "big"))
        return self._streams[name]


def draw_latency(rng: random.Random, role: Role | None = None,
                 latency_range: tuple[float, float] = DEFAULT_LATENCY_RANGE) -> float:
    """Base link latency of a new peer in ms.  The role discount is applied when
    lookups are accounted, not here."""
    lo, hi = latency_range
    return rng.uniform(lo, hi)


def draw_profile(rng: random.Random, open_probability: float = 0.8) -> CapabilityProfile:
    return CapabilityProfile(
        capacity=rng.uniform(0.0, 100.0),
        availability=rng.uniform(0.0, 3600.0),
        firewall_open=rng.random() < open_probability,
    )


def key_name(peer: int, j: int) -> str:
    return f"peer-{peer}/key-{j}"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (set, frozenset, list, tuple)):
        return "|".join(str(x) for x in sorted(v))
    return str(v)


def format_detail(pairs: dict) -> str:
    return ";".join(f"{k}={_fmt(v)}" for k, v in pairs.items())


def parse_detail(detail: str) -> dict[str, str]:
    out = {}
    if not detail:
        return out
    for part in detail.split(";"):
        name, _, value = part.partition("=")
        out[name] = value
    return out


class Engine:
    """Single-threaded event loop over one ``Overlay``.

    ``choose_lookup`` maps ``(engine, rng)`` to ``(origin, key_id)`` and
    ``choose_departure`` maps ``(engine, rng, kind)`` to a subject Id or
    ``None``; the harness installs its workload policies through them.
    """

    def __init__(self, overlay: Overlay, streams: RngStreams, *, ping_period_ms: int = 5000,
                 stabilize_period_ms: int = 10000, keys_per_peer: int = 1,
                 latency_range: tuple[float, float] = DEFAULT_LATENCY_RANGE,
                 churn: ChurnModel | None = None, replaying: bool = False):
        self.overlay = overlay
        self.streams = streams
        self.ping_period_ms = ping_period_ms
        self.stabilize_period_ms = stabilize_period_ms
        self.keys_per_peer = keys_per_peer
        self.latency_range = latency_range
        self.churn = churn or ChurnModel()
        self.replaying = replaying
        self.clock = 0
        self._seq = 0
        self._queue: list[Event] = []
        self.log: list[str] = []
        self.traces: list[LookupTrace] = []
        self.choose_lookup: Callable | None = None
        self.choose_departure: Callable = default_departure
        self.joins = 0
        self.departures = 0
        self._handlers = {
            EventKind.JOIN: self._on_join,
            EventKind.LEAVE: self._on_departure,
            EventKind.FAIL: self._on_departure,
            EventKind.PUBLISH: self._on_publish,
            EventKind.LOOKUP: self._on_lookup,
            EventKind.PING: self._on_ping,
            EventKind.STABILIZE: self._on_stabilize,
        }

    # -- queue -----------------------------------------------------------

    def schedule(self, time: int, kind: EventKind, subject: int | None = None, payload: dict | None = None,
                 *, sequence: int | None = None) -> Event:
        if time < self.clock:
            raise SchedulingError(f"event at {time} ms is before the clock ({self.clock} ms)")
        if sequence is None:
            sequence = self._seq
        self._seq = max(self._seq, sequence) + 1
        ev = Event(int(time), sequence, EventKind(kind), subject, dict(payload or {}))
        heapq.heappush(self._queue, ev)
        return ev

    def pending(self) -> int:
        return len(self._queue)

    def start_periodic(self) -> None:
        self.schedule(self.clock + self.ping_period_ms, EventKind.PING)
        self.schedule(self.clock + self.stabilize_period_ms, EventKind.STABILIZE)

    def run_until(self, t_end: int):
        if t_end < self.clock:
            raise SchedulingError(f"cannot run backwards to {t_end} ms from {self.clock} ms")
        while self._queue and self._queue[0].time <= t_end:
            ev = heapq.heappop(self._queue)
            self.clock = ev.time
            self.execute(ev)
        self.clock = t_end
        return self.overlay, self.traces, self.log

    def execute(self, ev: Event) -> None:
        detail = self._handlers[ev.kind](ev)
        subject = "-" if ev.subject is None else str(ev.subject)
        self.log.append(f"{ev.time},{ev.sequence},{ev.kind.value},{subject},{detail}")

    # -- handlers --------------------------------------------------------

    def _on_join(self, ev: Event) -> str:
        p = ev.payload
        if ev.subject is None:
            ids = self.streams["ids"]
            modulus = self.overlay.space.modulus
            for _ in range(64):
                cand = ids.randrange(modulus)
                if cand not in self.overlay.peers:
                    break
            ev.subject = cand
            prof = draw_profile(self.streams["profile"])
            p.update(
                cap=prof.capacity, avail=prof.availability, open=prof.firewall_open,
                lat=draw_latency(self.streams["latency"], Role.ORDINARY, self.latency_range),
            )
        profile = CapabilityProfile(float(p["cap"]), float(p["avail"]), _truthy(p["open"]))
        peer = PeerState(ev.subject, Role.ORDINARY, profile, float(p["lat"]))
        info = {"cap": float(p["cap"]), "avail": float(p["avail"]), "open": _truthy(p["open"]), "lat": float(p["lat"])}
        supers = self.overlay.role_ids(Role.SUPER, alive_only=True)
        try:
            if not supers:
                raise PlacementUnavailable("no live superpeer to bootstrap from")
            ultra, sid = self.overlay.join_overlay(peer, supers[0])
        except (PlacementUnavailable, CollisionError) as exc:
            info["rejected"] = type(exc).__name__
            return format_detail(info)
        self.joins += 1
        info.update(ultra=ultra, super=sid)
        if not self.replaying:
            for j in range(self.keys_per_peer):
                self.schedule(self.clock, EventKind.PUBLISH, ev.subject, {"key": key_name(ev.subject, j)})
        return format_detail(info)

    def _on_departure(self, ev: Event) -> str:
        if ev.subject is None and not self.replaying:
            ev.subject = self.choose_departure(self, self.streams["churn-target"], ev.kind)
        if ev.subject is None or not self.overlay.is_alive(ev.subject):
            return format_detail({"skipped": 1})
        role = self.overlay.peers[ev.subject].role
        before = self.overlay.counts()
        if ev.kind is EventKind.FAIL:
            self.overlay.fail(ev.subject)
        else:
            self.overlay.leave(ev.subject)
        self.departures += 1
        after = self.overlay.counts()
        return format_detail({
            "role": role.value,
            "supers": f"{before[Role.SUPER]}>{after[Role.SUPER]}",
            "ultras": f"{before[Role.ULTRA]}>{after[Role.ULTRA]}",
        })

    def _on_publish(self, ev: Event) -> str:
        name = ev.payload["key"]
        try:
            key = self.overlay.publish(ev.subject, name)
        except NotFoundError:
            return format_detail({"key": name, "skipped": 1})
        return format_detail({"key": name, "key_id": key})

    def _on_lookup(self, ev: Event) -> str:
        p = ev.payload
        if "origin" not in p:
            origin, key = self.choose_lookup(self, self.streams["workload"])
            p.update(origin=origin, key_id=key)
        origin, key = int(p["origin"]), int(p["key_id"])
        trace = lookup_key_id(origin, key, self.overlay)
        self.traces.append(trace)
        return format_detail({
            "origin": origin, "key_id": key, "outcome": trace.outcome.value,
            "level": trace.resolution_level.value, "hops": trace.hops,
            "ring_hops": trace.ring_hops, "latency": round(trace.latency, 6),
        })

    def _on_ping(self, ev: Event) -> str:
        detected = self.overlay.ping_tick(self.clock)
        if not self.replaying:
            self.schedule(self.clock + self.ping_period_ms, EventKind.PING)
        return format_detail({"detected": sorted(x for s in detected.values() for x in s)})

    def _on_stabilize(self, ev: Event) -> str:
        failed = self.overlay.stabilize_tick()
        if not self.replaying:
            self.schedule(self.clock + self.stabilize_period_ms, EventKind.STABILIZE)
        return format_detail({"failed_ultras": failed, "converged": self.overlay.ring.is_converged()})

    # -- churn -----------------------------------------------------------

    def schedule_churn(self, n_events: int, start: int | None = None) -> int:
        """Pre-schedule ``n_events`` churn events as a Poisson process; returns
        the time of the last one."""
        t = float(self.clock if start is None else start)
        rate = self.churn.total_rate
        if n_events <= 0 or rate <= 0:
            return int(t)
        rng = self.streams["churn"]
        for _ in range(n_events):
            t += rng.expovariate(rate) * 1000.0
            if rng.random() < self.churn.join_rate / rate:
                kind = EventKind.JOIN
            elif rng.random() < self.churn.fail_fraction:
                kind = EventKind.FAIL
            else:
                kind = EventKind.LEAVE
            self.schedule(int(t), kind)
        return int(t)

    def quiesce(self, max_cycles: int = 200) -> int:
        """Run periodic repairs until no dead peer remains and the ring has
        converged, then one more stabilization period for the mirrors."""
        cycle = max(self.ping_period_ms * (self.overlay.ping_threshold + 1), self.stabilize_period_ms)
        for _ in range(max_cycles):
            self.run_until(self.clock + cycle)
            if not self.overlay.has_pending_repairs():
                break
        self.run_until(self.clock + self.stabilize_period_ms)
        return self.clock


def _truthy(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes")
    return bool(v)


def default_departure(engine: Engine, rng: random.Random, kind: EventKind) -> int | None:
    overlay = engine.overlay
    weights = engine.churn.target_roles
    roles = [r for r in Role if weights.get(r.value, 0) > 0]
    role = rng.choices(roles, weights=[weights[r.value] for r in roles])[0]
    live = overlay.role_ids(role, alive_only=True)
    if role is Role.ULTRA and len(live) < 2:
        live = []
    if not live:
        live = overlay.role_ids(Role.ORDINARY, alive_only=True)
    if not live:
        return None
    return rng.choice(live)
