"""Experiment runner: configs, overlay construction, workloads, metrics, CSV."""

from __future__ import annotations

import csv
import io
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from hichord.chord import ChordRing
from hichord.errors import ConfigError, InvalidArgument
from hichord.hierarchy import Overlay, PeerState, Role
from hichord.ident import IdSpace, hash_id
from hichord.lookup import FlatNetwork, Level, LookupTrace, flat_lookup_id, lookup_key_id
from hichord.simnet import (
    ChurnModel,
    Engine,
    EventKind,
    RngStreams,
    draw_latency,
    draw_profile,
    key_name,
    parse_detail,
)

CSV_COLUMNS = [
    "model", "N", "U", "S", "m", "Q", "seed", "mean_hops", "p95_hops", "mean_latency_ms",
    "p95_latency_ms", "caseA_n", "caseB_n", "caseC_n", "caseC_ring_hops_mean",
    "predicted_flat_hops", "predicted_ring_hops", "lost_keys", "failed_lookups",
]

WORKLOADS = ("mixed", "local", "same-ultra", "remote")


@dataclass
class ExperimentConfig:
    model: str = "hierarchical"
    N: int = 1024
    U: int = 64
    S: int = 256
    m: int = 16
    Q: float = 0.0
    lookups: int = 10_000
    seed: int = 0
    ping_period: float = 5.0
    stabilize_period: float = 10.0
    latency_range: tuple[float, float] = (30.0, 100.0)
    join_rate: float = 0.0
    leave_rate: float = 0.0
    fail_fraction: float = 0.0
    target_roles: dict[str, float] = field(
        default_factory=lambda: {"ordinary": 0.85, "super": 0.12, "ultra": 0.03}
    )
    churn_events: int = 0
    keys_per_peer: int = 1
    workload: str = "mixed"
    optimized_fingers: bool = True
    upgrade_capacity: float = 75.0
    firewall_open_probability: float = 0.8

    def __post_init__(self):
        self.validate()

    @property
    def churn(self) -> ChurnModel:
        return ChurnModel(self.join_rate, self.leave_rate, self.fail_fraction, dict(self.target_roles))

    @property
    def ordinaries(self) -> int:
        return self.N - (self.S + self.U)

    def validate(self) -> None:
        if self.model not in ("flat", "hierarchical"):
            raise ConfigError(f"model must be flat or hierarchical, got {self.model!r}")
        if not 1 <= self.m <= 160:
            raise ConfigError("m must lie in [1, 160]")
        if self.N < 1 or self.N > (1 << self.m):
            raise ConfigError(f"N={self.N} peers do not fit a {self.m}-bit identifier space")
        if self.model == "hierarchical":
            if self.U < 1:
                raise ConfigError("hierarchical overlays need at least one ultra-superpeer")
            if self.S < self.U:
                raise ConfigError(f"S={self.S} must be at least U={self.U}")
            if self.N < self.S + self.U:
                raise ConfigError(f"N={self.N} is smaller than S+U={self.S + self.U}")
        if not 0.0 <= self.Q <= 1.0:
            raise ConfigError("Q must lie in [0, 1]")
        if self.lookups < 0 or self.keys_per_peer < 0 or self.churn_events < 0:
            raise ConfigError("counts must be non-negative")
        if self.workload not in WORKLOADS:
            raise ConfigError(f"workload must be one of {WORKLOADS}")
        lo, hi = self.latency_range
        if not 0 <= lo <= hi:
            raise ConfigError("latency_range must satisfy 0 <= low <= high")
        if self.ping_period <= 0 or self.stabilize_period <= 0:
            raise ConfigError("periods must be positive")
        try:
            self.churn
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from exc

    # -- text format -----------------------------------------------------

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        kinds = {f.name: f for f in fields(cls)}
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            name, sep, value = line.partition("=")
            name, value = name.strip(), value.strip()
            if not sep or name not in kinds:
                raise ConfigError(f"line {lineno}: unrecognised entry {raw.strip()!r}")
            try:
                values[name] = _parse_value(name, value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {name}: {value!r}") from exc
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | os.PathLike, **overrides) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text(), **overrides)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


def _parse_value(name: str, value: str):
    if name == "model" or name == "workload":
        return value
    if name in ("N", "U", "S", "m", "lookups", "seed", "churn_events", "keys_per_peer"):
        return int(value)
    if name == "latency_range":
        lo, hi = (float(x) for x in value.split(","))
        return (lo, hi)
    if name == "target_roles":
        out = {}
        for part in value.split(","):
            role, _, w = part.partition(":")
            out[role.strip()] = float(w)
        return out
    if name == "optimized_fingers":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(value)
        return value.lower() in ("true", "1", "yes")
    return float(value)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, dict):
        return ",".join(f"{k}:{float(w)!r}" for k, w in v.items())
    return str(v)


def load_configs(path: str | os.PathLike, **overrides) -> list[ExperimentConfig]:
    """A directory of ``*.conf`` files, or one file holding ``---``-separated blocks."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix in (".conf", ".cfg", ".ini", ".txt"))
        return [ExperimentConfig.from_file(p, **overrides) for p in files]
    blocks = [b for b in path.read_text().split("\n---") if b.strip()]
    return [ExperimentConfig.from_text(b, **overrides) for b in blocks]


# -- overlay construction ----------------------------------------------


def build_overlay(config: ExperimentConfig, streams: RngStreams | None = None) -> Overlay:
    """Realize a hierarchical topology from counts; every peer publishes its keys."""
    if config.model != "hierarchical":
        raise ConfigError("build_overlay builds hierarchical overlays; use build_flat for the baseline")
    streams = streams or RngStreams(config.seed)
    space = IdSpace(config.m)
    ids_rng, prof_rng, lat_rng = streams["ids"], streams["profile"], streams["latency"]
    ids = ids_rng.sample(range(space.modulus), config.N)

    def make(pid, role):
        return PeerState(
            pid, role,
            draw_profile(prof_rng, config.firewall_open_probability),
            draw_latency(lat_rng, role, config.latency_range),
        )

    overlay = Overlay(space, optimized_fingers=config.optimized_fingers,
                      upgrade_capacity=config.upgrade_capacity)
    ultra_ids = sorted(ids[: config.U])
    rest = ids[config.U:]
    overlay.add_ultras(make(u, Role.ULTRA) for u in ultra_ids)

    # one superpeer inside every non-empty ultra arc, the rest anywhere
    by_arc: dict[int, list[int]] = {}
    for pid in rest:
        by_arc.setdefault(overlay._ultra_for(pid), []).append(pid)
    chosen = []
    for u in ultra_ids:
        if by_arc.get(u):
            chosen.append(ids_rng.choice(by_arc[u]))
    chosen_set = set(chosen)
    remaining = [p for p in rest if p not in chosen_set]
    extra = config.S - len(chosen)
    chosen.extend(remaining[:extra])
    ordinaries = remaining[extra:]
    for sid in sorted(chosen):
        overlay.add_super(make(sid, Role.SUPER))

    supers = sorted(chosen)
    for pid in ordinaries:
        overlay.join_overlay(make(pid, Role.ORDINARY), ids_rng.choice(supers))

    for pid in ids:
        for j in range(config.keys_per_peer):
            overlay.publish(pid, key_name(pid, j))
    overlay.refresh_mirrors()
    return overlay


def build_flat(config: ExperimentConfig, streams: RngStreams | None = None) -> FlatNetwork:
    streams = streams or RngStreams(config.seed)
    space = IdSpace(config.m)
    ids = streams["ids"].sample(range(space.modulus), config.N)
    lat_rng = streams["latency"]
    latencies = {pid: draw_latency(lat_rng, Role.ORDINARY, config.latency_range) for pid in ids}
    ring = ChordRing.from_ids(ids, space, optimized=False)
    net = FlatNetwork(ring, latencies)
    for pid in ids:
        for j in range(config.keys_per_peer):
            net.publish(pid, key_name(pid, j))
    return net


# -- workloads -----------------------------------------------------------


class HierarchicalWorkload:
    """Picks (origin, key) pairs for lookups against the current overlay.

    ``mixed``: with probability Q a key published in the origin's own group,
    otherwise one published outside it.  ``local``/``same-ultra``/``remote``
    force case A, B or C respectively.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config

    def __call__(self, engine: Engine, rng) -> tuple[int, int]:
        overlay = engine.overlay
        origins = overlay.role_ids(Role.ORDINARY, alive_only=True)
        if not origins:
            raise ConfigError("no live ordinary peer to issue lookups from")
        registry = overlay.registry()
        keys = sorted(registry)
        origin = rng.choice(origins)
        mode = self.config.workload
        if mode == "mixed":
            mode = "local" if rng.random() < self.config.Q else "outside"
        sid = overlay.peers[origin].superpeer
        uid = overlay.peers[sid].ultra
        group_keys = sorted(overlay.peers[sid].index.entries)
        if mode == "local" and group_keys:
            return origin, rng.choice(group_keys)

        def publishers_ultras(k):
            return {overlay.ultra_of(p) for p in registry[k]}

        def accept(k):
            if k in overlay.peers[sid].index:
                return False
            if mode == "outside":
                return True
            mirrored_here = overlay.ring_owner(k) == uid
            under_own = uid in publishers_ultras(k)
            if mode == "same-ultra":
                return under_own
            return not under_own and not mirrored_here

        for _ in range(256):
            k = rng.choice(keys)
            if accept(k):
                return origin, k
        candidates = [k for k in keys if accept(k)]
        if candidates:
            return origin, rng.choice(candidates)
        return origin, rng.choice(keys)


# -- metrics -------------------------------------------------------------


@dataclass
class MetricsReport:
    model: str
    N: int
    U: int
    S: int
    m: int
    Q: float
    seed: int
    lookups: int
    mean_hops: float
    p95_hops: float
    mean_latency_ms: float
    p95_latency_ms: float
    case_counts: dict[str, int]
    case_mean_hops: dict[str, float]
    caseC_ring_hops_mean: float
    predicted_flat_hops: float
    predicted_ring_hops: float
    lost_key_count: int
    failed_lookup_count: int

    def row(self) -> dict[str, str]:
        return {
            "model": self.model, "N": str(self.N), "U": str(self.U), "S": str(self.S),
            "m": str(self.m), "Q": _num(self.Q), "seed": str(self.seed),
            "mean_hops": _num(self.mean_hops), "p95_hops": _num(self.p95_hops),
            "mean_latency_ms": _num(self.mean_latency_ms), "p95_latency_ms": _num(self.p95_latency_ms),
            "caseA_n": str(self.case_counts["A"]), "caseB_n": str(self.case_counts["B"]),
            "caseC_n": str(self.case_counts["C"]), "caseC_ring_hops_mean": _num(self.caseC_ring_hops_mean),
            "predicted_flat_hops": _num(self.predicted_flat_hops),
            "predicted_ring_hops": _num(self.predicted_ring_hops),
            "lost_keys": str(self.lost_key_count), "failed_lookups": str(self.failed_lookup_count),
        }

    def complexity_note(self) -> str:
        if self.model == "flat":
            return f"O(log N): measured mean {self.mean_hops:.3f} hops, predicted 1/2*log2(N) = {self.predicted_flat_hops:.3f}"
        closed = {
            "2 + 1/2*log2(U)": 2 + self.predicted_ring_hops,
            "1/2*(log2(U) + 2)": 0.5 * (math.log2(self.U) + 2),
            "1/2*log2(U + 2)": 0.5 * math.log2(self.U + 2),
        }
        forms = ", ".join(f"{k} = {v:.3f}" for k, v in closed.items())
        return (f"O(log U + 1 + 1): measured mean {self.mean_hops:.3f} hops, "
                f"case C mean ring hops {self.caseC_ring_hops_mean:.3f}; {forms}")


def _num(x: float) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return f"{x:.6f}"


def _mean(xs):
    return statistics.fmean(xs) if xs else float("nan")


def summarize(config: ExperimentConfig, traces: list[LookupTrace], registry: dict[int, set[int]],
              lost_keys: int = 0) -> MetricsReport:
    hops = [t.hops for t in traces]
    lat = [t.latency for t in traces]
    by_case = {lvl.value: [t for t in traces if t.resolution_level is lvl] for lvl in Level}
    failed = sum(1 for t in traces if t.failed or (not t.found and registry.get(t.key_id)))
    case_c = by_case["C"]
    ring_hops = [t.hops - 2 for t in case_c] if config.model == "hierarchical" else [t.ring_hops for t in case_c]
    return MetricsReport(
        model=config.model, N=config.N, U=config.U, S=config.S, m=config.m, Q=config.Q,
        seed=config.seed, lookups=len(traces),
        mean_hops=_mean(hops),
        p95_hops=float(np.percentile(hops, 95)) if hops else float("nan"),
        mean_latency_ms=_mean(lat),
        p95_latency_ms=float(np.percentile(lat, 95)) if lat else float("nan"),
        case_counts={k: len(v) for k, v in by_case.items()},
        case_mean_hops={k: _mean([t.hops for t in v]) for k, v in by_case.items()},
        caseC_ring_hops_mean=_mean(ring_hops),
        predicted_flat_hops=0.5 * math.log2(config.N),
        predicted_ring_hops=0.5 * math.log2(config.U) if config.U >= 1 else float("nan"),
        lost_key_count=lost_keys,
        failed_lookup_count=failed,
    )


# -- experiments ---------------------------------------------------------


@dataclass
class ExperimentResult:
    report: MetricsReport
    traces: list[LookupTrace]
    log: list[str]
    overlay: Overlay | FlatNetwork


def make_engine(config: ExperimentConfig, overlay: Overlay, streams: RngStreams) -> Engine:
    engine = Engine(
        overlay, streams,
        ping_period_ms=int(round(config.ping_period * 1000)),
        stabilize_period_ms=int(round(config.stabilize_period * 1000)),
        keys_per_peer=config.keys_per_peer,
        latency_range=config.latency_range,
        churn=config.churn,
    )
    engine.choose_lookup = HierarchicalWorkload(config)
    return engine


def execute(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment and keep its traces, event log and final state."""
    streams = RngStreams(config.seed)
    if config.model == "flat":
        net = build_flat(config, streams)
        rng = streams["workload"]
        origins = sorted(net.ring.live)
        registry: dict[int, set[int]] = {}
        for node, keys in net.store.items():
            for k, ps in keys.items():
                registry.setdefault(k, set()).update(ps)
        keys = sorted(registry)
        traces, log = [], []
        for i in range(config.lookups):
            origin, key = rng.choice(origins), rng.choice(keys)
            t = flat_lookup_id(origin, key, net)
            traces.append(t)
            log.append(f"0,{i},lookup,-,origin={origin};key_id={key};outcome={t.outcome.value};"
                       f"hops={t.hops};latency={round(t.latency, 6)!r}")
        return ExperimentResult(summarize(config, traces, registry), traces, log, net)

    overlay = build_overlay(config, streams)
    engine = make_engine(config, overlay, streams)
    engine.start_periodic()
    if config.churn_events:
        last = engine.schedule_churn(config.churn_events)
        engine.run_until(last)
    engine.quiesce()
    for _ in range(config.lookups):
        engine.schedule(engine.clock, EventKind.LOOKUP)
    engine.run_until(engine.clock)
    report = summarize(config, engine.traces, overlay.registry(), overlay.lost_key_count)
    return ExperimentResult(report, engine.traces, engine.log, overlay)


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    return execute(config).report


def render_csv(reports: Iterable[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def sweep(configs: list[ExperimentConfig], output_path: str | os.PathLike | None = None,
          jobs: int = 1) -> list[MetricsReport]:
    """One CSV row per config, in config order regardless of completion order."""
    if not configs:
        raise ConfigError("sweep needs at least one config")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_experiment, configs))
    else:
        reports = [run_experiment(c) for c in configs]
    if output_path is not None:
        Path(output_path).write_text(render_csv(reports))
    return reports


def demo_sweep(seed: int = 0, lookups: int = 10_000, exponents=range(6, 13), **extra) -> list[ExperimentConfig]:
    """Paired flat/hierarchical configs with U = N/16, S = N/4."""
    out = []
    for e in exponents:
        n = 1 << e
        for model in ("flat", "hierarchical"):
            out.append(ExperimentConfig(model=model, N=n, U=max(1, n // 16), S=max(1, n // 4),
                                        seed=seed, lookups=lookups, **extra))
    return out


# -- oracle check --------------------------------------------------------


@dataclass
class Mismatch:
    origin: int
    key_id: int
    reason: str
    trace: LookupTrace | None = None


@dataclass
class OracleReport:
    samples: int
    mismatches: list[Mismatch]

    @property
    def passed(self) -> bool:
        return not self.mismatches


def _scan_successor(ids: list[int], key: int, modulus: int) -> int:
    return min(ids, key=lambda n: (n - key) % modulus)


class _GreedyOracle:
    """Independent model of finger routing: fingers by linear scan, greedy walk."""

    def __init__(self, ids: Iterable[int], space: IdSpace):
        self.ids = sorted(ids)
        self.space = space
        mod = space.modulus
        self.succ = {n: _scan_successor(self.ids, (n + 1) % mod, mod) for n in self.ids}
        self.pred = {n: min(self.ids, key=lambda x: (n - x - 1) % mod) for n in self.ids}
        self.fingers = {
            n: sorted({_scan_successor(self.ids, (n + (1 << i)) % mod, mod) for i in range(space.m)},
                      key=lambda f: (f - n) % mod)
            for n in self.ids
        }

    def walk(self, origin: int, key: int) -> tuple[int, list[int]]:
        mod = self.space.modulus
        cur, path = origin, [origin]
        if len(self.ids) == 1 or (key - self.pred[cur] - 1) % mod < (cur - self.pred[cur]) % mod:
            return cur, path
        while True:
            succ = self.succ[cur]
            if 0 < (key - cur) % mod <= (succ - cur) % mod or (key - cur) % mod == 0 and succ == cur:
                return succ, path
            best = cur
            for f in self.fingers[cur]:
                if 0 < (f - cur) % mod < (key - cur) % mod:
                    best = f
            cur = best if best != cur else succ
            path.append(cur)


def oracle_check(config: ExperimentConfig, samples: int = 1000, *, exhaustive: bool = False,
                 corrupt: Callable[[Overlay], None] | None = None) -> OracleReport:
    """Compare both lookup paths against brute-force ground truth."""
    streams = RngStreams(config.seed)
    space = IdSpace(config.m)
    mismatches: list[Mismatch] = []
    rng = streams["oracle"]
    n_checked = 0

    # flat baseline
    flat_cfg = replace(config, model="flat")
    net = build_flat(flat_cfg, RngStreams(config.seed))
    flat_ids = sorted(net.ring.live)
    flat_oracle = _GreedyOracle(flat_ids, space)
    truth_store: dict[int, set[int]] = {}
    for j_peer in flat_ids:
        for j in range(config.keys_per_peer):
            truth_store.setdefault(hash_id(key_name(j_peer, j), space), set()).add(j_peer)

    def flat_pairs():
        if exhaustive:
            for k in range(space.modulus):
                for o in flat_ids:
                    yield o, k
        else:
            known = sorted(truth_store)
            for _ in range(samples):
                # half the samples target published keys so hits are exercised too
                key = rng.choice(known) if known and rng.random() < 0.5 else rng.randrange(space.modulus)
                yield rng.choice(flat_ids), key

    for origin, key in flat_pairs():
        n_checked += 1
        t = flat_lookup_id(origin, key, net)
        owner, path = flat_oracle.walk(origin, key)
        expect = truth_store.get(key, set())
        if t.owner != owner or _scan_successor(flat_ids, key, space.modulus) != owner:
            mismatches.append(Mismatch(origin, key, f"flat owner {t.owner} != oracle {owner}", t))
        elif t.ring_hops != len(path) - 1:
            mismatches.append(Mismatch(origin, key, f"flat hops {t.ring_hops} != oracle {len(path) - 1}", t))
        elif set(t.peers) != expect:
            mismatches.append(Mismatch(origin, key, f"flat result {sorted(t.peers)} != {sorted(expect)}", t))

    if config.model != "hierarchical":
        return OracleReport(n_checked, mismatches)

    overlay = build_overlay(config, RngStreams(config.seed))
    if corrupt is not None:
        corrupt(overlay)
    registry = overlay.registry()
    ultras = list(overlay.ultra_ids)
    ring_oracle = _GreedyOracle(ultras, space)
    origins = overlay.role_ids(Role.ORDINARY, alive_only=True)
    group_of = {o: overlay.peers[o].superpeer for o in origins}
    members = {}
    for o, s in group_of.items():
        members.setdefault(s, {s}).add(o)
    domain = {}  # publisher -> ultra
    for pid in overlay.peers:
        domain[pid] = overlay.ultra_of(pid)

    def hier_pairs():
        if exhaustive:
            for k in range(space.modulus):
                for o in origins:
                    yield o, k
        else:
            known = sorted(registry)
            for _ in range(samples):
                key = rng.choice(known) if known and rng.random() < 0.5 else rng.randrange(space.modulus)
                yield rng.choice(origins), key

    for origin, key in hier_pairs():
        n_checked += 1
        t = lookup_key_id(origin, key, overlay)
        pubs = registry.get(key, set())
        sid = group_of[origin]
        uid = domain[sid]
        local = pubs & members[sid]
        if local:
            level, expect = Level.LOCAL_SUPER, local
        elif any(domain[p] == uid for p in pubs) or (pubs and _scan_successor(ultras, key, space.modulus) == uid):
            level = Level.OWN_ULTRA
            expect = pubs if _scan_successor(ultras, key, space.modulus) == uid else {p for p in pubs if domain[p] == uid}
        else:
            level = Level.RING
            expect = None
        problem = None
        if t.resolution_level is not level:
            problem = f"level {t.resolution_level.value} != oracle {level.value}"
        elif level is not Level.RING:
            if set(t.peers) != expect:
                problem = f"peers {sorted(t.peers)} != oracle {sorted(expect)}"
        else:
            owner = _scan_successor(ultras, key, space.modulus)
            _, path = ring_oracle.walk(uid, key)
            # first ultra on the oracle path holding a row for the key
            stop, stop_hops, found = owner, len(path) - 1, set()
            for i, node in enumerate(path[1:], 1):
                hit = {p for p in pubs if domain[p] == node}
                if hit:
                    stop, stop_hops, found = node, i, hit
                    break
            else:
                found = set(pubs)
            if t.ring_hops != stop_hops:
                problem = f"ring hops {t.ring_hops} != oracle {stop_hops}"
            elif set(t.peers) != found:
                problem = f"peers {sorted(t.peers)} != oracle {sorted(found)}"
            elif stop == owner and not t.peers and pubs:
                problem = "not found although a live publisher exists"
        if problem is None and t.hops != {Level.LOCAL_SUPER: 1, Level.OWN_ULTRA: 2}.get(level, 2 + t.ring_hops):
            problem = f"hops {t.hops} break the case formula"
        if problem is None and t.found and not set(t.peers) <= pubs:
            problem = "returned a peer that did not publish the key"
        if problem is not None:
            mismatches.append(Mismatch(origin, key, problem, t))
    return OracleReport(n_checked, mismatches)


# -- event logs and replay -----------------------------------------------

LOG_HEADER = "time_ms,seq,kind,subject_id,detail"


def render_log(config: ExperimentConfig, log: list[str]) -> str:
    """Event log preceded by the config as ``#`` lines so it can be replayed alone."""
    head = "".join(f"# {line}\n" for line in config.to_text().splitlines())
    return head + LOG_HEADER + "\n" + "".join(line + "\n" for line in log)


def parse_log(text: str) -> tuple[ExperimentConfig, list[tuple[int, int, str, int | None, str]]]:
    config_lines, events = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.startswith("#"):
            config_lines.append(raw[1:])
            continue
        if not raw.strip() or raw == LOG_HEADER:
            continue
        parts = raw.split(",", 4)
        if len(parts) != 5:
            raise ConfigError(f"log line {lineno}: expected 5 fields, got {raw!r}")
        t, seq, kind, subject, detail = parts
        try:
            events.append((int(t), int(seq), kind, None if subject == "-" else int(subject), detail))
        except ValueError as exc:
            raise ConfigError(f"log line {lineno}: {exc}") from exc
    if not config_lines:
        raise ConfigError("event log carries no config header")
    return ExperimentConfig.from_text("\n".join(config_lines)), events


def _replay_payload(kind: EventKind, detail: dict[str, str]) -> dict:
    if kind is EventKind.JOIN:
        return {k: detail[k] for k in ("cap", "avail", "open", "lat")}
    if kind is EventKind.PUBLISH:
        return {"key": detail["key"]}
    if kind is EventKind.LOOKUP:
        return {"origin": detail["origin"], "key_id": detail["key_id"]}
    return {}


def replay(text: str) -> tuple[list[str], list[str]]:
    """Re-execute a logged run from its recorded inputs.

    Returns ``(original, regenerated)`` event lines; they are equal when the
    simulator is deterministic.
    """
    config, events = parse_log(text)
    original = [f"{t},{q},{k},{'-' if s is None else s},{d}" for t, q, k, s, d in events]
    if config.model == "flat":
        net = build_flat(config, RngStreams(config.seed))
        out = []
        for t, q, kind, _, detail in events:
            p = parse_detail(detail)
            tr = flat_lookup_id(int(p["origin"]), int(p["key_id"]), net)
            out.append(f"{t},{q},{kind},-,origin={p['origin']};key_id={p['key_id']};"
                       f"outcome={tr.outcome.value};hops={tr.hops};latency={round(tr.latency, 6)!r}")
        return original, out

    streams = RngStreams(config.seed)
    overlay = build_overlay(config, streams)
    engine = make_engine(config, overlay, streams)
    engine.replaying = True
    for t, q, kind, subject, detail in events:
        k = EventKind(kind)
        engine.schedule(t, k, subject, _replay_payload(k, parse_detail(detail)), sequence=q)
    if events:
        engine.run_until(max(e[0] for e in events))
    return original, engine.log
