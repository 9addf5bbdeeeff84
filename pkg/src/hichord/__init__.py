"""Three-level superpeer overlay over a Chord ring of ultra-superpeers, with a flat Chord baseline."""

from hichord.chord import ChordRing, FingerEntry, RingNode, RouteResult
from hichord.errors import (
    CollisionError,
    ConfigError,
    InvalidArgument,
    InvalidOrigin,
    NoRouteError,
    NotFoundError,
    PlacementUnavailable,
    SchedulingError,
    SimError,
    UnsupportedTopology,
)
from hichord.hierarchy import CapabilityProfile, Overlay, PeerState, Role, select_candidate
from hichord.ident import Bounds, IdSpace, hash_id, in_interval
from hichord.lookup import FlatNetwork, Level, LookupTrace, Outcome, flat_lookup, hierarchical_lookup

__all__ = [
    "Bounds", "CapabilityProfile", "ChordRing", "CollisionError", "ConfigError", "FingerEntry",
    "FlatNetwork", "IdSpace", "InvalidArgument", "InvalidOrigin", "Level", "LookupTrace",
    "NoRouteError", "NotFoundError", "Outcome", "Overlay", "PeerState", "PlacementUnavailable",
    "RingNode", "Role", "RouteResult", "SchedulingError", "SimError", "UnsupportedTopology",
    "flat_lookup", "hash_id", "hierarchical_lookup", "in_interval", "select_candidate",
]
