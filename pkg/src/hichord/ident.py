"""The m-bit identifier circle shared by every layer of the overlay."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

from hichord.errors import InvalidArgument

MAX_BITS = 160


class Bounds(enum.Enum):
    OPEN_OPEN = "()"
    OPEN_CLOSED = "(]"
    CLOSED_OPEN = "[)"


@dataclass(frozen=True)
class IdSpace:
    m: int = 16

    def __post_init__(self):
        if not isinstance(self.m, int) or not 1 <= self.m <= MAX_BITS:
            raise InvalidArgument(f"identifier width must be in [1, {MAX_BITS}], got {self.m!r}")

    @property
    def modulus(self) -> int:
        return 1 << self.m

    def contains(self, x: int) -> bool:
        return 0 <= x < self.modulus

    def check(self, x: int) -> int:
        if not self.contains(x):
            raise InvalidArgument(f"{x} is not an identifier in a {self.m}-bit space")
        return x


# Ids are plain ints; IdSpace owns the range check.
Id = int


def address_name(ip: str, port: int) -> bytes:
    """Canonical byte encoding of a peer address, ``b"ip:port"``."""
    return f"{ip}:{port}".encode("ascii")


def hash_id(name: bytes | str, space: IdSpace) -> Id:
    """SHA-1 of ``name`` reduced to the low ``space.m`` bits."""
    if isinstance(name, str):
        name = name.encode("utf-8")
    if not name:
        raise InvalidArgument("cannot hash an empty name")
    digest = int.from_bytes(hashlib.sha1(name).digest(), "big")
    return digest & (space.modulus - 1)


def in_interval(x: Id, a: Id, b: Id, bounds: Bounds = Bounds.OPEN_CLOSED, *, space: IdSpace | None = None) -> bool:
    """Circular interval membership of ``x`` on the arc running clockwise from ``a`` to ``b``.

    When ``a == b`` the arc is the whole circle: open-open excludes ``a``,
    open-closed and closed-open include every point.
    """
    if space is not None:
        for v in (x, a, b):
            space.check(v)
    if a == b:
        if bounds is Bounds.OPEN_OPEN:
            return x != a
        return True
    if a < b:
        lo_ok = x > a if bounds is not Bounds.CLOSED_OPEN else x >= a
        hi_ok = x < b if bounds is not Bounds.OPEN_CLOSED else x <= b
        return lo_ok and hi_ok
    # wrapped arc: (a, max] u [0, b)
    if bounds is Bounds.CLOSED_OPEN:
        return x >= a or x < b
    if bounds is Bounds.OPEN_CLOSED:
        return x > a or x <= b
    return x > a or x < b


def id_add(a: Id, k: int, space: IdSpace) -> Id:
    return (a + k) % space.modulus


def distance(a: Id, b: Id, space: IdSpace) -> int:
    """Clockwise distance from ``a`` to ``b``."""
    return (b - a) % space.modulus
