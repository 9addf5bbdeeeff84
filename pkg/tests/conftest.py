import pytest

from hichord.hierarchy import CapabilityProfile, Overlay, PeerState, Role
from hichord.ident import IdSpace


def peer(pid, role=Role.ORDINARY, cap=1.0, avail=0.0, open_=True, lat=65.0):
    return PeerState(pid, role, CapabilityProfile(cap, avail, open_), lat)


def make_overlay(ultras, supers, ordinaries=(), m=6, **kw):
    ov = Overlay(IdSpace(m), **kw)
    ov.add_ultras(peer(u, Role.ULTRA) for u in ultras)
    for s in supers:
        ov.add_super(peer(s, Role.SUPER))
    for o in ordinaries:
        ov.join_overlay(peer(o))
    return ov


@pytest.fixture
def small_overlay():
    # ultras 20 and 50; supers 10, 18 under 20 and 30, 45 under 50
    return make_overlay([20, 50], [10, 18, 30, 45], [2, 5, 12, 25, 40, 47, 60])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
