class SimError(Exception):
    """Base class for simulator errors."""


class InvalidArgument(SimError, ValueError):
    pass


class CollisionError(SimError):
    """Two peers would share one identifier."""


class NoRouteError(SimError):
    pass


class NotFoundError(SimError, KeyError):
    pass


class PlacementUnavailable(SimError):
    """The responsible ultra-superpeer currently has no superpeers."""


class UnsupportedTopology(SimError):
    pass


class InvalidOrigin(SimError):
    pass


class SchedulingError(SimError):
    pass


class ConfigError(SimError, ValueError):
    pass
