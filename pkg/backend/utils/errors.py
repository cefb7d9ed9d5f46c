"""Exception types raised by the simulator.

Every error derives from ValueError so callers that only guard against bad
input keep working; the Flask surface maps DualGFLError to HTTP 400.
"""


class DualGFLError(ValueError):
    """Base class for simulator errors."""


class ConfigError(DualGFLError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class InfeasibleLinkError(DualGFLError):
    """Uplink rate is zero, so the client cannot reach the edge server."""


class InvalidCoalitionError(DualGFLError):
    pass


class InfeasibleInstanceError(DualGFLError):
    """capacity * n_servers < n_clients, no partition can cover every client."""


class RefinementError(DualGFLError):
    pass


class GuardError(DualGFLError):
    """Instance too large for an exhaustive oracle."""


class DivergenceError(DualGFLError):
    pass


class DomainError(DualGFLError):
    pass


class AggregationMismatchError(DualGFLError):
    pass
