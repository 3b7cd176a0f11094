"""Global size caps guarding accidental huge dense builds."""

import os

DEFAULT_STATE_CAP = 2 ** 20
SIZE_CAP_ENV = "BOTLAB_SIZE_CAP"


def state_cap() -> int:
    """Current cap on the number of dense states (q^#variables).

    Overridable through the BOTLAB_SIZE_CAP environment variable.
    """
    raw = os.environ.get(SIZE_CAP_ENV)
    if raw is None:
        return DEFAULT_STATE_CAP
    value = int(raw)
    if value <= 0:
        raise ValueError("size cap must be positive")
    return value


def check_states(count: int, what: str) -> None:
    """Raise SizeLimit when a dense object of `count` states exceeds the cap."""
    from .errors import SizeLimit

    if count > state_cap():
        raise SizeLimit(f"{what}: {count} states exceed cap {state_cap()}")
