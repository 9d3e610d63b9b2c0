"""Exception and warning types raised across the simulator."""


class OwcError(Exception):
    """Base class for all simulator errors."""


class DegenerateLens(OwcError):
    pass


class EtaUnderflow(OwcError):
    pass


class InvalidBer(OwcError):
    pass


class BitCountMismatch(OwcError):
    pass


class EpsilonUnreachable(OwcError):
    pass


class LengthMismatch(OwcError):
    pass


class InfeasibleFloor(OwcError):
    """A user's QoS power floor exceeds its power ceiling."""

    def __init__(self, floor, p_max, message=None):
        self.floor = floor
        self.p_max = p_max
        super().__init__(message or f"power floor {floor:.6g} W exceeds P_max {p_max:.6g} W")


class ZeroRate(OwcError):
    pass


class EmptyNetwork(OwcError):
    pass


class ConfigInvalid(OwcError):
    """Scenario configuration failed validation.

    ``problems`` holds ``(field, message)`` pairs so the CLI can print one
    diagnostic per offending field.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("config", problems)]
        self.problems = list(problems)
        lines = [f"{field}: {msg}" for field, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


class RankDeficientWarning(UserWarning):
    pass
