"""Exception hierarchy shared by every jasf module."""


class JasfError(Exception):
    """Base class for all jasf errors."""


class InvalidIp(JasfError, ValueError):
    pass


class InvalidMobile(JasfError, ValueError):
    pass


class MissingSourceAddress(JasfError):
    pass


class StateError(JasfError):
    """Operation is not legal in the session's current state."""


class SessionExpired(JasfError):
    pass


class UnknownUsername(JasfError, KeyError):
    pass


class DuplicateUsername(JasfError):
    pass


class SameMobileTwice(JasfError, ValueError):
    pass


class InvalidScenario(JasfError, ValueError):
    pass


class UnknownAxis(JasfError, ValueError):
    pass
