"""Exception hierarchy shared by every layer of the framework."""


class CosyncError(Exception):
    """Base class for all engine, coupling and configuration errors."""


# kernel
class SchedulingInPast(CosyncError, ValueError):
    pass


class TimeOverflow(CosyncError, OverflowError):
    pass


# orchestrator
class DuplicateSimId(CosyncError, ValueError):
    pass


class UnknownEndpoint(CosyncError, KeyError):
    pass


class ClockRegression(CosyncError):
    pass


class DeadlockDetected(CosyncError):
    pass


# netsim
class MalformedTopology(CosyncError, ValueError):
    pass


class UnboundSimulator(CosyncError, KeyError):
    pass


class UnknownNode(CosyncError, KeyError):
    pass


# bridge
class ProtocolError(CosyncError):
    """Any violation of the coupling protocol. Always fatal for the run."""


class HandshakeFailure(ProtocolError):
    pass


class ProtocolViolation(ProtocolError):
    pass


class UnknownMsgId(ProtocolError, KeyError):
    pass


class FrameError(ProtocolError, ValueError):
    pass


class FrameTooShort(FrameError):
    pass


class UnknownType(FrameError):
    pass


class MalformedBody(FrameError):
    pass


# agents
class InvalidParams(CosyncError, ValueError):
    pass


class MalformedPayload(CosyncError, ValueError):
    pass


# configuration
class ConfigError(CosyncError):
    pass


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
