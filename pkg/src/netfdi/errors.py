"""Exception hierarchy shared by all netfdi modules."""


class NetFDIError(Exception):
    """Base class for all errors raised by netfdi."""

    exit_code = 1


class GraphError(NetFDIError, ValueError):
    exit_code = 2


class RangeError(NetFDIError, ValueError):
    """A requested output level lies outside the range of h on the state bounds."""

    exit_code = 2


class SolverError(NetFDIError, RuntimeError):
    """Damped Newton failed to reach the residual tolerance."""

    exit_code = 3

    def __init__(self, message, residual=None, subgraph_index=None):
        super().__init__(message)
        self.residual = residual
        self.subgraph_index = subgraph_index


class SynthesisError(NetFDIError, RuntimeError):
    exit_code = 3


class IndicationError(NetFDIError, RuntimeError):
    exit_code = 3


class ProfileError(NetFDIError, RuntimeError):
    exit_code = 3


class BoundError(NetFDIError, RuntimeError):
    exit_code = 3


class CombinationError(NetFDIError, RuntimeError):
    exit_code = 3


class DivergenceError(NetFDIError, RuntimeError):
    """State norm exceeded the blow-up bound during integration."""

    exit_code = 4

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class ScheduleError(NetFDIError, ValueError):
    exit_code = 2


class ProtocolError(NetFDIError, RuntimeError):
    exit_code = 5


class ScenarioError(NetFDIError, ValueError):
    exit_code = 2
