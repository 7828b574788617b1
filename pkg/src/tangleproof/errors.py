"""Exception hierarchy shared by the simulator, the forcer and the CLI."""


class TangleError(Exception):
    """Base class for every error raised by tangleproof."""


class ConfigurationError(TangleError, ValueError):
    """Model or experiment parameters violate an invariant."""


class ProtocolViolation(TangleError):
    """A decision selected a parent outside the lookback tip set."""


class OutOfHistoryError(TangleError, IndexError):
    """Lookback deeper than the retained tip history."""


class UnknownVertexError(TangleError, LookupError):
    pass


class InfeasibleOverride(TangleError):
    """An override decision has zero probability under the step law."""

    def __init__(self, step, message, parent=None):
        self.step = step
        self.parent = parent
        super().__init__(f"step {step}: {message}")


class NotAtBottleneck(TangleError):
    """The anchor state does not satisfy L <= b."""


class NoAnchorError(TangleError):
    """No step with L <= b was found in the searched window."""


class ConstructionFailure(TangleError):
    """A bottleneck phase could not be realized from the given state."""

    def __init__(self, message, phase=None, step=None, case=None):
        self.phase = phase
        self.step = step
        self.case = case
        super().__init__(message)


class LabelRangeError(TangleError, ValueError):
    pass


class VerificationInputError(TangleError, ValueError):
    """Trace and plan do not describe the same experiment."""


class StabilizationError(TangleError, AssertionError):
    def __init__(self, message, vertex=None):
        self.vertex = vertex
        super().__init__(message)


class SchemaError(TangleError):
    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
