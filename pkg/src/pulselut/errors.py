"""Exception hierarchy. Exit-code grouping lives in cli.py."""


class PulselutError(Exception):
    pass


# -- source / frontend -------------------------------------------------

class SourceError(PulselutError):
    """Errors that point at a source location."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class IllegalCharacter(SourceError):
    pass


class JaqalSyntaxError(SourceError):
    def __init__(self, message, line=None, column=None, expected=()):
        self.expected = tuple(expected)
        if self.expected:
            message = f"{message}; expected one of {', '.join(self.expected)}"
        super().__init__(message, line, column)


class UnknownIdentifier(SourceError):
    pass


class DuplicateDefinition(SourceError):
    pass


class ArityMismatch(SourceError):
    pass


# -- pulse / spline ----------------------------------------------------

class DurationTooShort(PulselutError):
    pass


class TooFewKnots(PulselutError):
    pass


class RangeOverflow(PulselutError):
    def __init__(self, message, value=None):
        self.value = value
        super().__init__(message)


class AccumulatorOverflow(PulselutError):
    pass


# -- LUT capacity ------------------------------------------------------

class CapacityExceeded(PulselutError):
    def __init__(self, message, channel=None):
        self.channel = channel
        if channel is not None:
            message = f"{message} (channel {channel})"
        super().__init__(message)


class PlutCapacityExceeded(CapacityExceeded):
    pass


class MlutCapacityExceeded(CapacityExceeded):
    pass


class GlutCapacityExceeded(CapacityExceeded):
    pass


class SharedDataConflict(PulselutError):
    pass


# -- scheduling --------------------------------------------------------

class MergeConflict(PulselutError):
    def __init__(self, channel, word_index):
        self.channel = channel
        self.word_index = word_index
        super().__init__(
            f"parallel gates disagree on channel {channel} at word {word_index}"
        )


class UnschedulableAsymmetry(PulselutError):
    pass


# -- simulation --------------------------------------------------------

class SimulationFault(PulselutError):
    pass


class FifoUnderflow(SimulationFault):
    def __init__(self, cycle, channel, slot):
        self.cycle = cycle
        self.channel = channel
        self.slot = slot
        super().__init__(f"FIFO underflow at cycle {cycle} (channel {channel}, slot {slot})")


class MissingGlutEntry(SimulationFault):
    pass


class MissingContinuation(SimulationFault):
    pass


# -- gate provider -----------------------------------------------------

class UnknownGate(PulselutError):
    pass


class RemoteUnavailable(PulselutError):
    pass


class InvalidDefinition(PulselutError):
    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("; ".join(str(f) for f in self.failures))


class ProtocolError(PulselutError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (frame offset {offset})"
        super().__init__(message)


# -- container ---------------------------------------------------------

class ProgramFormatError(PulselutError):
    pass
