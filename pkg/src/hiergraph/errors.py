"""Exception taxonomy for the engine.

Every data or validation failure raised by this package derives from
EngineError so callers (and the CLI exit-code mapping) can catch one type.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


# --- tensor serialization ---

class BadMagic(EngineError):
    pass


class UnsupportedVersion(EngineError):
    pass


class LengthMismatch(EngineError):
    pass


class NonFiniteValue(EngineError):
    pass


# --- label maps / superpixels ---

class NonContiguousLabels(EngineError):
    pass


class NegativeLabel(EngineError):
    pass


class TooManyRegions(EngineError):
    pass


class ZeroTargetSize(EngineError):
    pass


class TargetCountExceedsPixels(EngineError):
    pass


# --- graph construction / message passing ---

class DimensionMismatch(EngineError):
    pass


class ShapeMismatch(EngineError):
    pass


class EmptyGraph(EngineError):
    pass


class InvalidM(EngineError):
    pass


class LevelCountMismatch(EngineError):
    pass


class IsolatedDestination(EngineError):
    pass


class MissingTopDownState(EngineError):
    pass


# --- heads / training ---

class IndivisibleSize(EngineError):
    pass


class AllPixelsIgnored(EngineError):
    pass


# --- applications ---

class LevelOutOfRange(EngineError):
    pass


class OutOfBoundsClick(EngineError):
    pass


# --- config / costing / differentiation ---

class InvalidConfig(EngineError):
    pass


class NonDeterministicFunction(EngineError):
    pass
