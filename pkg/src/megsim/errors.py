"""Exception types shared across the simulator."""


class MegsimError(Exception):
    """Base class for all simulator errors."""


class DimensionError(MegsimError):
    """Array shape does not match a layer or pipeline contract."""


class StateError(MegsimError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class TrainingError(MegsimError):
    """Training produced a non-finite loss or gradient."""


class ScheduleError(MegsimError):
    """Noise schedule violates its monotonicity or variance constraints."""


class ChannelErasure(MegsimError):
    """A block was transmitted with zero effective gain and is lost."""


class CodecError(MegsimError):
    """Seed compression or decompression contract violated."""


class FrameError(MegsimError):
    """Seed wire frame is malformed or fails its checksum."""


class ProtocolError(MegsimError):
    """Illegal session transition or mismatched request/model configuration."""
