"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration file or value failed validation.

    Messages name the offending key, e.g. ``"radio.bandwidth_hz must be
    positive"``.
    """


class DegeneracyError(RuntimeError):
    """A particle set lost all of its probability mass."""


class ProtocolError(RuntimeError):
    """Base class for chain wire-protocol violations."""

    code = "protocol"


class BadMagicError(ProtocolError):
    code = "bad-magic"


class UnsupportedVersionError(ProtocolError):
    code = "unsupported-version"


class CrcMismatchError(ProtocolError):
    code = "crc-mismatch"


class TruncatedFrameError(ProtocolError):
    code = "truncated"


class OutOfOrderError(ProtocolError):
    code = "out-of-order"


class ChainAbortedError(RuntimeError):
    """A timestep could not be completed; carries the failing panel index."""

    def __init__(self, panel_id: int, message: str):
        super().__init__(f"panel {panel_id}: {message}")
        self.panel_id = panel_id
