"""Shared exception types."""


class ConfigurationError(Exception):
    """A run was requested with inputs that cannot support it (e.g. a
    geometry-based variant without a mesh, or a missing frame buffer)."""


class FrameNotFoundError(KeyError):
    """A segmenter query referenced a frame the bound dataset does not have."""


class ProtocolError(RuntimeError):
    """A mask-server response violated the wire protocol."""
