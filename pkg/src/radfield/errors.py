"""Exception types shared across the package.

Every failure that can reach a caller is a subclass of RadfieldError so
that fuzzing and CLI dispatch can catch one family.  Codec errors carry
enough context (layer names, offsets) to be actionable without a debugger.
"""
from __future__ import annotations


class RadfieldError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(RadfieldError):
    """Base class for binary field file codec errors."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class LayoutError(FormatError):
    """Structurally inconsistent file: lengths, counts, tags, or ranges."""


class InvalidFieldError(RadfieldError):
    """An in-memory field violates a type invariant (caught before writing)."""


class UnknownNameError(RadfieldError):
    """Lookup of a channel or layer name that does not exist."""


class SpectrumError(RadfieldError):
    pass


class MaterialError(RadfieldError):
    pass


class SceneError(RadfieldError):
    pass


class ScoringError(RadfieldError):
    pass


class DosimetryError(RadfieldError):
    pass


class OutOfBoundsError(DosimetryError):
    """A scan point left the interpolatable region of the grid."""


class ConfigError(RadfieldError):
    pass
