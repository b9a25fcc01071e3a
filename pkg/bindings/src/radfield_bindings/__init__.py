"""Array access to radiation field files without the simulation stack."""
from ._reader import (BindingError, ChecksumError, FieldHandle, FormatError,
                      TruncatedError, UnknownNameError, open_field)

__version__ = "0.1.0"

__all__ = ["open_field", "FieldHandle", "BindingError", "FormatError",
           "TruncatedError", "ChecksumError", "UnknownNameError"]
