"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class AnatoforgeError(Exception):
    """Base class for all errors raised by this package."""


class NiftiFormatError(AnatoforgeError):
    """The file is not a NIfTI-1 volume this reader can decode."""


class MalformedHeaderError(NiftiFormatError):
    pass


class UnsupportedDatatypeError(NiftiFormatError):
    pass


class TruncatedPayloadError(NiftiFormatError):
    pass


class DimensionMismatchError(NiftiFormatError):
    pass


class GeometryMismatchError(AnatoforgeError, ValueError):
    """Two grids that must coincide do not."""


class GeometryIncompatibleError(AnatoforgeError):
    """One or more dataset cases live on a different grid than the reference case."""

    def __init__(self, case_ids, message: str | None = None):
        self.case_ids = list(case_ids)
        super().__init__(message or f"geometry incompatible cases: {', '.join(self.case_ids)}")


class UnknownOrganError(AnatoforgeError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyMaskError(AnatoforgeError, ValueError):
    pass


class NoCasesFoundError(AnatoforgeError):
    pass


class MissingVolumeError(AnatoforgeError, FileNotFoundError):
    pass


class UnboundedHoleError(AnatoforgeError, ValueError):
    """A hole component has no non-hole neighbour to take boundary values from."""


class SpecInfeasibleError(AnatoforgeError, ValueError):
    pass


class ConfigError(AnatoforgeError):
    pass
