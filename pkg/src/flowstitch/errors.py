"""Exception hierarchy shared across the package."""


class FlowStitchError(Exception):
    """Base class for all recoverable errors raised by flowstitch."""


class ContractError(FlowStitchError, ValueError):
    """Inputs violate an operation's preconditions (shapes, ranges, types)."""


class NoOverlapError(ContractError):
    """Two images share no overlapping pixels."""


class EmptyRegionError(ContractError):
    """A mask that must contain at least one pixel is empty."""


class NoTextureError(FlowStitchError):
    """Inputs carry too little intensity variation to be matched."""


class LayoutError(FlowStitchError):
    """Layout file is malformed or places an image outside the canvas."""


class ImageFormatError(FlowStitchError, OSError):
    """Raster file exists but its encoding is not supported."""
