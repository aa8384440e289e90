from __future__ import annotations


class SylvInitError(Exception):
    """
    Base for every error the library raises on bad input or degenerate data.
    """


class ShapeError(SylvInitError, ValueError):
    pass


class ParameterError(SylvInitError, ValueError):
    pass


class LabelError(SylvInitError, ValueError):
    pass


class InsufficientDataError(SylvInitError):
    pass


class DegenerateLabelsError(SylvInitError):
    pass


class ConfigurationError(SylvInitError):
    pass


class FormatError(SylvInitError, ValueError):
    pass


class DegenerateActivationError(SylvInitError):
    """
    All activations entering a layer are zero, so there is nothing to encode.
    """

    def __init__(self, layer: str):
        super().__init__(f"all-zero activations entering layer {layer!r}")
        self.layer = layer
