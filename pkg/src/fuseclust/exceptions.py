"""Exception and warning types raised by fuseclust."""


class FuseclustError(ValueError):
    """Base class for input errors raised by the library."""


class DegenerateInputError(FuseclustError):
    """A data-dependent scale (null deviance, range, ...) is zero."""


class FamilyMismatchError(FuseclustError):
    """The supervising variable does not have the layout its family expects."""


class NoSelectionError(FuseclustError):
    """Model selection found no admissible regularization value."""


class TargetNotReachedError(FuseclustError):
    """No fit on the regularization path produced the requested cluster count."""

    def __init__(self, target, achievable):
        self.target = target
        self.achievable = sorted(set(int(k) for k in achievable))
        super().__init__(
            f"no lambda on the path gives {target} clusters; "
            f"achievable counts: {self.achievable}"
        )


class ClippingWarning(RuntimeWarning):
    """A link or loss value left its finite domain and was clipped."""


class ConnectivityWarning(RuntimeWarning):
    """The k-NN fusion graph was disconnected and has been repaired."""


class ConfigError(FuseclustError):
    """A run configuration is malformed or inconsistent."""


class DataError(FuseclustError):
    """An input table cannot be parsed; the message names the row and column."""
