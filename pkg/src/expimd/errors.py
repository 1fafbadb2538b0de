"""Exception types shared across the package, with CLI exit-code mapping."""


class ExpimdError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(ExpimdError):
    """Array shape does not match the system specification."""

    def __init__(self, what, expected, actual):
        self.what = what
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(f"{what}: expected shape {self.expected}, got {self.actual}")


class ConfigError(ExpimdError):
    """Invalid run configuration (bad key, bad unit, inconsistent block)."""

    exit_code = 2


class NumericsError(ExpimdError):
    """Non-finite coordinate or energy encountered during integration."""

    exit_code = 3

    def __init__(self, message, step=None, particle=None, bead=None):
        self.step = step
        self.particle = particle
        self.bead = bead
        detail = []
        if step is not None:
            detail.append(f"step {step}")
        if particle is not None:
            detail.append(f"particle {particle}")
        if bead is not None:
            detail.append(f"bead {bead}")
        if detail:
            message = f"{message} ({', '.join(detail)})"
        super().__init__(message)


class SignCollapseError(ExpimdError):
    """The symmetry-weight denominator is statistically consistent with zero.

    Fermionic averages become meaningless ratios in this regime; the fix is
    enhanced sampling of the exchange variable, not more of the same samples.
    """

    exit_code = 4

    def __init__(self, mean, stderr, channel="fermion"):
        self.mean = mean
        self.stderr = stderr
        self.channel = channel
        super().__init__(
            f"sign collapse in {channel} channel: <W> = {mean:.3e} +- {stderr:.3e} "
            "(|mean| < 2 stderr); bias the exchange variable and rerun"
        )


class NoOverlapError(ExpimdError):
    """The two Bennett legs share no overlap in the exchange variable."""

    exit_code = 5


class OverflowGuardError(ExpimdError):
    """A plain-float result would overflow; use the signed-log API instead."""


class ConvergenceError(ExpimdError):
    """An iterative computation failed to converge within its budget."""

    def __init__(self, message, history=None):
        self.history = history
        super().__init__(message)
