"""Exception hierarchy shared by all modules."""


class QRNGError(Exception):
    """Base class for package errors."""


class ConfigError(QRNGError, ValueError):
    """Invalid scene, pipeline or test parameters."""


class FormatError(QRNGError, ValueError):
    """A PTAG/QBIT/CSV file does not follow its format.

    ``offset`` is the byte offset of the first offending byte, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FitError(QRNGError, RuntimeError):
    """The antibunching fit failed to converge.

    ``trace`` holds one ``(iteration, a, tau0_ns, cost)`` tuple per step.
    """

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = list(trace)
