"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: format/dimension/provenance problems are
input errors (exit 1), divergence and NaN propagation are numerical failures
(exit 2).
"""


class NencError(Exception):
    """Base class for all toolkit errors."""


class FormatError(NencError):
    """An on-disk artifact is malformed or inconsistent with its manifest."""


class DimensionError(NencError):
    """Array shapes disagree with a declared contract."""


class ProvenanceError(NencError):
    """A data flow violates fold isolation or two-stage training order."""


class NumericalError(NencError):
    """NaN inputs, singular systems, or other numerical dead ends."""


class DivergenceError(NumericalError):
    """An optimization run produced non-finite or runaway losses.

    Carries the epoch at which divergence was detected and the
    hyperparameters of the failed run.
    """

    def __init__(self, message, epoch=None, **hyper):
        super().__init__(message)
        self.epoch = epoch
        self.hyper = dict(hyper)
