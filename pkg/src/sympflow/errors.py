"""Shared exception types."""


class NumericalError(RuntimeError):
    """A computation produced non-finite or otherwise unusable values."""


class TrainingError(NumericalError):
    """Training diverged; carries the last finite state.

    Attributes:
        params: flat parameter vector from before the failing step.
        history: per-epoch loss records accumulated so far.
    """

    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


class IntegrationError(RuntimeError):
    """Adaptive integration failed; carries the partial trajectory.

    Attributes:
        records: accepted steps up to the failure.
    """

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records if records is not None else []
