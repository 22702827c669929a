"""Exception types shared across the toolkit."""


class WavFormatError(ValueError):
    """Malformed RIFF/WAVE container or chunk layout."""


class UnsupportedWavError(ValueError):
    """Valid WAV container with an encoding we do not read."""


class IncompatibilityError(ValueError):
    """Two inputs that must agree (rate, channels, dimension) do not."""


class UndefinedInputError(ValueError):
    """Input on which the operation has no defined result (silence, empty set)."""


class NumericError(ArithmeticError):
    """Numerical failure: non-finite values, covariance not PSD, etc."""


class ConstraintError(ValueError):
    """One or more task constraints violated.

    ``violations`` holds (task, constraint, value) triples so callers can
    report every violated constraint, not only the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [("", violations, None)]
        self.violations = list(violations)
        parts = [
            f"{task + ': ' if task else ''}{name}" + (f" (got {value!r})" if value is not None else "")
            for task, name, value in self.violations
        ]
        super().__init__("; ".join(parts))


class BackendError(RuntimeError):
    """A generator / embedder / LLM backend failed."""


class ConfigurationError(ValueError):
    """Unknown profile, bad config file, or invalid run configuration."""


class SamplerError(RuntimeError):
    """Parameter sampler could not produce a feasible draw."""


class StudyError(RuntimeError):
    """Every trial of an optimization study failed.

    ``failures`` holds one (trial_index, message) pair per failed trial.
    """

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class CandidateSearchExhausted(RuntimeError):
    """No candidate configuration passed the judge filter."""


class CapacityError(RuntimeError):
    """A sampling pool is too small for the requested draw."""


class ValidationFailure(ValueError):
    """A record failed manifest validation; ``reason`` names the check."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


class ConflictError(RuntimeError):
    """State transition already happened (e.g. verdict submitted twice)."""


class NotFoundError(KeyError):
    """Unknown study, comparison, or contender id."""
