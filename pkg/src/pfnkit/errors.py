"""Typed exceptions shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse raises the closest match rather than a bare
ValueError so the CLI can map errors to exit codes uniformly.
"""


class PfnError(Exception):
    """Base class for all package errors."""


class DimensionError(PfnError):
    """Shapes or axis extents are incompatible."""


class NumericError(PfnError):
    """A computation produced or encountered non-finite values."""


class LabelError(PfnError):
    """A class label is outside the valid range."""


class DistributionError(PfnError):
    """Rows expected to be probability distributions are not normalized."""


class ConfigurationError(PfnError):
    """A configuration value is invalid or inconsistent."""


class CapacityError(PfnError):
    """Total context length exceeds what the model accepts."""


class FeatureBudgetError(PfnError):
    """More features than the model was built for; reduce them first."""


class ClassBudgetError(PfnError):
    """More classes than the decoder emits; retrain the decoder first."""


class DegenerateTaskError(PfnError):
    """A sampled task cannot satisfy its class-coverage invariant."""


class PromptTooShortError(ConfigurationError):
    """Prompt length cannot place at least one row per class."""


class TransformError(PfnError):
    """A feature transform was applied to a dataset with a different schema."""


class GroupError(PfnError):
    """A protected/unprotected group required by a fairness metric is empty."""


class ParseError(PfnError):
    """A CSV cell or row could not be parsed; message carries the address."""


class TaskError(PfnError):
    """A dataset cannot form a classification task (e.g. a single class)."""


class MetricError(PfnError):
    """A metric was called on empty or mismatched inputs."""


class StatisticsError(PfnError):
    """Significance-test preconditions are not met."""


class CompletenessError(PfnError):
    """The result matrix is missing a (dataset, algorithm, fold) cell."""


class SearchError(PfnError):
    """Every candidate in a grid search failed; message lists the failures."""


class SerializationError(PfnError):
    """A checkpoint, prompt, or tensor blob is malformed."""
