"""Exception hierarchy shared across the pipeline.

Every domain failure raises a subclass of ScamlensError so callers (CLI,
service) can map them to exit codes and HTTP statuses in one place.
"""


class ScamlensError(Exception):
    """Base class for all scamlens domain errors."""

    code = "error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


# --- schema / record validation ---

class SchemaParseError(ScamlensError):
    code = "ParseError"


class DuplicateFeatureId(ScamlensError):
    code = "DuplicateFeatureId"


class PriorityReferencesUnknownFeature(ScamlensError):
    code = "PriorityReferencesUnknownFeature"


class UnknownFeature(ScamlensError):
    code = "UnknownFeature"


class MissingRequired(ScamlensError):
    code = "MissingRequired"


class BadValueKind(ScamlensError):
    code = "BadValueKind"


class BadMode(ScamlensError):
    code = "BadMode"


# --- featurizer ---

class TooFewSamples(ScamlensError):
    code = "TooFewSamples"


class UnbinnedFeature(ScamlensError):
    code = "UnbinnedFeature"


class SingleClassDataset(ScamlensError):
    code = "SingleClassDataset"


class InvalidSplitSpec(ScamlensError):
    code = "InvalidSplitSpec"


# --- prompt engine ---

class TemplateError(ScamlensError):
    code = "TemplateError"


class WrongExemplarCount(ScamlensError):
    code = "WrongExemplarCount"


class PromptTooLong(ScamlensError):
    code = "PromptTooLong"


# --- backend gateway ---

class UnknownBackend(ScamlensError):
    code = "UnknownBackend"


class TransportError(ScamlensError):
    code = "TransportError"


class BackendRefused(ScamlensError):
    code = "BackendRefused"


# --- evaluation grammar ---

class NoVerdictFound(ScamlensError):
    code = "NoVerdictFound"


class ContradictoryVerdicts(ScamlensError):
    code = "ContradictoryVerdicts"


# --- metrics ---

class EmptyPredictionSet(ScamlensError):
    code = "EmptyPredictionSet"


class EmptyCounts(ScamlensError):
    code = "EmptyCounts"


class EmptyRatings(ScamlensError):
    code = "EmptyRatings"


class IdMismatch(ScamlensError):
    code = "IdMismatch"


# --- review service ---

class UnknownCase(ScamlensError):
    code = "UnknownCase"


class NotInReview(ScamlensError):
    code = "NotInReview"


class WrongReviewer(ScamlensError):
    code = "WrongReviewer"


class UnknownReason(ScamlensError):
    code = "UnknownReason"
