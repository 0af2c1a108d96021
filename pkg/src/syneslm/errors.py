"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures onto
0 ok / 1 usage / 2 data error / 3 runtime-divergence without a lookup table.
"""


class SynesError(Exception):
    exit_code = 3


class DataError(SynesError, ValueError):
    exit_code = 2


class RuntimeFailure(SynesError, RuntimeError):
    exit_code = 3


# tokenizer
class EmptyCorpus(DataError):
    pass


class VocabTooSmall(DataError):
    pass


class IdOutOfRange(DataError, IndexError):
    pass


# quantizer / projector / model shapes
class TooFewPoints(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptySequence(DataError):
    pass


class NonFiniteInput(DataError):
    pass


# vocabulary layout
class DuplicateLanguage(DataError):
    pass


class UnknownLanguage(DataError):
    pass


class MissingModality(DataError):
    pass


class MalformedSequence(DataError):
    pass


# lm core
class MissingVisual(DataError):
    pass


class SeqTooLong(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyMask(DataError):
    pass


class PromptTooLong(DataError):
    pass


class NonFiniteActivation(RuntimeFailure):
    pass


class NonFiniteGradient(RuntimeFailure):
    pass


# trainer
class EmptyDataset(DataError):
    pass


class TaskModalityMismatch(DataError):
    pass


class DivergedLoss(RuntimeFailure):
    def __init__(self, message, step=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


# recovery
class EmptyTranscript(DataError):
    pass


class EmbedderFailure(RuntimeFailure):
    pass


class ClientFailure(RuntimeFailure):
    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


# metrics
class EmptyReference(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


# corpus
class InvalidSpec(DataError):
    pass
