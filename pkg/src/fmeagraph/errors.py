"""Exception hierarchy.

Every domain error derives from :class:`FmeaError`; the CLI maps those to
exit code 1 and everything argparse rejects to exit code 2.
"""

from __future__ import annotations


class FmeaError(Exception):
    """Base class for domain errors."""


# ontology
class MalformedEntry(FmeaError):
    def __init__(self, line: int, reason: str = ""):
        super().__init__(f"malformed ontology entry at line {line}: {reason}".rstrip(": "))
        self.line = line


class DuplicateId(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"duplicate concept id {concept_id}")
        self.concept_id = concept_id


class DanglingParent(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"parent of {concept_id} does not exist")
        self.concept_id = concept_id


class ClassMismatch(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"{concept_id} has a parent of a different class")
        self.concept_id = concept_id


class CyclicParent(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"parent chain of {concept_id} is cyclic")
        self.concept_id = concept_id


class UnknownParent(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"unknown parent {concept_id}")
        self.concept_id = concept_id


class EmptyLabel(FmeaError):
    def __init__(self):
        super().__init__("label must not be empty")


# ingest
class MissingColumn(FmeaError):
    def __init__(self, name: str):
        super().__init__(f"missing column {name!r}")
        self.name = name


class EmptyMandatoryCell(FmeaError):
    def __init__(self, row: int, column: str):
        super().__init__(f"row {row}: column {column!r} is empty")
        self.row = row
        self.column = column


class EncodingError(FmeaError):
    pass


# extract / llm
class LlmUnavailable(FmeaError):
    pass


class ReplayMiss(LlmUnavailable):
    pass


class SchemaViolation(FmeaError):
    def __init__(self, raw: str, reason: str = ""):
        super().__init__(f"response violates schema ({reason}): {raw!r}")
        self.raw = raw


class DuplicateSlots(FmeaError):
    pass


class IdNotInCandidates(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"{concept_id} is not among the candidates")
        self.concept_id = concept_id


class ParentNotInCandidates(IdNotInCandidates):
    pass


class NewForbidden(FmeaError):
    pass


# kg
class RowMismatch(FmeaError):
    pass


class UnknownConcept(FmeaError):
    def __init__(self, concept_id: str):
        super().__init__(f"unknown concept {concept_id}")
        self.concept_id = concept_id


class MalformedGraphFile(FmeaError):
    def __init__(self, line: int, reason: str = ""):
        super().__init__(f"malformed graph file at line {line}: {reason}".rstrip(": "))
        self.line = line


# features
class ProviderUnavailable(FmeaError):
    pass


class EmptyText(FmeaError):
    def __init__(self, index: int):
        super().__init__(f"text at index {index} is empty")
        self.index = index


class DegenerateInput(FmeaError):
    pass


class DimensionMismatch(FmeaError):
    pass


# model
class ShapeMismatch(FmeaError):
    pass


class LengthMismatch(FmeaError):
    pass


class NonFiniteLoss(FmeaError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class NoTrainableTriples(FmeaError):
    pass


class MalformedCheckpoint(FmeaError):
    pass


# infer
class FunctionNotFound(FmeaError):
    def __init__(self, line: str, function: object):
        super().__init__(f"function {function!r} not found on line {line!r}")
        self.line = line
        self.function = function


class NoEntitiesExtracted(FmeaError):
    pass


class AlignmentMismatch(FmeaError):
    pass


# eval / config
class EmptyTruth(FmeaError):
    pass


class InfeasibleSpec(FmeaError):
    pass


class ConfigError(FmeaError):
    pass
