"""Exception hierarchy shared by every module."""


class CMGError(Exception):
    """Base class for all controlled-molecule-generator errors."""


class DataError(CMGError):
    """Errors caused by bad input data; the CLI exits with status 1."""


class ConfigError(CMGError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# SMILES / chemistry

class SmilesError(DataError):
    pass


class UnknownCharacter(SmilesError):
    def __init__(self, char: str, position: int):
        self.char = char
        self.position = position
        super().__init__(f"unknown character {char!r} at position {position}")


class TooLong(DataError):
    def __init__(self, length: int, limit: int):
        self.length = length
        self.limit = limit
        super().__init__(f"sequence length {length} exceeds maximum {limit}")


class MalformedSequence(DataError):
    pass


class SmilesSyntaxError(SmilesError):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (position {position})"
        super().__init__(message)


class UnclosedRing(SmilesError):
    def __init__(self, labels):
        self.labels = sorted(labels)
        super().__init__(f"unclosed ring closure(s): {', '.join(map(str, self.labels))}")


class BadBracketAtom(SmilesError):
    def __init__(self, content: str, position: int):
        self.content = content
        self.position = position
        super().__init__(f"bad bracket atom [{content}] at position {position}")


class EmptyGraph(DataError):
    pass


class WidthMismatch(DataError):
    def __init__(self, a: int, b: int):
        super().__init__(f"fingerprint widths differ: {a} vs {b}")


# files / properties

class ParseError(DataError):
    def __init__(self, message: str, line: int, path=None):
        self.line = line
        self.path = path
        where = f"{path}:{line}" if path is not None else f"line {line}"
        super().__init__(f"{where}: {message}")


class RangeError(DataError):
    pass


class UnfittedScaler(CMGError):
    pass


class MissingProperties(DataError):
    pass


# tensors / networks

class ShapeMismatch(CMGError):
    def __init__(self, op: str, *shapes):
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NonScalarLoss(CMGError):
    pass


class NonFiniteError(CMGError):
    pass


class EmptySequence(DataError):
    pass


class CheckpointError(DataError):
    pass


# training / pipeline

class EmptyCorpus(DataError):
    pass


class DegenerateLabels(DataError):
    pass


class VocabMismatch(CMGError):
    pass


class InsufficientNegatives(DataError):
    pass


class TooFewRows(DataError):
    pass


# decoding

class NoCompleteCandidate(CMGError):
    pass


class EmptyCandidates(CMGError):
    pass


class DegenerateSimilarityWarning(UserWarning):
    """Both fingerprints are empty; similarity reported as 0."""
