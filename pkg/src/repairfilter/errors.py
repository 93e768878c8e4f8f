"""Exception hierarchy. The CLI maps each family to an exit code."""

from __future__ import annotations


class RepairFilterError(Exception):
    exit_code = 2


class ConfigError(RepairFilterError):
    """Invalid configuration; carries every problem found, not just the first."""

    exit_code = 1

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors) if self.errors else "invalid configuration")


class DataError(RepairFilterError, ValueError):
    exit_code = 2


class LineCountMismatch(DataError):
    def __init__(self, left: str, left_count: int, right: str, right_count: int):
        self.counts = (left_count, right_count)
        super().__init__(f"line count mismatch: {left} has {left_count} lines, {right} has {right_count}")


class EncodingError(DataError):
    def __init__(self, path: str, line: int, reason: str = "invalid UTF-8"):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class MissingId(DataError):
    def __init__(self, pair_id: int):
        self.pair_id = pair_id
        super().__init__(f"missing id {pair_id}")


class DuplicateId(DataError):
    def __init__(self, pair_id: int):
        self.pair_id = pair_id
        super().__init__(f"duplicate id {pair_id}")


class NonFiniteScore(DataError):
    def __init__(self, line: int, value: str = ""):
        self.line = line
        super().__init__(f"non-finite or unparsable score at line {line}: {value!r}")


class MissingScore(MissingId):
    def __init__(self, pair_id: int):
        super().__init__(pair_id)
        self.args = (f"no score for pair {pair_id}",)


class MissingEmbedding(MissingId):
    def __init__(self, pair_id: int):
        super().__init__(pair_id)
        self.args = (f"no embedding for pair {pair_id}",)


class DimensionMismatch(DataError):
    pass


class ZeroVector(DataError):
    pass


class EmptyText(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class AlignmentFormatError(DataError):
    pass


class ServiceError(RepairFilterError):
    exit_code = 3


class ServiceUnavailable(ServiceError):
    pass


class ProtocolError(ServiceError):
    pass


class IncompleteResponse(ServiceError):
    def __init__(self, missing: list[int]):
        self.missing = missing
        shown = ", ".join(map(str, missing[:10]))
        super().__init__(f"scorer reply is missing {len(missing)} id(s): {shown}")
