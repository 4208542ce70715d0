"""
Error Hierarchy
===============
Exceptions raised across the ranking pipeline

Every error carries the process exit code the CLI reports for it:

- UsageError         -> 1  (bad command-line usage)
- DataError          -> 2  (malformed or missing inputs)
- ContractViolation  -> 3  (an invariant of some module was violated)
"""


class ErankError(Exception):
    """Base class for all pipeline errors"""

    exit_code = 3

    def __init__(self, message: str, contract: str = None):
        super().__init__(message)
        self.contract = contract

    def __str__(self):
        message = super().__str__()
        if self.contract:
            return f"[{self.contract}] {message}"
        return message


class UsageError(ErankError):
    exit_code = 1


class DataError(ErankError):
    exit_code = 2


class MalformedInputError(DataError):
    """Input file line or record that cannot be parsed"""

    def __init__(self, message: str, path=None, line_no: int = None):
        location = ""
        if path is not None:
            location = f"{path}:{line_no}: " if line_no is not None else f"{path}: "
        elif line_no is not None:
            location = f"line {line_no}: "
        super().__init__(f"{location}{message}", contract="input-format")
        self.path = path
        self.line_no = line_no


class MissingArtifactError(DataError):
    """An upstream artifact is absent; names the subcommand that produces it"""

    def __init__(self, artifact, prerequisite: str):
        super().__init__(
            f"missing artifact {artifact}; run `erank {prerequisite}` first",
            contract="artifact-present",
        )
        self.artifact = artifact
        self.prerequisite = prerequisite


class MissingInputError(DataError):
    """A configured input file does not exist"""

    def __init__(self, key: str, path):
        super().__init__(f"{key} does not exist: {path}", contract="input-present")
        self.path = path


class ContractViolation(ErankError):
    exit_code = 3


class ConfigurationError(ContractViolation):
    def __init__(self, message: str):
        super().__init__(message, contract="configuration")


class UnknownEntityError(ContractViolation, KeyError):
    def __init__(self, entity_id: str, where: str = "index"):
        ContractViolation.__init__(self, f"unknown entity {entity_id!r} in {where}",
                                   contract="entity-exists")
        self.entity_id = entity_id

    def __str__(self):
        return ContractViolation.__str__(self)


class FieldEmptyError(ContractViolation):
    def __init__(self, field: str):
        super().__init__(f"field {field!r} has no tokens in the collection",
                         contract="field-nonempty")
        self.field = field


class ScoreUndefinedError(ContractViolation):
    def __init__(self, message: str = "query has no tokens"):
        super().__init__(message, contract="query-nonempty")


class StoreCorruptError(ContractViolation):
    def __init__(self, message: str):
        super().__init__(message, contract="embedding-store")


class TrainingError(ContractViolation):
    def __init__(self, message: str):
        super().__init__(message, contract="training-data")


class EvaluationError(ContractViolation):
    def __init__(self, message: str):
        super().__init__(message, contract="evaluation")
