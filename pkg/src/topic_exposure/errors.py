"""Exception hierarchy. Each family maps to one CLI exit code."""


class TopicExposureError(Exception):
    exit_code = 1


class ConfigError(TopicExposureError, ValueError):
    exit_code = 2


class DataError(TopicExposureError, ValueError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, path, line_no, msg):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.path = path
        self.line_no = line_no


class ValidationError(DataError):
    pass


class DuplicateIdError(ValidationError):
    pass


class DanglingReferenceError(DataError):
    pass


class VocabularyTooSmallError(DataError):
    def __init__(self, requested, achievable):
        super().__init__(
            f"requested {requested} topics but the corpus only has "
            f"{achievable} distinct tokens"
        )
        self.requested = requested
        self.achievable = achievable


class ExcludedUserError(DataError):
    def __init__(self, user_ids):
        ids = list(user_ids)
        shown = ", ".join(ids[:10]) + (" ..." if len(ids) > 10 else "")
        super().__init__(f"{len(ids)} user(s) have no tweets: {shown}")
        self.user_ids = ids


class ShapeError(DataError):
    pass


class NumericError(TopicExposureError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericError):
    pass


class ElboError(NumericError):
    pass
