"""
Исключения конвейера и коды выхода CLI
"""

from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class PipelineError(Exception):
    """Базовая ошибка конвейера"""

    exit_code = EXIT_USAGE

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> 'PipelineError':
        if self.stage is None:
            self.stage = stage
        return self


class UsageError(PipelineError):
    exit_code = EXIT_USAGE


class SchemaError(PipelineError):
    exit_code = EXIT_DATA


class DataError(PipelineError):
    exit_code = EXIT_DATA


class NumericError(PipelineError):
    """Нечисловые значения при обучении/сэмплировании или провал проверки градиентов"""

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, stage: Optional[str] = None, last_good=None, step: Optional[int] = None):
        super().__init__(message, stage)
        self.last_good = last_good
        self.step = step
