"""
도구 전반에서 쓰는 예외 계층
main.py는 exit_code로 종료 코드를 결정합니다 (0 성공, 1 사용법/설정, 2 데이터, 3 내부 오류)
"""

from typing import Optional


class PhriError(Exception):
    """모든 도메인 예외의 기반"""
    exit_code = 3


class UsageError(PhriError, ValueError):
    """잘못된 인자 또는 설정"""
    exit_code = 1


class DataError(PhriError, ValueError):
    """입력 데이터가 규칙을 어김"""
    exit_code = 2


class InvalidRangeError(UsageError):
    pass


class KOutOfRangeError(UsageError):
    pass


class EmptyResultError(DataError):
    pass


class UnlabeledRecordingError(DataError):
    pass


class SeriesTooShortError(DataError):
    pass


class NegativeForceError(DataError):
    pass


class NoSelfStressError(DataError):
    pass


class ClassTooSmallError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class InvalidDistributionError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class MissingInputError(DataError):
    pass


class CsvFormatError(DataError):
    """CSV 파싱 오류 - 파일, 라인, 컬럼을 함께 보고"""

    def __init__(self, file: str, message: str, line: Optional[int] = None, column: Optional[str] = None):
        self.file = file
        self.line = line
        self.column = column
        location = file
        if line is not None:
            location += f", line {line}"
        if column is not None:
            location += f", column {column}"
        super().__init__(f"{location}: {message}")
