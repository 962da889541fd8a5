"""
서버 및 파이프라인 설정
"""

import os
import pathlib


def normalize_path(path):
    return str(pathlib.Path(os.path.expanduser(path)).resolve())


# 환경 변수 이름
SEED_ENV_VAR = "PHRI_SEED"
ALLOWED_DIRS_ENV_VAR = "PHRI_ALLOWED_DIRS"
LOG_LEVEL_ENV_VAR = "PHRI_LOG_LEVEL"

# 서버 모드(FastAPI/MCP)에서 접근 허용 디렉토리 목록 - 비어 있으면 제한 없음
RAW_ALLOWED_DIRECTORIES = [p for p in os.environ.get(ALLOWED_DIRS_ENV_VAR, "").split(os.pathsep) if p]

ALLOWED_DIRECTORIES = [normalize_path(p) for p in RAW_ALLOWED_DIRECTORIES]

# 서버 설정 (SERVER_VERSION은 매니페스트의 tool version으로도 사용)
SERVER_VERSION = "20261018.1"
SERVER_NAME = "tensegrity-phri"

# 파이프라인 기본값
DEFAULT_SEED = 7
DEFAULT_SAMPLE_RATE_HZ = 60.0
DEFAULT_WINDOWS = tuple(range(10, 101, 10))
DEFAULT_FEATURE_MODES = ("raw", "abstract")
DEFAULT_ALGORITHMS = ("knn", "rf")

# 결과 파일 이름
BUNDLE_INDEX_NAME = "bundle.json"
SWEEP_CSV_NAME = "sweep.csv"
REPORT_NAME = "report.md"
CELLS_DIR_NAME = "cells"
