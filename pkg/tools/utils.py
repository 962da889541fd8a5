"""
공통 유틸리티 함수들
경로 정규화, 파일 인코딩 감지, 로깅, 시드 파생, JSON 입출력 등
"""

import json
import logging
import os
import pathlib
import sys
from typing import Any, Dict, List, Optional, Sequence, Type, Union

import numpy as np
from pydantic import BaseModel, Field, create_model

import config
from tools.errors import MissingInputError, UsageError

logger = logging.getLogger(__name__)

try:
    import chardet
except ImportError:
    chardet = None

LOG_FORMAT = "[%(levelname)s] %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """stderr 로깅 설정 - stdout은 명령 결과와 MCP 전송용으로 비워 둠"""
    level_name = (level or os.environ.get(config.LOG_LEVEL_ENV_VAR, "INFO")).upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(getattr(logging, level_name, logging.INFO))
    # matplotlib 폰트 검색 로그는 너무 많음
    logging.getLogger("matplotlib").setLevel(logging.WARNING)


def normalize_path(requested_path: Union[str, pathlib.Path]) -> pathlib.Path:
    """경로 정규화 및 권한 확인 (허용 목록이 비어 있으면 모든 경로 허용)"""
    requested = pathlib.Path(os.path.expanduser(str(requested_path))).resolve()

    if os.name == 'nt' and len(str(requested)) > 260:
        raise UsageError(f"Path too long for Windows: {len(str(requested))} characters")

    if not config.ALLOWED_DIRECTORIES:
        return requested

    # 문자열 접두사가 아닌 경로 구성요소 단위 비교 (/data 는 /data-other 를 허용하지 않음)
    for allowed in config.ALLOWED_DIRECTORIES:
        if requested.is_relative_to(pathlib.Path(allowed).resolve()):
            return requested

    logger.debug("Path rejected: %s", requested)
    raise PermissionError(f"Access denied: {requested} not in allowed directories")


def detect_file_encoding(file_path: pathlib.Path) -> str:
    """CSV 인코딩 감지 - 확신이 낮거나 ascii면 utf-8"""
    if not chardet:
        return "utf-8"
    try:
        with file_path.open("rb") as f:
            sample = f.read(8192)
    except OSError:
        return "utf-8"
    if not sample:
        return "utf-8"

    detected = chardet.detect(sample)
    encoding = (detected.get("encoding") or "utf-8").lower()
    # 숫자뿐인 CSV는 ascii로 감지됨 - utf-8의 부분집합
    if encoding == "ascii" or detected.get("confidence", 0) < 0.7:
        return "utf-8"
    return encoding


# ==================== 시드 / 설정 ====================

def derive_seed(*keys: int) -> int:
    """(seed, cell, repeat, fold, ...) 키로부터 결정적 하위 시드 생성"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, dtype=np.uint32)[0])


def resolve_seed(flag_seed: Optional[int], config_seed: Optional[int]) -> int:
    """플래그 > PHRI_SEED > 설정 파일 > 기본값"""
    if flag_seed is not None:
        return int(flag_seed)
    env_seed = os.environ.get(config.SEED_ENV_VAR)
    if env_seed:
        try:
            return int(env_seed)
        except ValueError:
            raise UsageError(f"{config.SEED_ENV_VAR} must be an integer, got {env_seed!r}")
    if config_seed is not None:
        return int(config_seed)
    return config.DEFAULT_SEED


def load_config_file(path: Optional[Union[str, pathlib.Path]]) -> Dict[str, Any]:
    """JSON 설정 파일 로드 (경로가 없으면 빈 설정)"""
    if not path:
        return {}
    config_path = normalize_path(path)
    if not config_path.is_file():
        raise UsageError(f"Config file not found: {config_path}")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise UsageError(f"Invalid JSON in config {config_path}: {e}")
    if not isinstance(data, dict):
        raise UsageError(f"Config {config_path} must hold a JSON object")
    return data


# ==================== JSON ====================

def to_jsonable(value: Any) -> Any:
    """numpy 값을 포함한 구조를 JSON 직렬화 가능한 형태로 변환"""
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump(mode="json"))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, pathlib.Path):
        return str(value)
    return value


def write_json(path: pathlib.Path, payload: Any) -> pathlib.Path:
    """결정적 JSON 쓰기 (정렬된 키, LF, UTF-8)"""
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(payload), ensure_ascii=False, indent=2, sort_keys=True) + "\n"
    with path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return path


def read_json(path: pathlib.Path) -> Any:
    if not path.is_file():
        raise MissingInputError(f"File not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


# ==================== 도구 정의 (tools.json) ====================

TOOLS_JSON_PATH = pathlib.Path(__file__).resolve().parent.parent / "tools.json"

_SCHEMA_TYPES = {"string": str, "integer": int, "number": float, "boolean": bool, "object": Dict[str, Any]}


def load_tools_json() -> List[Dict[str, Any]]:
    """
    tools.json 파일에서 도구 정의를 로드하여 딕셔너리 리스트로 반환
    MCP 도구 목록과 FastAPI 동적 라우트가 같은 정의를 공유
    """
    try:
        tools_data = json.loads(TOOLS_JSON_PATH.read_text(encoding="utf-8"))
    except FileNotFoundError:
        logger.error("tools.json file not found at %s", TOOLS_JSON_PATH)
        return []
    except json.JSONDecodeError as e:
        logger.error("Invalid JSON in tools.json: %s", e)
        return []
    logger.debug("Loaded %d tools from tools.json", len(tools_data))
    return tools_data


def create_pydantic_model(tool_name: str, input_schema: Dict[str, Any]) -> Type[BaseModel]:
    """
    tools.json의 inputSchema로 요청 모델 생성
    필수 필드는 필수로, 나머지는 schema default 또는 None (None은 핸들러 호출 전에 제거)
    """
    required = set(input_schema.get("required", []))
    fields = {}
    for name, schema in input_schema.get("properties", {}).items():
        field_type = _python_type(schema)
        description = schema.get("description", "")
        if name in required:
            fields[name] = (field_type, Field(..., description=description))
        elif schema.get("default") is not None:
            fields[name] = (field_type, Field(schema["default"], description=description))
        else:
            fields[name] = (Optional[field_type], Field(None, description=description))

    model_name = "".join(part.title() for part in tool_name.split("_")) + "Request"
    return create_model(model_name, **fields)


def _python_type(schema: Dict[str, Any]) -> Any:
    schema_type = schema.get("type", "string")
    if schema_type == "array":
        return List[_python_type(schema.get("items", {}))]
    return _SCHEMA_TYPES.get(schema_type, Any)


def as_int_list(value: Any, name: str) -> Optional[List[int]]:
    """'10,20,30' / [10, 20] / 60 형태 인자를 정수 리스트로"""
    if value is None:
        return None
    if isinstance(value, (int, np.integer)):
        return [int(value)]
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    try:
        return [int(v) for v in value]
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be a list of integers, got {value!r}")


def as_str_list(value: Any, allowed: Sequence[str], name: str) -> Optional[List[str]]:
    if value is None:
        return None
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    items = [str(v) for v in value]
    unknown = [v for v in items if v not in allowed]
    if unknown:
        raise UsageError(f"Unknown {name}: {', '.join(unknown)} (expected one of {', '.join(allowed)})")
    return items
