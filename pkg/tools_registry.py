"""
모든 도구들을 통합하는 레지스트리
CLI 하위 명령, MCP 도구, FastAPI 라우트가 같은 핸들러를 사용
"""

from tools.evaluation import handle_grid
from tools.recording_io import handle_ingest
from tools.report import handle_report
from tools.statics import handle_structure
from tools.synth import handle_synth
from tools.training import handle_classify, handle_train

# 도구 핸들러 매핑
TOOL_HANDLERS = {
    # 데이터
    "synth": handle_synth,
    "ingest": handle_ingest,

    # 모델
    "train": handle_train,
    "classify": handle_classify,

    # 평가
    "grid": handle_grid,
    "report": handle_report,

    # 구조
    "structure": handle_structure,
}

# 도구 카테고리별 분류
TOOL_CATEGORIES = {
    "data": ["synth", "ingest"],
    "model": ["train", "classify"],
    "evaluation": ["grid", "report"],
    "structure": ["structure"],
}


def get_tools_by_category(category: str):
    """카테고리별 도구 목록 반환"""
    return TOOL_CATEGORIES.get(category, [])


def get_all_tool_names():
    """모든 도구 이름 목록 반환"""
    return list(TOOL_HANDLERS.keys())
