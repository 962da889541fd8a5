"""
실행 매니페스트 - 산출물을 만드는 모든 명령은 출력 옆에 정확히 하나씩 기록
"""

import pathlib
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

import config as app_config
from tools.utils import write_json


class RunManifest(BaseModel):
    command: str
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    tool_version: str = app_config.SERVER_VERSION
    inputs: List[str] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    started_at: str = Field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: Optional[str] = None
    notes: Dict[str, Any] = Field(default_factory=dict)

    def finish(self, path: pathlib.Path) -> pathlib.Path:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        return write_json(path, self)


def manifest_path(out_dir: pathlib.Path, command: str) -> pathlib.Path:
    return out_dir / f"{command}_manifest.json"
