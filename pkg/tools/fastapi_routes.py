"""
FastAPI 라우트들 - tools.json 정의로부터 POST /<tool> 라우트를 동적 생성
"""

import asyncio
import logging
from typing import Any, Dict

from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import ValidationError

import config
from tools.errors import DataError, UsageError
from tools.utils import create_pydantic_model, load_tools_json, to_jsonable
from tools_registry import TOOL_CATEGORIES, TOOL_HANDLERS

logger = logging.getLogger(__name__)


def _status_for(error: Exception) -> int:
    """사용/설정 오류 400, 데이터 오류 422, 그 외 500"""
    if isinstance(error, (UsageError, ValidationError, PermissionError)):
        return 400
    if isinstance(error, DataError):
        return 422
    return 500


# ==================== 동적 라우트 생성 로직 ====================

def create_dynamic_route(app: FastAPI, tool_data: Dict[str, Any]) -> None:
    """
    단일 도구에 대한 FastAPI 라우트를 동적으로 생성하고 등록

    Args:
        app: FastAPI 애플리케이션 인스턴스
        tool_data: tools.json의 개별 도구 정의 딕셔너리
    """
    tool_name = tool_data['name']
    request_model = create_pydantic_model(tool_name, tool_data['inputSchema'])

    async def dynamic_handler(data: request_model = Body(...)) -> Dict[str, Any]:
        if tool_name not in TOOL_HANDLERS:
            raise HTTPException(status_code=501, detail=f"Tool '{tool_name}' handler not implemented")
        arguments = {k: v for k, v in data.model_dump().items() if v is not None}
        handler_func = TOOL_HANDLERS[tool_name]
        try:
            if asyncio.iscoroutinefunction(handler_func):
                result = await handler_func(arguments)
            else:
                result = handler_func(arguments)
        except Exception as e:
            logger.error("Error executing %s: %s", tool_name, e)
            raise HTTPException(status_code=_status_for(e), detail=f"Error executing {tool_name}: {e}")
        return to_jsonable(result) if isinstance(result, dict) else {"result": str(result)}

    app.add_api_route(
        path=f"/{tool_name}",
        endpoint=dynamic_handler,
        methods=["POST"],
        summary=f"Execute {tool_name}",
        description=tool_data['description'],
        response_model=None,
        tags=[_get_tool_category(tool_name)],
    )
    logger.debug("Dynamic route created: POST /%s", tool_name)


def _get_tool_category(tool_name: str) -> str:
    for category, tools in TOOL_CATEGORIES.items():
        if tool_name in tools:
            return category
    return "tools"


def register_dynamic_routes(app: FastAPI) -> int:
    """tools.json의 모든 도구에 대해 라우트 등록, 성공한 수 반환"""
    tools_data = load_tools_json()
    if not tools_data:
        logger.warning("No tools loaded from tools.json")
        return 0

    success_count = 0
    for tool_data in tools_data:
        try:
            create_dynamic_route(app, tool_data)
            success_count += 1
        except Exception as e:
            logger.error("Failed to create route for %s: %s", tool_data.get('name', 'unknown'), e)
    logger.info("Successfully created %d/%d dynamic routes", success_count, len(tools_data))
    return success_count


def create_fastapi_app() -> FastAPI:
    """FastAPI 앱 생성 및 설정"""
    app = FastAPI(
        title=config.SERVER_NAME,
        version=config.SERVER_VERSION,
        description="Force-sensing tensegrity interaction inference: synthesis, ingest, training and evaluation tools",
    )
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )
    register_routes(app)
    return app


def register_routes(app: FastAPI):
    """모든 라우트를 앱에 등록"""

    @app.get("/")
    async def root():
        tool_names = [tool['name'] for tool in load_tools_json()]
        return {
            "message": config.SERVER_NAME,
            "version": config.SERVER_VERSION,
            "total_tools": len(tool_names),
            "features": tool_names,
            "endpoints": {"docs": "/docs", "health": "/health"},
        }

    @app.get("/health")
    async def health_check():
        try:
            from mcp.server import Server  # noqa: F401
            mcp_available = True
        except ImportError:
            mcp_available = False
        return {
            "status": "healthy",
            "version": config.SERVER_VERSION,
            "mcp_available": mcp_available,
            "allowed_directories_count": len(config.ALLOWED_DIRECTORIES),
            "total_tools": len(load_tools_json()),
        }

    register_dynamic_routes(app)
