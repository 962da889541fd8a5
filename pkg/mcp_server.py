"""
MCP 서버 설정과 도구 정의
"""

import json
import logging
import traceback
from typing import Any, Dict, List, Sequence

import config
from tools.errors import PhriError
from tools.utils import load_tools_json, to_jsonable

logger = logging.getLogger(__name__)

try:
    from mcp.server import NotificationOptions, Server
    from mcp.server.models import InitializationOptions
    import mcp.server.stdio
    import mcp.types as types

    MCP_AVAILABLE = True
except ImportError as e:
    MCP_AVAILABLE = False
    logger.debug("MCP import failed: %s", e)

from tools_registry import TOOL_HANDLERS


async def call_tool_text(name: str, arguments: Dict[str, Any]) -> str:
    """핸들러 실행 결과(또는 오류)를 MCP 텍스트로 변환"""
    if name not in TOOL_HANDLERS:
        return f"Error executing {name}: Unknown tool: {name}"
    try:
        result = await TOOL_HANDLERS[name](arguments or {})
        if isinstance(result, dict):
            return json.dumps(to_jsonable(result), ensure_ascii=False, indent=2)
        return str(result)
    except PhriError as e:
        logger.error("Error executing %s: %s", name, e)
        return f"Error executing {name}: {e}"
    except Exception as e:
        logger.error("Error executing %s: %s\n%s", name, e, traceback.format_exc())
        return f"Error executing {name}: {type(e).__name__}: {e}"


def create_mcp_server():
    """MCP 서버 생성"""
    if not MCP_AVAILABLE:
        return None

    logger.debug("Creating MCP server")
    server = Server(config.SERVER_NAME)

    @server.list_tools()
    async def handle_list_tools() -> List[types.Tool]:
        """MCP 도구 목록 반환"""
        return get_tool_definitions()

    @server.call_tool()
    async def handle_call_tool(
            name: str, arguments: Dict[str, Any]
    ) -> Sequence[types.TextContent | types.ImageContent | types.EmbeddedResource]:
        """MCP 도구 호출 처리"""
        logger.debug("MCP tool called: %s with args: %s", name, arguments)
        return [types.TextContent(type="text", text=await call_tool_text(name, arguments))]

    return server


def get_tool_definitions() -> List["types.Tool"]:
    """JSON 파일에서 도구 정의를 로드하여 types.Tool 객체로 변환"""
    tools_data = load_tools_json()
    if not tools_data:
        logger.warning("No tools loaded from tools.json")
        return []
    return [types.Tool(name=t['name'], description=t['description'], inputSchema=t['inputSchema'])
            for t in tools_data]


async def run_mcp_server():
    """MCP 서버 실행 (stdio)"""
    if not MCP_AVAILABLE:
        logger.error("MCP not available, cannot run MCP server")
        return

    server = create_mcp_server()
    options = InitializationOptions(
        server_name=config.SERVER_NAME,
        server_version=config.SERVER_VERSION,
        capabilities=server.get_capabilities(notification_options=NotificationOptions(),
                                             experimental_capabilities={}),
    )
    logger.debug("Starting MCP server")
    try:
        async with mcp.server.stdio.stdio_server() as (read_stream, write_stream):
            await server.run(read_stream, write_stream, options)
    except Exception as e:
        logger.error("MCP server error: %s\n%s", e, traceback.format_exc())
        raise
