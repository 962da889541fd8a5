#!/usr/bin/env python3
"""
진입점: 파이프라인 하위 명령(synth / ingest / train / classify / grid / report / structure)
+ 서버 모드 serve (FastAPI, HTTP REST) / mcp (JSON-RPC over stdio)

종료 코드: 0 성공, 1 사용법/설정 오류, 2 데이터 오류, 3 내부 오류
"""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

import config
from tools.errors import PhriError
from tools.utils import setup_logging, to_jsonable

logger = logging.getLogger("main")


def _enable_uvloop() -> None:
    """uvloop 적용 (Linux/macOS에서만)"""
    if sys.platform == "win32":
        logger.debug("uvloop not available on Windows, using default asyncio")
        return
    try:
        import uvloop

        asyncio.set_event_loop_policy(uvloop.EventLoopPolicy())
        logger.debug("uvloop enabled for better performance")
    except ImportError:
        logger.debug("uvloop not installed, using default asyncio")


def run_fastapi_server(host: str, port: int) -> None:
    """FastAPI 서버 실행"""
    import uvicorn

    from tools.fastapi_routes import create_fastapi_app

    app = create_fastapi_app()
    loop_config = {}
    if sys.platform != "win32":
        try:
            import uvloop  # noqa: F401
            loop_config["loop"] = "uvloop"
        except ImportError:
            pass
    logger.info("Starting FastAPI server on http://%s:%d", host, port)
    uvicorn.run(app, host=host, port=port, log_level="info", **loop_config)


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help=f"seed (overrides {config.SEED_ENV_VAR} and the config file)")
    parser.add_argument("--config", help="JSON config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensegrity-phri", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", help=f"DEBUG/INFO/WARNING/ERROR (default from {config.LOG_LEVEL_ENV_VAR})")
    parser.add_argument("--version", action="version", version=config.SERVER_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize labeled recordings")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.add_argument("--total", type=int)
    p.add_argument("--ratios", choices=["table1", "reference", "equal"])
    p.add_argument("--counts", help="null,drop,squeeze,handle")
    p.add_argument("--n-jobs", dest="n_jobs", type=int)

    p = sub.add_parser("ingest", help="validate CSV recordings into a bundle")
    p.add_argument("dir")
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--lenient", action="store_true", default=None)
    p.add_argument("--sample-rate", dest="sample_rate_hz", type=float)

    p = sub.add_parser("train", help="fit one model and save it as JSON")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.add_argument("--window", type=int)
    p.add_argument("--features", choices=["raw", "abstract"])
    p.add_argument("--algo", dest="algorithm", choices=["knn", "rf"])
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--no-smote", dest="smote", action="store_false", default=None)
    p.add_argument("--minmax", action="store_true", default=None)

    p = sub.add_parser("classify", help="label recording windows with a saved model")
    p.add_argument("model")
    p.add_argument("input")
    p.add_argument("--out", required=True)

    p = sub.add_parser("grid", help="run the experiment grid")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    _add_seed(p)
    p.add_argument("--windows", help="comma-separated window sizes")
    p.add_argument("--features", help="comma-separated: raw,abstract")
    p.add_argument("--algo", dest="algorithms", help="comma-separated: knn,rf")
    p.add_argument("--folds", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--smote", choices=["fold", "before_split", "off"])
    p.add_argument("--smote-k", dest="smote_k", type=int)
    p.add_argument("--ungrouped", action="store_true", default=None)
    p.add_argument("--minmax", action="store_true", default=None)
    p.add_argument("--trees", type=int)
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)

    p = sub.add_parser("report", help="render report.md from grid outputs")
    p.add_argument("out")

    p = sub.add_parser("structure", help="export the structure/equilibrium document")
    p.add_argument("--out", required=True)
    p.add_argument("--preload", dest="preload_N", type=float)
    p.add_argument("--diameter", dest="diameter_m", type=float)

    p = sub.add_parser("serve", help="run the FastAPI server")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)

    sub.add_parser("mcp", help="run the MCP server over stdio")
    return parser


def _arguments(namespace: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "log_level"}
    return {k: v for k, v in vars(namespace).items() if k not in skip and v is not None}


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, PhriError):
        return error.exit_code
    # 쓸 수 없는 경로도 사용법 오류로 취급
    if isinstance(error, (ValidationError, OSError)):
        return 1
    return 3


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)

    if args.command == "serve":
        _enable_uvloop()
        run_fastapi_server(args.host, args.port)
        return 0
    if args.command == "mcp":
        from mcp_server import MCP_AVAILABLE, run_mcp_server

        if not MCP_AVAILABLE:
            logger.error("MCP not available, cannot run MCP server")
            return 1
        _enable_uvloop()
        asyncio.run(run_mcp_server())
        return 0

    from tools_registry import TOOL_HANDLERS

    try:
        result = asyncio.run(TOOL_HANDLERS[args.command](_arguments(args)))
    except Exception as e:
        code = exit_code_for(e)
        if code == 3:
            logger.exception("Internal error in %s", args.command)
        else:
            logger.error("%s", e)
        return code

    print(json.dumps(to_jsonable(result), ensure_ascii=False, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
