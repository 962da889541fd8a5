"""
그리드 결과 요약 문서 (report.md)
최고 셀, 알고리즘별 최적 윈도우의 클래스별 P/R/F1 표, 윈도우 스윕 표, 관측 개수
"""

import logging
import pathlib
from typing import Any, Dict, List, Optional

import pandas as pd

import config
from tools.dataset import InteractionClass
from tools.errors import MissingInputError, UsageError
from tools.evaluation import MetricsReport
from tools.manifest import RunManifest, manifest_path
from tools.plots import ACCURACY_PLOT_NAME, AUC_PLOT_NAME
from tools.utils import normalize_path, read_json

logger = logging.getLogger(__name__)

_ALGO_TITLES = {"knn": "KNN", "rf": "RF"}
_MODE_TITLES = {"raw": "Raw", "abstract": "Abstract"}


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None or value != value else f"{value:.3f}"


def load_cell_reports(out_dir: pathlib.Path) -> List[MetricsReport]:
    cells_dir = out_dir / config.CELLS_DIR_NAME
    sweep_path = out_dir / config.SWEEP_CSV_NAME
    if not sweep_path.is_file() or not cells_dir.is_dir():
        raise MissingInputError(f"No grid outputs in {out_dir} (expected {config.SWEEP_CSV_NAME} and "
                                f"{config.CELLS_DIR_NAME}/)")
    reports = [MetricsReport(**read_json(path)) for path in sorted(cells_dir.glob("*.json"))]
    if not reports:
        raise MissingInputError(f"No cell reports in {cells_dir}")
    return reports


def best_cell(reports: List[MetricsReport]) -> Optional[MetricsReport]:
    """정확도 최대 셀 (동률이면 정렬 순서상 앞선 셀)"""
    ok = [r for r in reports if r.status == "ok" and r.accuracy is not None]
    return max(ok, key=lambda r: r.accuracy) if ok else None


def best_window_per_algorithm(reports: List[MetricsReport]) -> Dict[str, int]:
    best: Dict[str, MetricsReport] = {}
    for r in reports:
        if r.status != "ok" or r.accuracy is None:
            continue
        if r.algorithm not in best or r.accuracy > best[r.algorithm].accuracy:
            best[r.algorithm] = r
    return {algo: r.window_size for algo, r in sorted(best.items())}


def _class_table(reports: List[MetricsReport], algorithm: str, window: int) -> List[str]:
    """알고리즘 하나의 최적 윈도우에서 Raw / Abstract 특징을 나란히"""
    by_mode = {r.feature_mode: r for r in reports
               if r.algorithm == algorithm and r.window_size == window and r.status == "ok"}
    modes = [m for m in ("raw", "abstract") if m in by_mode]
    header = "| Class | Metric | " + " | ".join(_MODE_TITLES[m] for m in modes) + " |"
    lines = [f"### {_ALGO_TITLES.get(algorithm, algorithm)} (window {window})", "", header,
             "|---|---|" + "---|" * len(modes)]
    for c in InteractionClass:
        for metric in ("precision", "recall", "f1"):
            values = [_fmt(getattr(by_mode[m], metric).get(c.slug)) for m in modes]
            lines.append(f"| {c.slug} | {metric} | " + " | ".join(values) + " |")
    for metric in ("accuracy", "auc_ovo"):
        values = [_fmt(getattr(by_mode[m], metric)) for m in modes]
        lines.append(f"| all | {metric} | " + " | ".join(values) + " |")
    return lines + [""]


def render_report(reports: List[MetricsReport], sweep: pd.DataFrame) -> str:
    lines = ["# Interaction classification grid report", ""]

    best = best_cell(reports)
    lines += ["## Best cell", ""]
    if best is None:
        lines += ["All cells failed.", ""]
    else:
        lines += [
            f"- cell: `{best.cell_name}`",
            f"- window: {best.window_size} samples, features: {best.feature_mode}, algorithm: {best.algorithm}",
            f"- accuracy: {_fmt(best.accuracy)} (std {_fmt(best.accuracy_std)}), "
            f"pooled accuracy: {_fmt(best.pooled_accuracy)}, OvO AUC: {_fmt(best.auc_ovo)}",
            "",
        ]

    lines += ["## Per-class metrics at each algorithm's best window", ""]
    for algorithm, window in best_window_per_algorithm(reports).items():
        lines += _class_table(reports, algorithm, window)

    lines += ["## Window sweep", "", "| Window | Features | Algorithm | Accuracy | OvO AUC | Macro F1 | Status |",
              "|---|---|---|---|---|---|---|"]
    for row in sweep.to_dict("records"):
        lines.append(f"| {row['window_size']} | {row['feature_mode']} | {row['algorithm']} | "
                     f"{_fmt(_num(row.get('accuracy')))} | {_fmt(_num(row.get('auc_ovo')))} | "
                     f"{_fmt(_num(row.get('macro_f1')))} | {row['status']} |")
    lines.append("")

    lines += ["## Observation counts", "", "| Window | " + " | ".join(c.slug for c in InteractionClass) + " |",
              "|---|" + "---|" * len(InteractionClass)]
    counted = {}
    for r in reports:
        if r.class_counts and r.window_size not in counted and r.provenance.get("cv", {}).get("smote_mode") != "before_split":
            counted[r.window_size] = r.class_counts
    for window in sorted(counted):
        lines.append(f"| {window} | " + " | ".join(str(counted[window].get(c.slug, 0)) for c in InteractionClass) + " |")
    lines.append("")

    failed = [r for r in reports if r.status != "ok"]
    if failed:
        lines += ["## Failed cells", ""] + [f"- `{r.cell_name}`: {r.error}" for r in failed] + [""]

    lines += ["## Plots", "", f"- accuracy vs. window: `{ACCURACY_PLOT_NAME}`",
              f"- OvO AUC vs. window: `{AUC_PLOT_NAME}`", ""]
    return "\n".join(lines)


def _num(value: Any) -> Optional[float]:
    if value is None or (isinstance(value, float) and value != value):
        return None
    return float(value)


async def handle_report(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """grid 출력 디렉터리 → report.md (재실행해도 같은 내용)"""
    out_str = arguments.get("out", "")
    if not out_str:
        raise UsageError("out argument is required")
    out_dir = normalize_path(out_str)
    if not out_dir.is_dir():
        raise MissingInputError(f"Output directory not found: {out_dir}")

    reports = load_cell_reports(out_dir)
    sweep = pd.read_csv(out_dir / config.SWEEP_CSV_NAME)
    text = render_report(reports, sweep)

    report_path = out_dir / config.REPORT_NAME
    with report_path.open("w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    RunManifest(command="report", inputs=[config.SWEEP_CSV_NAME, config.CELLS_DIR_NAME],
                outputs=[config.REPORT_NAME]).finish(manifest_path(out_dir, "report"))

    best = best_cell(reports)
    logger.info("Report written to %s", report_path)
    return {"report": str(report_path), "best_cell": best.cell_name if best else None}
