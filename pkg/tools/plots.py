"""
윈도우 크기별 정확도 / OvO AUC 선 그래프 (SVG)
"""

import logging
import pathlib
from typing import Any, Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

logger = logging.getLogger(__name__)

ACCURACY_PLOT_NAME = "accuracy_vs_window.svg"
AUC_PLOT_NAME = "auc_vs_window.svg"

_SERIES_STYLE = {
    ("knn", "raw"): ("tab:blue", "--", "o"),
    ("knn", "abstract"): ("tab:blue", "-", "s"),
    ("rf", "raw"): ("tab:orange", "--", "o"),
    ("rf", "abstract"): ("tab:orange", "-", "s"),
}
_LABELS = {"knn": "KNN", "rf": "RF", "raw": "Raw", "abstract": "Abstract"}

# 실행마다 같은 SVG 바이트를 만들기 위한 설정
SVG_RC = {"svg.hashsalt": "tensegrity-phri", "svg.fonttype": "none"}


def sweep_series(rows: Sequence[Dict[str, Any]], metric: str) -> Dict[tuple, List[tuple]]:
    """(algorithm, feature_mode) → [(window, value)] - 실패/결측 셀은 제외"""
    series: Dict[tuple, List[tuple]] = {}
    for row in rows:
        value = row.get(metric)
        if row.get("status", "ok") != "ok" or value is None or value != value:
            continue
        series.setdefault((row["algorithm"], row["feature_mode"]), []).append((int(row["window_size"]), float(value)))
    return {key: sorted(points) for key, points in sorted(series.items())}


def build_sweep_figure(rows: Sequence[Dict[str, Any]], metric: str, ylabel: str) -> Figure:
    fig = Figure(figsize=(6.4, 4.0))
    ax = fig.add_subplot(1, 1, 1)
    for (algorithm, mode), points in sweep_series(rows, metric).items():
        color, linestyle, marker = _SERIES_STYLE.get((algorithm, mode), ("black", "-", "x"))
        windows, values = zip(*points)
        ax.plot(windows, values, color=color, linestyle=linestyle, marker=marker,
                label=f"{_LABELS.get(algorithm, algorithm)} / {_LABELS.get(mode, mode)}")
    ax.set_xlabel("Window size (samples)")
    ax.set_ylabel(ylabel)
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    if ax.lines:
        ax.legend(loc="lower right")
    fig.tight_layout()
    return fig


def save_svg(fig: Figure, path: pathlib.Path) -> pathlib.Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(SVG_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("Wrote plot %s", path)
    return path


def write_sweep_plots(rows: Sequence[Dict[str, Any]], out_dir: pathlib.Path) -> List[pathlib.Path]:
    return [
        save_svg(build_sweep_figure(rows, "accuracy", "Accuracy"), out_dir / ACCURACY_PLOT_NAME),
        save_svg(build_sweep_figure(rows, "auc_ovo", "OvO AUC"), out_dir / AUC_PLOT_NAME),
    ]
