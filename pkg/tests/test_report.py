import asyncio

import pandas as pd
import pytest

from tools.errors import MissingInputError
from tools.evaluation import MetricsReport
from tools.plots import build_sweep_figure, sweep_series, write_sweep_plots
from tools.report import best_cell, best_window_per_algorithm, handle_report, render_report
from tools.utils import write_json

SLUGS = ["null", "drop", "squeeze", "handle"]


def _report(window, mode, algorithm, accuracy, status="ok"):
    if status != "ok":
        return MetricsReport(window_size=window, feature_mode=mode, algorithm=algorithm, status=status,
                             error="ClassTooSmallError: too few")
    per_class = {s: accuracy for s in SLUGS}
    return MetricsReport(window_size=window, feature_mode=mode, algorithm=algorithm, accuracy=accuracy,
                         accuracy_std=0.01, pooled_accuracy=accuracy, auc_ovo=min(1.0, accuracy + 0.05),
                         precision=per_class, recall=per_class, f1=per_class,
                         class_counts={"null": 10, "drop": 5, "squeeze": 7, "handle": 2})


@pytest.fixture
def reports():
    return [
        _report(10, "raw", "knn", 0.60), _report(10, "abstract", "knn", 0.80),
        _report(10, "raw", "rf", 0.70), _report(10, "abstract", "rf", 0.93),
        _report(20, "raw", "knn", 0.65), _report(20, "abstract", "knn", 0.85),
        _report(20, "raw", "rf", 0.72), _report(20, "abstract", "rf", 0.91),
        _report(30, "raw", "rf", None, status="failed"),
    ]


def test_best_cell_and_windows(reports):
    assert best_cell(reports).cell_name == "w010_abstract_rf"
    assert best_window_per_algorithm(reports) == {"knn": 20, "rf": 10}
    assert best_cell([reports[-1]]) is None


def test_sweep_series_skips_failed(reports):
    rows = [r.sweep_row() for r in reports]
    series = sweep_series(rows, "accuracy")
    assert set(series) == {("knn", "raw"), ("knn", "abstract"), ("rf", "raw"), ("rf", "abstract")}
    assert series[("rf", "raw")] == [(10, 0.70), (20, 0.72)]
    figure = build_sweep_figure(rows, "accuracy", "Accuracy")
    assert len(figure.axes[0].lines) == 4


def test_svg_plots_are_reproducible(tmp_path, reports):
    rows = [r.sweep_row() for r in reports]
    first = [p.read_bytes() for p in write_sweep_plots(rows, tmp_path / "a")]
    second = [p.read_bytes() for p in write_sweep_plots(rows, tmp_path / "b")]
    assert first == second
    assert first[0].lstrip().startswith(b"<?xml")


def test_render_report_sections(reports):
    sweep = pd.DataFrame([r.sweep_row() for r in reports])
    text = render_report(reports, sweep)
    assert "`w010_abstract_rf`" in text
    for section in ("## Best cell", "## Window sweep", "## Observation counts", "## Failed cells", "## Plots"):
        assert section in text
    assert "### KNN (window 20)" in text
    assert "| Class | Metric | Raw | Abstract |" in text
    assert "| 10 | 10 | 5 | 7 | 2 |" in text


def _write_grid_outputs(out, reports):
    for r in reports:
        write_json(out / "cells" / f"{r.cell_name}.json", r)
    pd.DataFrame([r.sweep_row() for r in reports]).to_csv(out / "sweep.csv", index=False)


def test_handle_report_is_idempotent(tmp_path, reports):
    _write_grid_outputs(tmp_path, reports)
    result = asyncio.run(handle_report({"out": str(tmp_path)}))
    assert result["best_cell"] == "w010_abstract_rf"
    first = (tmp_path / "report.md").read_bytes()
    asyncio.run(handle_report({"out": str(tmp_path)}))
    assert (tmp_path / "report.md").read_bytes() == first
    assert (tmp_path / "report_manifest.json").exists()


def test_handle_report_missing_inputs(tmp_path):
    with pytest.raises(MissingInputError):
        asyncio.run(handle_report({"out": str(tmp_path)}))
    with pytest.raises(MissingInputError):
        asyncio.run(handle_report({"out": str(tmp_path / "absent")}))
