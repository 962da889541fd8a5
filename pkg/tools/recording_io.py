"""
레코딩 CSV 입출력과 ingest 도구
CSV: 헤더 t_ms,s00..s11 / t_ms 정수 밀리초 / 힘(N) 유효숫자 6자리 / UTF-8 / LF
사이드카 JSON: {"label", "sample_rate_hz", "meta"}
"""

import logging
import pathlib
import re
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

import config
from tools.dataset import N_SENSORS, InteractionClass, Recording, Violation, truncate_recording, validate_recording
from tools.errors import CsvFormatError, MissingInputError, PhriError, UsageError
from tools.manifest import RunManifest, manifest_path
from tools.utils import detect_file_encoding, normalize_path, read_json, write_json

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["t_ms"] + [f"s{i:02d}" for i in range(N_SENSORS)]
BUNDLE_SCHEMA_VERSION = 1
RECORDINGS_DIR_NAME = "recordings"
# --lenient 일 때 허용되는 위반 (나머지는 항상 거부)
LENIENT_RULES = frozenset({"jitter", "monotonic"})

_PARSER_LINE = re.compile(r"line (\d+)")


def recording_paths(rec: Recording, out_dir: pathlib.Path) -> Tuple[pathlib.Path, pathlib.Path]:
    return out_dir / f"{rec.recording_id}.csv", out_dir / f"{rec.recording_id}.json"


def write_recording(rec: Recording, out_dir: pathlib.Path) -> Tuple[pathlib.Path, pathlib.Path]:
    """CSV + 사이드카 JSON 쓰기 (같은 입력이면 바이트 단위로 같은 파일)"""
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = recording_paths(rec, out_dir)

    frame = pd.DataFrame(rec.forces, columns=CSV_COLUMNS[1:])
    frame.insert(0, "t_ms", np.rint(rec.t * 1000.0).astype(np.int64))
    frame.to_csv(csv_path, index=False, float_format="%.6g", lineterminator="\n", encoding="utf-8")

    sidecar = {
        "label": rec.label.slug if rec.label is not None else None,
        "sample_rate_hz": rec.sample_rate_hz,
        "meta": dict(rec.meta),
    }
    write_json(json_path, sidecar)
    return csv_path, json_path


def _parse_error_line(message: str) -> Optional[int]:
    match = _PARSER_LINE.search(message)
    return int(match.group(1)) if match else None


def read_recording(csv_path: Union[str, pathlib.Path], sample_rate_hz: Optional[float] = None,
                   label: Optional[Union[str, InteractionClass]] = None) -> Recording:
    """
    CSV 한 개 읽기 - 형식 오류는 파일/행/열을 담은 CsvFormatError
    사이드카 JSON이 있으면 라벨/샘플레이트/메타를 가져옴 (인자가 우선)
    """
    path = pathlib.Path(csv_path)
    if not path.is_file():
        raise MissingInputError(f"Recording file not found: {path}")
    encoding = detect_file_encoding(path)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding=encoding)
    except pd.errors.EmptyDataError:
        raise CsvFormatError(str(path), "file is empty", line=1)
    except pd.errors.ParserError as e:
        raise CsvFormatError(str(path), f"malformed row: {e}", line=_parse_error_line(str(e)))
    except UnicodeDecodeError as e:
        raise CsvFormatError(str(path), f"cannot decode as {encoding}: {e}")

    columns = [str(c).strip() for c in frame.columns]
    if len(columns) != len(CSV_COLUMNS):
        raise CsvFormatError(str(path), f"expected {len(CSV_COLUMNS)} columns (t_ms + {N_SENSORS} forces), "
                                        f"got {len(columns)}", line=1)
    for position, (found, expected) in enumerate(zip(columns, CSV_COLUMNS), start=1):
        if found != expected:
            raise CsvFormatError(str(path), f"header {found!r} should be {expected!r}", line=1, column=str(position))

    values = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = map(int, np.argwhere(bad)[0])
        raw = frame.iat[row, col]
        raise CsvFormatError(str(path), f"not a number: {raw!r}", line=row + 2, column=CSV_COLUMNS[col])

    t_ms = values["t_ms"].to_numpy(dtype=float)
    fractional = np.flatnonzero(t_ms != np.round(t_ms))
    if fractional.size:
        raise CsvFormatError(str(path), "t_ms must be an integer", line=int(fractional[0]) + 2, column="t_ms")

    sidecar_path = path.with_suffix(".json")
    sidecar: Dict[str, Any] = read_json(sidecar_path) if sidecar_path.is_file() else {}
    label = label if label is not None else sidecar.get("label")
    rate = sample_rate_hz or sidecar.get("sample_rate_hz") or config.DEFAULT_SAMPLE_RATE_HZ

    return Recording(
        t=t_ms / 1000.0,
        forces=values[CSV_COLUMNS[1:]].to_numpy(dtype=float),
        sample_rate_hz=float(rate),
        label=InteractionClass.from_slug(label) if isinstance(label, str) else label,
        meta={str(k): str(v) for k, v in sidecar.get("meta", {}).items()},
        recording_id=path.stem,
    )


def read_labels_file(path: pathlib.Path) -> Dict[str, Dict[str, Any]]:
    """recording_id,label[,start_s,end_s] 형식의 라벨/구간 파일"""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding=detect_file_encoding(path))
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CsvFormatError(str(path), f"malformed labels file: {e}")
    missing = {"recording_id", "label"} - set(frame.columns)
    if missing:
        raise CsvFormatError(str(path), f"labels file lacks columns {sorted(missing)}", line=1)

    entries = {}
    for row_number, row in enumerate(frame.to_dict("records"), start=2):
        entry: Dict[str, Any] = {"label": InteractionClass.from_slug(row["label"])}
        for key in ("start_s", "end_s"):
            if row.get(key, "").strip():
                try:
                    entry[key] = float(row[key])
                except ValueError:
                    raise CsvFormatError(str(path), f"not a number: {row[key]!r}", line=row_number, column=key)
        entries[row["recording_id"].strip()] = entry
    return entries


def _apply_label_entry(rec: Recording, entry: Optional[Dict[str, Any]]) -> Recording:
    if not entry:
        return rec
    rec = rec.replace(label=entry["label"])
    if "start_s" in entry or "end_s" in entry:
        rec = truncate_recording(rec, entry.get("start_s", 0.0), entry.get("end_s", float(rec.t[-1]) + 1.0))
    return rec


def ingest_directory(csv_dir: pathlib.Path, out_dir: pathlib.Path, labels_path: Optional[pathlib.Path] = None,
                     lenient: bool = False, sample_rate_hz: Optional[float] = None) -> Dict[str, Any]:
    """
    디렉터리의 CSV를 검증해 번들로 묶음
    수락된 레코딩은 out_dir/recordings 아래 정규화된 CSV로 복사
    """
    labels = read_labels_file(labels_path) if labels_path else {}
    accepted: List[Dict[str, Any]] = []
    rejected: List[Dict[str, Any]] = []
    recordings_dir = out_dir / RECORDINGS_DIR_NAME

    csv_files = sorted(p for p in csv_dir.glob("*.csv") if labels_path is None or p.resolve() != labels_path.resolve())
    for csv_path in csv_files:
        try:
            rec = _apply_label_entry(read_recording(csv_path, sample_rate_hz), labels.get(csv_path.stem))
        except PhriError as e:
            logger.warning("Rejected %s: %s", csv_path.name, e)
            rejected.append({"file": csv_path.name, "reason": str(e), "violations": []})
            continue

        violations: List[Violation] = validate_recording(rec)
        if rec.label is None:
            violations.append(Violation(0, "label", "recording has no label"))
        blocking = [v for v in violations if not (lenient and v.rule in LENIENT_RULES)]
        if blocking:
            logger.warning("Rejected %s: %d violation(s), first: %s", csv_path.name, len(violations),
                           blocking[0].message)
            rejected.append({"file": csv_path.name, "reason": blocking[0].rule,
                             "violations": [v.as_dict() for v in violations]})
            continue
        if violations:
            logger.warning("Kept %s with %d violation(s) (lenient)", csv_path.name, len(violations))

        written, _ = write_recording(rec, recordings_dir)
        accepted.append({
            "id": rec.recording_id,
            "csv": f"{RECORDINGS_DIR_NAME}/{written.name}",
            "label": rec.label.slug,
            "n_samples": rec.n_samples,
            "sample_rate_hz": rec.sample_rate_hz,
            "violations": [v.as_dict() for v in violations],
        })

    bundle = {
        "schema_version": BUNDLE_SCHEMA_VERSION,
        "source": str(csv_dir),
        "lenient": lenient,
        "recordings": accepted,
        "rejected": rejected,
    }
    write_json(out_dir / config.BUNDLE_INDEX_NAME, bundle)
    return bundle


def load_bundle(path: Union[str, pathlib.Path]) -> List[Recording]:
    """번들 디렉터리(또는 bundle.json 경로)의 레코딩 목록"""
    bundle_path = pathlib.Path(path)
    if bundle_path.is_dir():
        bundle_path = bundle_path / config.BUNDLE_INDEX_NAME
    if not bundle_path.is_file():
        raise MissingInputError(f"Bundle index not found: {bundle_path} (run ingest first)")
    bundle = read_json(bundle_path)
    if bundle.get("schema_version") != BUNDLE_SCHEMA_VERSION:
        raise UsageError(f"Unsupported bundle version: {bundle.get('schema_version')}")
    return [read_recording(bundle_path.parent / entry["csv"]) for entry in bundle.get("recordings", [])]


async def handle_ingest(arguments: Dict[str, Any]) -> Dict[str, Any]:
    """CSV 디렉터리 → 검증된 데이터셋 번들"""
    dir_str = arguments.get("dir", "")
    out_str = arguments.get("out", "")
    if not dir_str or not out_str:
        raise UsageError("dir and out arguments are required")

    csv_dir = normalize_path(dir_str)
    if not csv_dir.is_dir():
        raise MissingInputError(f"Input directory not found: {csv_dir}")
    out_dir = normalize_path(out_str)
    labels_path = normalize_path(arguments["labels"]) if arguments.get("labels") else None
    if labels_path is not None and not labels_path.is_file():
        raise MissingInputError(f"Labels file not found: {labels_path}")
    lenient = bool(arguments.get("lenient", False))
    rate = arguments.get("sample_rate_hz")

    manifest = RunManifest(command="ingest", config={"lenient": lenient, "sample_rate_hz": rate},
                           inputs=[str(csv_dir)] + ([str(labels_path)] if labels_path else []))
    bundle = ingest_directory(csv_dir, out_dir, labels_path, lenient, float(rate) if rate else None)
    manifest.outputs = [config.BUNDLE_INDEX_NAME] + [entry["csv"] for entry in bundle["recordings"]]
    manifest.notes = {"rejected": len(bundle["rejected"])}
    manifest.finish(manifest_path(out_dir, "ingest"))

    logger.info("Ingested %d recordings, rejected %d", len(bundle["recordings"]), len(bundle["rejected"]))
    return {
        "bundle": str(out_dir / config.BUNDLE_INDEX_NAME),
        "accepted": len(bundle["recordings"]),
        "rejected": [entry["file"] for entry in bundle["rejected"]],
    }
