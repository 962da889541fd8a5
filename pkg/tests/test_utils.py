import pytest

import config
from tools.utils import normalize_path


def test_normalize_path_without_allow_list(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "ALLOWED_DIRECTORIES", [])
    assert normalize_path(tmp_path / "x" / ".." / "y") == (tmp_path / "y").resolve()


def test_allow_list_matches_whole_components(tmp_path, monkeypatch):
    allowed = tmp_path / "data"
    monkeypatch.setattr(config, "ALLOWED_DIRECTORIES", [str(allowed.resolve())])
    assert normalize_path(allowed / "raw" / "a.csv") == (allowed / "raw" / "a.csv").resolve()
    assert normalize_path(allowed) == allowed.resolve()
    # 같은 접두사를 가진 형제 디렉토리는 거부
    with pytest.raises(PermissionError):
        normalize_path(tmp_path / "data-other" / "a.csv")
    with pytest.raises(PermissionError):
        normalize_path(allowed / ".." / "secrets")
