import json
import logging
import multiprocessing as mp
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from polyviews.errors import (
    ArtifactDeserializationError,
    FileAccessError,
    MissingUpstreamArtifactError,
)
from polyviews.fileutils import (
    JsonSerializationSettings,
    Manifest,
    file_digest,
    read_csv,
    read_json,
    write_csv,
    write_json,
)


def write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _writer(path: str, payloads: list[dict], delay: float):
    for p in payloads:
        write_json(path, p)
        time.sleep(delay)


def test_concurrent_writes_no_partial_reads(tmp_path: Path):
    path = str(tmp_path / "shared.json")
    p1 = mp.Process(target=_writer, args=(path, [{"w": 1, "i": i} for i in range(5)], 0.01))
    p2 = mp.Process(target=_writer, args=(path, [{"w": 2, "i": i} for i in range(5)], 0.01))
    p1.start()
    p2.start()

    start = time.time()
    while time.time() - start < 1:
        if Path(path).exists():
            # a partial write would fail to decode
            read_json(path)
        time.sleep(0.005)

    p1.join()
    p2.join()
    assert p1.exitcode == 0
    assert p2.exitcode == 0
    assert not list(tmp_path.glob("*.tmp"))


def test_write_json_settings_and_numpy(tmp_path):
    path = write_json(
        tmp_path / "sub" / "data.json",
        {"b": np.float64(0.5), "a": np.arange(3), "ü": np.int64(2)},
    )
    text = path.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"')
    assert '    "a"' in text
    assert "ü" in text
    assert read_json(path) == {"a": [0, 1, 2], "b": 0.5, "ü": 2}

    compact = write_json(
        tmp_path / "compact.json", {"b": 1, "a": 2}, JsonSerializationSettings(indent=0, sort_keys=False)
    )
    assert json.loads(compact.read_text()) == {"b": 1, "a": 2}
    assert compact.read_text().index('"b"') < compact.read_text().index('"a"')


def test_read_json_errors(tmp_path):
    with pytest.raises(MissingUpstreamArtifactError):
        read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    write_text(bad, "{ invalid json")
    with pytest.raises(ArtifactDeserializationError):
        read_json(bad)


@pytest.mark.skipif(
    sys.platform.startswith("win") or (hasattr(os, "geteuid") and os.geteuid() == 0),
    reason="POSIX permissions, not enforced for root",
)
def test_read_json_permission_error(tmp_path):
    path = tmp_path / "locked.json"
    write_text(path, "{}")
    path.chmod(0)
    try:
        with pytest.raises(FileAccessError):
            read_json(path)
    finally:
        path.chmod(0o600)


def test_csv_keeps_float_precision(tmp_path):
    value = 0.1 + 0.2
    path = write_csv(tmp_path / "rows.csv", ["id", "v"], [["a", value], ["b", np.float64(1 / 3)]])
    rows = read_csv(path)
    assert rows[0] == ["id", "v"]
    assert float(rows[1][1]) == value
    assert float(rows[2][1]) == 1 / 3
    headless = read_csv(write_csv(tmp_path / "plain.csv", None, [["x", 1]]))
    assert headless == [["x", "1"]]


def test_manifest_clean_exit(tmp_path):
    artifact = write_json(tmp_path / "fits.json", [1, 2])
    with Manifest(tmp_path) as manifest:
        manifest.start_stage("fit")
        manifest.record_artifact(artifact)
        manifest.finish_stage("fit")
        assert manifest.data["status"] == "running"

    data = read_json(tmp_path / Manifest.FILENAME)
    assert data["status"] == "complete"
    assert data["stages"] == ["fit"]
    assert data["artifacts"] == {"fits.json": file_digest(artifact)}
    assert data["timings"]["fit"] >= 0.0


def test_manifest_partial_on_error(tmp_path):
    with pytest.raises(RuntimeError):
        with Manifest(tmp_path) as manifest:
            manifest.finish_stage("fit")
            raise RuntimeError("boom")
    data = read_json(tmp_path / Manifest.FILENAME)
    assert data["status"] == "partial"
    assert data["error"] == "RuntimeError: boom"

    # the next run clears the error and keeps earlier stages
    with Manifest(tmp_path) as manifest:
        assert manifest.data["stages"] == ["fit"]
    data = read_json(tmp_path / Manifest.FILENAME)
    assert "error" not in data
    assert data["status"] == "complete"


def test_manifest_fresh_ignores_disk(tmp_path):
    with Manifest(tmp_path) as manifest:
        manifest.finish_stage("fit")
    assert Manifest(tmp_path, fresh=True).data["stages"] == []


def test_manifest_recovers_from_corrupt_file(tmp_path, caplog):
    write_text(tmp_path / Manifest.FILENAME, "{ invalid json")
    with caplog.at_level(logging.WARNING, logger="polyviews.fileutils"):
        manifest = Manifest(tmp_path)
    assert manifest.data == {"artifacts": {}, "timings": {}, "stages": []}
    assert "Cannot read manifest" in caplog.text


def test_manifest_require(tmp_path):
    manifest = Manifest(tmp_path)
    with pytest.raises(MissingUpstreamArtifactError):
        manifest.require("fits.json")
    write_json(tmp_path / "fits.json", [])
    assert manifest.require("fits.json") == manifest.directory / "fits.json"


def test_manifest_discard(tmp_path):
    manifest = Manifest(tmp_path)
    kept = write_json(tmp_path / "fits.json", [])
    nested = write_json(tmp_path / "models" / "N2" / "null.json", {})
    manifest.record_artifact(kept)
    manifest.record_artifact(nested)
    manifest.finish_stage("fit")
    manifest.finish_stage("model")

    manifest.discard("models")
    manifest.discard("scores/summary.json")
    manifest.forget_stage("model")
    assert not (tmp_path / "models").exists()
    assert kept.exists()
    assert list(manifest.data["artifacts"]) == ["fits.json"]
    assert manifest.data["stages"] == ["fit"]
    assert "model" not in manifest.data["timings"]
