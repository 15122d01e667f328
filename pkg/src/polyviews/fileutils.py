"""Utils for writing and reading pipeline artifacts."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import time
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from tempfile import NamedTemporaryFile
from types import TracebackType
from typing import Any

import numpy as np

from .errors import (
    ArtifactDeserializationError,
    FileAccessError,
    MissingUpstreamArtifactError,
)

PathOrSimilar = str | os.PathLike[str]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JsonSerializationSettings:
    indent: int = 4
    sort_keys: bool = True
    ensure_ascii: bool = False
    encoding: str = "utf-8"


DEFAULT_SERIALIZATION_SETTINGS = JsonSerializationSettings()
"""Default JsonSerializationSettings used for every JSON artifact
with indent=4, sort_keys=True, ensure_ascii=False"""


def abs_filename(file: PathOrSimilar) -> Path:
    """
    Return the absolute path of a file as :class:`pathlib.Path`.

    :param file: File to get the absolute path of
    :return: Absolute Path of file
    """
    return Path(file).expanduser().resolve()


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy scalars and arrays (possibly nested in dicts, lists,
    tuples or dataclass ``to_dict`` results) to plain python objects.
    """
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    return value


def _atomic_write_text(path: Path, text: str, encoding: str = "utf-8") -> None:
    """
    Write text to a path atomically by writing to a temp file and then replacing.
    Ensures the directory exists.
    Uses os.replace for atomicity so readers never see a partial write.

    :param path: Path to write to
    :param text: Text content to write to the file
    :param encoding: Encoding to use
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with NamedTemporaryFile(
            "w",
            encoding=encoding,
            dir=path.parent,
            delete=False,
            suffix=".tmp",
            newline="",
        ) as tf:
            tf.write(text)
            temp_name = tf.name
        os.replace(temp_name, path)
    except Exception as e:
        raise FileAccessError(
            f"Could not atomically write data to file '{path}'.\nError: {e}"
        ) from e


def dumps_json(
    data: Any, settings: JsonSerializationSettings | None = None
) -> str:
    settings = settings or DEFAULT_SERIALIZATION_SETTINGS
    return (
        json.dumps(
            to_jsonable(data),
            indent=settings.indent,
            sort_keys=settings.sort_keys,
            ensure_ascii=settings.ensure_ascii,
        )
        + "\n"
    )


def write_json(
    path: PathOrSimilar,
    data: Any,
    settings: JsonSerializationSettings | None = None,
) -> Path:
    """
    Serialize data and write it atomically.

    :param path: destination
    :param data: JSON-compatible data, numpy values allowed
    :param settings: serialization settings (``None`` for the defaults)
    :raises ~polyviews.errors.FileAccessError: if the file cannot be written
    :return: absolute path written
    """
    settings = settings or DEFAULT_SERIALIZATION_SETTINGS
    target = abs_filename(path)
    _atomic_write_text(target, dumps_json(data, settings), settings.encoding)
    return target


def read_json(path: PathOrSimilar, encoding: str = "utf-8") -> Any:
    """
    Read a JSON artifact.

    :raises ~polyviews.errors.MissingUpstreamArtifactError:
        if the file does not exist
    :raises ~polyviews.errors.FileAccessError: if it cannot be read
    :raises ~polyviews.errors.ArtifactDeserializationError:
        if it is not valid JSON
    """
    target = abs_filename(path)
    if not target.exists():
        raise MissingUpstreamArtifactError(f"Artifact '{target}' does not exist.")
    try:
        with target.open("r", encoding=encoding) as file:
            return json.load(file)
    except json.JSONDecodeError as e:
        raise ArtifactDeserializationError(
            f"Cannot read json from file '{target}': {e}"
        ) from e
    except (PermissionError, OSError) as e:
        raise FileAccessError(f"Cannot read file '{target}': {e}") from e


def write_csv(
    path: PathOrSimilar,
    header: Sequence[str] | None,
    rows: Iterable[Sequence[Any]],
    encoding: str = "utf-8",
) -> Path:
    """
    Write rows as CSV atomically; floats keep full ``repr`` precision.
    A ``None`` header writes data rows only.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for row in rows:
        writer.writerow([to_jsonable(v) for v in row])
    target = abs_filename(path)
    _atomic_write_text(target, buffer.getvalue(), encoding)
    return target


def read_csv(path: PathOrSimilar, encoding: str = "utf-8") -> list[list[str]]:
    """
    Read a CSV artifact (header included) as rows of strings.

    :raises ~polyviews.errors.MissingUpstreamArtifactError:
        if the file does not exist
    :raises ~polyviews.errors.FileAccessError: if it cannot be read
    """
    target = abs_filename(path)
    if not target.exists():
        raise MissingUpstreamArtifactError(f"Artifact '{target}' does not exist.")
    try:
        with target.open("r", encoding=encoding, newline="") as file:
            return [row for row in csv.reader(file) if row]
    except (PermissionError, OSError) as e:
        raise FileAccessError(f"Cannot read file '{target}': {e}") from e


def file_digest(path: PathOrSimilar) -> str:
    """SHA-256 hex digest of a file's bytes."""
    target = abs_filename(path)
    try:
        return hashlib.sha256(target.read_bytes()).hexdigest()
    except (PermissionError, OSError) as e:
        raise FileAccessError(f"Cannot read file '{target}': {e}") from e


class Manifest:
    """
    The run manifest of an output directory.

    Used as a context manager: a clean exit marks the run ``complete``,
    an exception marks it ``partial`` together with the error text.
    The manifest is saved in both cases.
    """

    FILENAME = "manifest.json"

    __path: Path
    data: dict[str, Any]
    """Python representation of the manifest."""
    settings: JsonSerializationSettings

    def __init__(
        self,
        directory: PathOrSimilar,
        *,
        settings: JsonSerializationSettings | None = None,
        fresh: bool = False,
    ) -> None:
        """
        Load the manifest of ``directory`` or start an empty one.

        :param directory: output directory holding the manifest
        :param settings: serialization settings
        :param fresh: ignore any manifest already on disk
        """
        self.__path = abs_filename(directory) / self.FILENAME
        self.settings = settings or DEFAULT_SERIALIZATION_SETTINGS
        self._started: dict[str, float] = {}
        if not fresh and self.__path.exists():
            self.reload()
        else:
            self.data = {"artifacts": {}, "timings": {}, "stages": []}

    @property
    def path(self) -> Path:
        return self.__path

    @property
    def directory(self) -> Path:
        return self.__path.parent

    def reload(self) -> None:
        """Reload from disk. A corrupt manifest is replaced by an empty one."""
        try:
            loaded = read_json(self.__path, self.settings.encoding)
        except ArtifactDeserializationError as e:
            logger.warning(
                "Cannot read manifest '%s'. Starting a new one!\nDecoding error: %s",
                self.__path,
                e,
            )
            loaded = {}
        self.data = {"artifacts": {}, "timings": {}, "stages": []}
        if isinstance(loaded, dict):
            self.data.update(loaded)

    def record_artifact(self, path: PathOrSimilar) -> None:
        """Store the digest of an artifact under its path relative to the run."""
        target = abs_filename(path)
        key = target.relative_to(self.directory).as_posix()
        self.data["artifacts"][key] = file_digest(target)

    def discard(self, relative: str) -> None:
        """
        Delete an artifact file or directory and drop its digests.

        Missing paths are ignored.
        """
        target = self.directory / relative
        try:
            if target.is_dir():
                shutil.rmtree(target)
            else:
                target.unlink(missing_ok=True)
        except OSError as e:
            raise FileAccessError(f"Cannot delete '{target}': {e}") from e
        prefix = f"{relative.rstrip('/')}/"
        artifacts = self.data["artifacts"]
        for key in [k for k in artifacts if k == relative or k.startswith(prefix)]:
            del artifacts[key]

    def forget_stage(self, name: str) -> None:
        """Mark a stage as not run."""
        self.data["timings"].pop(name, None)
        if name in self.data["stages"]:
            self.data["stages"].remove(name)

    def start_stage(self, name: str) -> None:
        self._started[name] = time.perf_counter()

    def finish_stage(self, name: str) -> None:
        started = self._started.pop(name, None)
        if started is not None:
            self.data["timings"][name] = time.perf_counter() - started
        if name not in self.data["stages"]:
            self.data["stages"].append(name)

    def require(self, relative: str) -> Path:
        """
        Return the path of an upstream artifact.

        :raises ~polyviews.errors.MissingUpstreamArtifactError:
            if it was never written
        """
        target = self.directory / relative
        if not target.exists():
            raise MissingUpstreamArtifactError(
                f"Artifact '{relative}' is missing in '{self.directory}'; "
                "run the stage producing it first."
            )
        return target

    def save(self) -> None:
        write_json(self.__path, self.data, self.settings)

    def __enter__(self) -> Manifest:
        self.data.pop("error", None)
        self.data["status"] = "running"
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        """
        Exit the context manager, flag the run and save.

        :param exc_type: exception type
        :param exc: exception instance
        :param tb: traceback
        """
        if exc_type is None:
            self.data["status"] = "complete"
        else:
            self.data["status"] = "partial"
            self.data["error"] = f"{exc_type.__name__}: {exc}"
        self.save()
