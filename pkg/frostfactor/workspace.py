"""
The work directory shared by the pipeline commands.

Each command records a metadata sidecar `<command>.meta.json` listing the
SHA-256 digests of its inputs and outputs together with the digest of the
configuration sections it depends on. A later command checks the sidecars
of its predecessors so that artifacts built from outdated inputs are
detected.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Union

from .errors import MissingArtifactError, StaleArtifactError, WorkdirLockedError

__all__ = ["StageRecord", "Workspace", "file_digest"]

logger = logging.getLogger(__name__)

_CHUNK = 1 << 20


def file_digest(path: Union[str, Path]) -> str:
    """Return the hexadecimal SHA-256 digest of a file's contents."""
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(_CHUNK), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class StageRecord:
    """
    Contents of a metadata sidecar.

    Attributes:
        command: Name of the command that wrote the sidecar.
        config_digest: Digest of the configuration sections the command reads.
        seed: Master seed of the run.
        inputs, outputs: File path and digest by artifact name.
        extra: Command-specific details.
    """

    command: str
    config_digest: str
    seed: int
    inputs: Dict[str, Dict[str, str]]
    outputs: Dict[str, Dict[str, str]]
    extra: Dict[str, Any]

    def output(self, name: str, root: Path) -> Path:
        path = Path(self.outputs[name]["path"])
        return path if path.is_absolute() else root / path


class Workspace:
    """A directory holding pipeline artifacts and their sidecars."""

    LOCK_NAME = ".lock"

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root).absolute()

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    def meta_path(self, command: str) -> Path:
        return self.root / f"{command}.meta.json"

    @contextmanager
    def locked(self) -> Iterator[Workspace]:
        """
        Hold the work directory lock for the duration of the block.

        Raises:
            WorkdirLockedError: Another process holds the lock.
        """
        self.root.mkdir(parents=True, exist_ok=True)
        lock = self.root / self.LOCK_NAME
        try:
            descriptor = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise WorkdirLockedError(
                f"‘{self.root}’ is in use by another process; remove ‘{lock}’ "
                "if no other command is running."
            ) from None

        try:
            os.write(descriptor, f"{os.getpid()}\n".encode("ascii"))
            os.close(descriptor)
            yield self
        finally:
            lock.unlink()

    def _describe(self, paths: Mapping[str, Path]) -> Dict[str, Dict[str, str]]:
        described = {}
        for name, path in paths.items():
            path = Path(path).absolute()
            try:
                shown = str(path.relative_to(self.root))
            except ValueError:
                shown = str(path)
            described[name] = {"path": shown, "sha256": file_digest(path)}
        return described

    def record(
        self,
        command: str,
        *,
        config_digest: str,
        seed: int,
        inputs: Mapping[str, Path],
        outputs: Mapping[str, Path],
        extra: Optional[Mapping[str, Any]] = None,
    ) -> StageRecord:
        """Write the metadata sidecar of a finished command."""
        record = StageRecord(
            command=command,
            config_digest=config_digest,
            seed=seed,
            inputs=self._describe(inputs),
            outputs=self._describe(outputs),
            extra=dict(extra or {}),
        )
        with open(self.meta_path(command), "w", encoding="utf-8") as stream:
            json.dump(record.__dict__, stream, indent=2, sort_keys=True)
            stream.write("\n")
        logger.debug("Recorded %d output(s) of ‘%s’", len(outputs), command)
        return record

    def load_record(self, command: str) -> StageRecord:
        """
        Raises:
            MissingArtifactError: The command has not been run.
        """
        path = self.meta_path(command)
        if not path.exists():
            raise MissingArtifactError(path.name, command)
        with open(path, encoding="utf-8") as stream:
            return StageRecord(**json.load(stream))

    def require(self, command: str, config_digest: Optional[str] = None) -> StageRecord:
        """
        Check that the artifacts of a previous command are present and
        up to date.

        Arguments:
            command: The predecessor command.
            config_digest: Digest of the current configuration sections the
                predecessor depends on; not compared when `None`.

        Raises:
            MissingArtifactError: The command has not been run or one of its
                outputs was deleted.
            StaleArtifactError: An output was modified, an input changed or
                the configuration differs from the one the command ran with.
        """
        record = self.load_record(command)

        for name, entry in record.outputs.items():
            path = record.output(name, self.root)
            if not path.exists():
                raise MissingArtifactError(entry["path"], command)
            if file_digest(path) != entry["sha256"]:
                raise StaleArtifactError(
                    f"‘{entry['path']}’ was modified after ‘{command}’ wrote it; "
                    f"run ‘{command}’ again."
                )

        for name, entry in record.inputs.items():
            path = Path(entry["path"])
            path = path if path.is_absolute() else self.root / path
            if not path.exists() or file_digest(path) != entry["sha256"]:
                raise StaleArtifactError(
                    f"Input ‘{entry['path']}’ changed since ‘{command}’ ran; "
                    f"run ‘{command}’ again."
                )

        if config_digest is not None and config_digest != record.config_digest:
            raise StaleArtifactError(
                f"The configuration changed since ‘{command}’ ran; "
                f"run ‘{command}’ again."
            )
        return record
