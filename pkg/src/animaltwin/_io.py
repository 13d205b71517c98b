"""File helpers: digests, canonical JSON, staged (temp-then-rename) outputs."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import uuid
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Mapping

from .errors import FileNotFound, InvalidSpec, IOFailure

DIGEST_ALGORITHM = "sha256"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | os.PathLike) -> str:
    """SHA-256 of a file's raw bytes; for a directory, of its sorted listing of file digests."""
    path = Path(path)
    if path.is_dir():
        lines = []
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            lines.append(f"{sub.relative_to(path).as_posix()}\t{sha256_file(sub)}\n")
        return sha256_bytes("".join(lines).encode("utf-8"))
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def read_json(path: str | os.PathLike, what: str = "JSON document"):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FileNotFound(f"{what} not found: {path}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{what} {path} is not valid JSON: {exc}") from exc


def write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _remove(path: Path) -> None:
    if path.is_dir() and not path.is_symlink():
        shutil.rmtree(path)
    elif path.exists() or path.is_symlink():
        path.unlink()


@contextmanager
def staged_outputs(targets: Mapping[str, str | os.PathLike | list]) -> Iterator[dict]:
    """Yield temp paths mirroring ``targets``; move them into place only on success.

    Values may be single paths or lists of paths. On an exception every temp
    file is removed and the final paths are left untouched.
    """
    token = uuid.uuid4().hex[:8]

    def temp_for(p) -> Path:
        p = Path(p)
        return p.with_name(f".{p.name}.{token}.tmp")

    staged: dict = {}
    pairs: list[tuple[Path, Path]] = []
    for role, value in targets.items():
        if isinstance(value, (list, tuple)):
            staged[role] = [temp_for(v) for v in value]
            pairs.extend(zip(staged[role], map(Path, value)))
        else:
            staged[role] = temp_for(value)
            pairs.append((staged[role], Path(value)))
    try:
        for tmp, final in pairs:
            final.parent.mkdir(parents=True, exist_ok=True)
        yield staged
    except BaseException:
        for tmp, _ in pairs:
            _remove(tmp)
        raise
    for tmp, final in pairs:
        if not tmp.exists():
            raise IOFailure(f"step did not produce declared output {final}")
        if final.is_dir() and not final.is_symlink():
            shutil.rmtree(final)
        os.replace(tmp, final)
