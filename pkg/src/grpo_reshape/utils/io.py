"""
JSON-lines helpers shared by task files, metrics logs and trajectory dumps.
"""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Union

PathLike = Union[str, Path]


def dumps_line(record: Dict[str, Any]) -> str:
    """One record as a sorted-key JSON line (newline included)."""
    return json.dumps(record, sort_keys=True) + "\n"


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> None:
    """Write records to a fresh file, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(dumps_line(record))


def append_jsonl(path: PathLike, record: Dict[str, Any]) -> None:
    """Append one record."""
    with Path(path).open("a", encoding="utf-8") as f:
        f.write(dumps_line(record))


def iter_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    """
    Iterate the records of a JSON-lines file, skipping blank lines.

    Raises:
        ValueError: On a line that is not valid JSON, with its line number
    """
    with Path(path).open(encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: {e.msg}") from e


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    """All records of a JSON-lines file."""
    return list(iter_jsonl(path))
