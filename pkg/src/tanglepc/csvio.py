"""CSV output with the producing configuration embedded as ``#`` comments."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence, TextIO


def write_csv(fh: TextIO, columns: Sequence[str], rows: Iterable[Sequence], config: dict | None = None) -> None:
    if config is not None:
        fh.write("# config: " + json.dumps(config, sort_keys=True, default=str) + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return int(v)
    return v


def save_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence], config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        write_csv(fh, columns, rows, config)
    return path


def read_config_header(path: str | Path) -> dict:
    """The ``# config:`` JSON object at the top of a file written by :func:`write_csv`."""
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("# config: "):
                return json.loads(line[len("# config: "):])
            if not line.startswith("#"):
                break
    raise ValueError(f"{path} has no '# config:' header")


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open() as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))
