"""Result persistence: deterministic CSVs plus a sidecar metadata record.

The CSV carries the data and must be byte-identical across reruns with the
same seed (floats are written with shortest round-trip repr, timestamps stay
out). The metadata file is line-delimited ``key = value`` text holding the
experiment id, a wall-clock timestamp, the full resolved config echo, what
the run checks, and the pass/fail flags.
"""

from __future__ import annotations

import csv
import datetime
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence


def format_value(v) -> str:
    if isinstance(v, float):
        return repr(float(v))  # plain-float repr even for numpy scalars
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)  # RFC-4180-style quoting and line endings
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])


@dataclass
class ResultRecord:
    """Everything one run produced, with enough echo to reproduce it."""

    experiment: str
    config_echo: dict[str, str]
    checks: str = ""
    flags: dict[str, bool] = field(default_factory=dict)
    notes: dict[str, str] = field(default_factory=dict)
    csv_paths: list[Path] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def write_metadata(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [
            f"experiment = {self.experiment}",
            f"timestamp = {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
            f"checks = {self.checks}",
            f"passed = {str(self.passed).lower()}",
        ]
        for name, ok in sorted(self.flags.items()):
            lines.append(f"flag.{name} = {str(ok).lower()}")
        for name, val in sorted(self.notes.items()):
            lines.append(f"note.{name} = {val}")
        for p in self.csv_paths:
            lines.append(f"output = {p}")
        for key in sorted(self.config_echo):
            lines.append(f"config.{key} = {self.config_echo[key]}")
        path.write_text("\n".join(lines) + "\n")
