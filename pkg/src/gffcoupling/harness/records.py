"""Append-only JSON-lines result records."""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

FIELD_ORDER = ("config_hash", "experiment", "statistic", "params", "value", "se", "replicas", "seed", "wall_time")


@dataclass
class RunRecord:
    config_hash: str
    experiment: str
    statistic: str
    value: float | bool | str
    se: float | None = None
    replicas: int | None = None
    seed: int | None = None
    wall_time: float | None = None
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        data = asdict(self)
        data = {key: _clean(data[key]) for key in FIELD_ORDER}
        return json.dumps(data, sort_keys=False)


def _clean(value):
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in sorted(value.items())}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if hasattr(value, "item"):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


class RecordWriter:
    """Serialises record emission through one lock and one file handle."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: list[RunRecord] = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, record: RunRecord) -> None:
        with self._lock:
            self.records.append(record)
            if self.path:
                with self.path.open("a") as fh:
                    fh.write(record.to_json() + "\n")


def read_records(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
