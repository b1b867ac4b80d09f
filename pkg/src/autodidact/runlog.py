"""Append-only run log, stored as newline-delimited JSON.

Each line is one object::

    {"record_type": str, "global_step": int, "worker_id": int, "payload": {...}}

Record types written by the trainer:

``config``        the full run configuration (worker_id -1)
``segment``       per-segment summary: length, terminal flag, target mean/min/max,
                  mean weight per n-step horizon, clipped gradient norm, learning
                  rate, loss diagnostics
``value_change``  per-state lists ``confidence``, ``value_before``, ``value_after``
                  around one parameter update
``eval``          ``mean_return``, ``mean_discounted_return``, ``returns``,
                  ``value_rmse`` (against exact values of the acting policy), ``lr``
``eval_trace``    first evaluation episode, step by step: ``episode_index``,
                  ``confidence``, ``value``, ``reward``, ``action``, ``weights``
                  (one row per step, length = number of returns available)
``checkpoint``    ``path`` of the checkpoint written at an evaluation
``skip``          a segment dropped for a non-finite loss
``worker_end``    segments completed by one worker process (multi-worker runs)
``run_end``       final ``global_step`` and ``segments`` count (worker_id -1)
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)
    path: Path | None = None

    def of_type(self, record_type: str) -> list[dict]:
        return [r for r in self.records if r["record_type"] == record_type]

    def evaluations(self) -> list[dict]:
        return self.of_type("eval")

    @property
    def config(self) -> dict | None:
        found = self.of_type("config")
        return found[0]["payload"] if found else None

    def lines(self) -> list[str]:
        return [json.dumps(r, sort_keys=True) for r in self.records]


class RunLogWriter:
    """Thread-safe sink; keeps records in memory and mirrors them to ``path`` if given."""

    def __init__(self, path=None):
        self.log = RunLog(path=Path(path) if path else None)
        self._lock = threading.Lock()
        self._fh = open(self.log.path, "w") if self.log.path else None

    def append(self, record_type: str, global_step: int, worker_id: int, payload: dict):
        record = {"record_type": record_type, "global_step": int(global_step),
                  "worker_id": int(worker_id), "payload": _plain(payload)}
        with self._lock:
            self.log.records.append(record)
            if self._fh:
                self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self) -> RunLog:
        if self._fh:
            self._fh.close()
            self._fh = None
        return self.log


def read_runlog(path) -> RunLog:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            for key in ("record_type", "global_step", "worker_id", "payload"):
                if key not in record:
                    raise ValueError(f"{path}:{lineno}: record missing {key!r}")
            records.append(record)
    return RunLog(records, Path(path))
