"""Append-only JSONL label store shared by the batch tools and the service.

One record per line: {"kernel": "<relative path>", "label": "character"|"reject"|null, "ts": <unix seconds>}.
A null label is a tombstone that clears any earlier label for that kernel.
Replay applies records in file order; the last record for a kernel wins.
"""

from __future__ import annotations

import json
import time
import warnings
from pathlib import Path

from .errors import DuplicateLabelWarning

VALID_LABELS = ("character", "reject")


def append_label(path: str | Path, kernel: str, label: str | None, ts: float | None = None) -> dict:
    """Append one label record (or a tombstone when label is None)."""
    if label is not None and label not in VALID_LABELS:
        raise ValueError(f"label must be one of {VALID_LABELS} or None, got {label!r}")
    record = {"kernel": kernel, "label": label, "ts": int(ts if ts is not None else time.time())}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    return record


def replay_labels(path: str | Path) -> dict[str, str | None]:
    """Fold the store into kernel -> effective label (last write wins).

    Conflicting re-labels (two different non-null values for one kernel)
    emit a DuplicateLabelWarning; the later record still wins.
    """
    path = Path(path)
    state: dict[str, str | None] = {}
    if not path.exists():
        return state
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed label record") from exc
            kernel = record["kernel"]
            label = record.get("label")
            previous = state.get(kernel)
            if previous is not None and label is not None and previous != label:
                warnings.warn(
                    f"kernel {kernel!r} relabeled {previous!r} -> {label!r}; keeping the later record",
                    DuplicateLabelWarning,
                )
            state[kernel] = label
    return state
