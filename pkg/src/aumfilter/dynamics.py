"""Margin and AUM scores plus data-map statistics over per-epoch logit tables.

The margin of a sample at one epoch is the logit of its assigned label minus
the highest logit among the other classes; AUM is the arithmetic mean of the
margins over epochs. Data-map statistics are the mean (confidence) and
population standard deviation (variability) of the assigned-label softmax
probability, plus the fraction of epochs where the argmax matches the label
(correctness).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np


class DynamicsError(ValueError):
    """A dynamics table or log violates its contract."""


@dataclass(eq=False)
class DynamicsTable:
    """Per-sample, per-epoch logit vectors.

    ``entries`` maps sample id to an array of shape (num_epochs, logit_len),
    epoch-ascending. Samples listed in ``ragged_ids`` have fewer rows than
    ``num_epochs``; such tables only come out of ``ingest_dynamics`` with
    ``allow_ragged=True``.
    """

    entries: dict[str, np.ndarray]
    num_epochs: int
    logit_len: int
    ragged_ids: frozenset[str] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.entries)

    def sample_ids(self) -> list[str]:
        return sorted(self.entries)

    def validate(self) -> None:
        if self.logit_len < 2:
            raise DynamicsError(f"logit length must be at least 2, got {self.logit_len}")
        if self.num_epochs < 1:
            raise DynamicsError("a dynamics table needs at least one epoch")
        for sid, arr in self.entries.items():
            if arr.ndim != 2 or arr.shape[1] != self.logit_len:
                raise DynamicsError(
                    f"sample {sid!r}: logits have shape {arr.shape}, expected (*, {self.logit_len})"
                )
            expected = self.num_epochs
            if arr.shape[0] != expected and sid not in self.ragged_ids:
                raise DynamicsError(
                    f"sample {sid!r}: {arr.shape[0]} epochs recorded, expected {expected}"
                )
            if not np.all(np.isfinite(arr)):
                raise DynamicsError(f"sample {sid!r}: non-finite logit")


@dataclass(eq=False)
class AumRecord:
    sample_id: str
    margins: np.ndarray
    aum: float
    label_used: int
    ragged: bool = False


@dataclass(frozen=True)
class DataMapRecord:
    sample_id: str
    confidence: float
    variability: float
    correctness: float


def margin(logits, gold: int) -> float:
    """Assigned-class logit minus the highest other logit."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise DynamicsError(f"margin needs a logit vector of length >= 2, got shape {z.shape}")
    if not 0 <= gold < z.shape[0]:
        raise DynamicsError(f"gold label {gold} out of range for {z.shape[0]} logits")
    others = np.delete(z, gold)
    return float(z[gold] - others.max())


def _margins_over_epochs(arr: np.ndarray, gold: int) -> np.ndarray:
    if not 0 <= gold < arr.shape[1]:
        raise DynamicsError(f"gold label {gold} out of range for {arr.shape[1]} logits")
    masked = arr.copy()
    masked[:, gold] = -np.inf
    return arr[:, gold] - masked.max(axis=1)


def compute_aum(dynamics: DynamicsTable, labels: Mapping[str, int]) -> list[AumRecord]:
    """One AumRecord per sample, ordered by sample id.

    ``labels`` must provide the label each sample's margin is computed
    against; during a threshold run that is the fake class for reassigned
    samples.
    """
    records = []
    for sid in dynamics.sample_ids():
        if sid not in labels:
            raise DynamicsError(f"no label provided for sample {sid!r}")
        gold = labels[sid]
        margins = _margins_over_epochs(dynamics.entries[sid], gold)
        records.append(
            AumRecord(
                sample_id=sid,
                margins=margins,
                aum=float(margins.mean()),
                label_used=gold,
                ragged=sid in dynamics.ragged_ids,
            )
        )
    return records


def _softmax_rows(arr: np.ndarray) -> np.ndarray:
    shifted = arr - arr.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def compute_datamap(dynamics: DynamicsTable, labels: Mapping[str, int]) -> list[DataMapRecord]:
    """Confidence, variability, and correctness per sample, ordered by sample id."""
    records = []
    for sid in dynamics.sample_ids():
        if sid not in labels:
            raise DynamicsError(f"no label provided for sample {sid!r}")
        gold = labels[sid]
        arr = dynamics.entries[sid]
        if not 0 <= gold < arr.shape[1]:
            raise DynamicsError(f"gold label {gold} out of range for {arr.shape[1]} logits")
        probs = _softmax_rows(arr)[:, gold]
        correct = np.argmax(arr, axis=1) == gold
        records.append(
            DataMapRecord(
                sample_id=sid,
                confidence=float(probs.mean()),
                variability=float(probs.std()),
                correctness=float(correct.mean()),
            )
        )
    return records


def aum_by_id(records) -> dict[str, float]:
    return {r.sample_id: r.aum for r in records}


def write_dynamics(dynamics: DynamicsTable, path) -> None:
    """Write a table as dynamics-log JSONL, one object per (sample, epoch).

    Lines are ordered by sample id then epoch, so output is byte-stable.
    """
    lines = []
    for sid in dynamics.sample_ids():
        arr = dynamics.entries[sid]
        for epoch in range(arr.shape[0]):
            obj = {
                "sample_id": sid,
                "epoch": epoch,
                "logits": [float(v) for v in arr[epoch]],
            }
            lines.append(json.dumps(obj, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def ingest_dynamics(path, *, allow_ragged: bool = False) -> DynamicsTable:
    """Read and validate a dynamics-log JSONL file.

    Every sample must carry epochs 0..T-1 exactly once with a uniform logit
    length, where T is the highest epoch seen plus one. With ``allow_ragged``
    missing epochs are tolerated; affected samples are reported via the
    table's ``ragged_ids`` and downstream AUM records are marked.
    """
    text = Path(path).read_text(encoding="utf-8")
    per_sample: dict[str, dict[int, list[float]]] = {}
    logit_len: int | None = None
    lineno = 0
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DynamicsError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DynamicsError(f"line {lineno}: expected a JSON object")
        sid = obj.get("sample_id")
        epoch = obj.get("epoch")
        logits = obj.get("logits")
        if not isinstance(sid, str) or not sid:
            raise DynamicsError(f"line {lineno}: 'sample_id' must be a non-empty string")
        if isinstance(epoch, bool) or not isinstance(epoch, int) or epoch < 0:
            raise DynamicsError(f"line {lineno}: 'epoch' must be a non-negative integer")
        if not isinstance(logits, list) or len(logits) < 2:
            raise DynamicsError(f"line {lineno}: 'logits' must be an array of length >= 2")
        values = []
        for v in logits:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
                raise DynamicsError(
                    f"non-finite or non-numeric logit for sample {sid!r} epoch {epoch} (line {lineno})"
                )
            values.append(float(v))
        if logit_len is None:
            logit_len = len(values)
        elif len(values) != logit_len:
            raise DynamicsError(
                f"inconsistent logit length for sample {sid!r} epoch {epoch}: "
                f"got {len(values)}, expected {logit_len}"
            )
        epochs = per_sample.setdefault(sid, {})
        if epoch in epochs:
            raise DynamicsError(f"duplicate epoch {epoch} for sample {sid!r}")
        epochs[epoch] = values

    if not per_sample:
        raise DynamicsError("empty dynamics log")
    num_epochs = max(max(epochs) for epochs in per_sample.values()) + 1

    entries: dict[str, np.ndarray] = {}
    ragged: set[str] = set()
    for sid, epochs in per_sample.items():
        missing = [t for t in range(num_epochs) if t not in epochs]
        if missing:
            if not allow_ragged:
                raise DynamicsError(f"sample {sid!r} missing epoch {missing[0]}")
            ragged.add(sid)
        ordered = [epochs[t] for t in sorted(epochs)]
        entries[sid] = np.asarray(ordered, dtype=np.float64)

    table = DynamicsTable(
        entries=entries,
        num_epochs=num_epochs,
        logit_len=int(logit_len or 0),
        ragged_ids=frozenset(ragged),
    )
    table.validate()
    return table
