"""Dataset model, label space, and TSV/JSONL file formats."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

FLAG_NAMES = frozenset(
    {"noise_injected", "fake_assigned_run1", "fake_assigned_run2", "flipped", "sieved"}
)

_TSV_HEADER = ("id", "text", "label")


class DatasetError(ValueError):
    """A dataset file or record violates the format contract."""


@dataclass(frozen=True)
class LabelSpace:
    """Class count for a dataset, optionally extended by one synthetic class.

    The synthetic ("fake") class always sits at index ``num_classes``, the
    highest index. It exists only inside augmented threshold-run views and is
    never persisted in a dataset at rest.
    """

    num_classes: int
    fake_class_active: bool = False
    class_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise DatasetError(f"a label space needs at least 2 classes, got {self.num_classes}")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise DatasetError("class_names must have one entry per class")

    @property
    def effective_num_classes(self) -> int:
        return self.num_classes + (1 if self.fake_class_active else 0)

    @property
    def fake_class_index(self) -> int:
        if not self.fake_class_active:
            raise DatasetError("fake class is not active in this label space")
        return self.num_classes

    def with_fake_class(self) -> LabelSpace:
        return replace(self, fake_class_active=True)

    def without_fake_class(self) -> LabelSpace:
        return replace(self, fake_class_active=False)


@dataclass(frozen=True)
class LabeledSample:
    """One classification record with provenance.

    ``original_label`` is fixed when the sample is first created or loaded and
    is never overwritten afterwards, so noise injection and label flips stay
    auditable.
    """

    id: str
    text: str
    label: int
    original_label: int
    flags: frozenset[str] = frozenset()
    cluster_id: str | None = None

    def with_label(self, label: int, *extra_flags: str) -> LabeledSample:
        return replace(self, label=label, flags=self.flags.union(extra_flags))

    def with_flags(self, *extra_flags: str) -> LabeledSample:
        return replace(self, flags=self.flags.union(extra_flags))


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of samples; transformations return new datasets."""

    samples: tuple[LabeledSample, ...]
    label_space: LabelSpace
    split_name: str = "train"

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @cached_property
    def by_id(self) -> dict[str, LabeledSample]:
        return {s.id: s for s in self.samples}

    @cached_property
    def id_set(self) -> frozenset[str]:
        return frozenset(s.id for s in self.samples)

    def labels(self) -> dict[str, int]:
        return {s.id: s.label for s in self.samples}

    def validate(self) -> None:
        seen: set[str] = set()
        effective = self.label_space.effective_num_classes
        for s in self.samples:
            if s.id in seen:
                raise DatasetError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if not 0 <= s.label < effective:
                raise DatasetError(
                    f"sample {s.id!r}: label {s.label} outside [0, {effective})"
                )
            if not self.label_space.fake_class_active and s.label >= self.label_space.num_classes:
                raise DatasetError(
                    f"sample {s.id!r}: label {s.label} is the fake-class index but no fake class is active"
                )
            if not 0 <= s.original_label < self.label_space.num_classes:
                raise DatasetError(
                    f"sample {s.id!r}: original_label {s.original_label} outside the real label space"
                )
            unknown = s.flags - FLAG_NAMES
            if unknown:
                raise DatasetError(f"sample {s.id!r}: unknown flags {sorted(unknown)}")

    def replace_samples(self, samples) -> Dataset:
        return Dataset(tuple(samples), self.label_space, self.split_name)


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("tsv", "jsonl"):
        return suffix
    raise DatasetError(
        f"cannot infer format from {path.name!r}; pass format='tsv' or 'jsonl'"
    )


def _parse_tsv(text: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError("empty file")
    header = tuple(lines[0].split("\t"))
    if header != _TSV_HEADER:
        raise DatasetError(
            f"line 1: expected header {'TAB'.join(_TSV_HEADER)!r}, got {lines[0]!r}"
        )
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 3:
            raise DatasetError(
                f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
            )
        sid, body, label_str = fields
        if not sid:
            raise DatasetError(f"line {lineno}: empty sample id")
        try:
            label = int(label_str)
        except ValueError:
            raise DatasetError(f"line {lineno}: label {label_str!r} is not an integer") from None
        yield lineno, LabeledSample(id=sid, text=body, label=label, original_label=label)


def _parse_jsonl(text: str):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetError("empty file")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise DatasetError(f"line {lineno}: expected a JSON object")
        sid = obj.get("id")
        body = obj.get("text")
        label = obj.get("label")
        if not isinstance(sid, str) or not sid:
            raise DatasetError(f"line {lineno}: 'id' must be a non-empty string")
        if not isinstance(body, str):
            raise DatasetError(f"line {lineno}: 'text' must be a string")
        if isinstance(label, bool) or not isinstance(label, int):
            raise DatasetError(f"line {lineno}: 'label' must be an integer")
        original = obj.get("original_label", label)
        if isinstance(original, bool) or not isinstance(original, int):
            raise DatasetError(f"line {lineno}: 'original_label' must be an integer")
        raw_flags = obj.get("flags", [])
        if not isinstance(raw_flags, list) or not all(isinstance(f, str) for f in raw_flags):
            raise DatasetError(f"line {lineno}: 'flags' must be an array of strings")
        unknown = set(raw_flags) - FLAG_NAMES
        if unknown:
            raise DatasetError(f"line {lineno}: unknown flags {sorted(unknown)}")
        cluster_id = obj.get("cluster_id")
        if cluster_id is not None and not isinstance(cluster_id, str):
            raise DatasetError(f"line {lineno}: 'cluster_id' must be a string")
        yield lineno, LabeledSample(
            id=sid,
            text=body,
            label=label,
            original_label=original,
            flags=frozenset(raw_flags),
            cluster_id=cluster_id,
        )


def load_dataset(
    path,
    format: str | None = None,
    *,
    num_classes: int | None = None,
    split_name: str = "train",
) -> Dataset:
    """Load a dataset from a TSV or JSONL file, preserving record order.

    ``format`` defaults to the file suffix. When ``num_classes`` is omitted it
    is inferred as ``max(label) + 1`` (at least 2); when given, any label at or
    above it is rejected with the offending line number.
    """
    p = Path(path)
    fmt = format or _infer_format(p)
    text = p.read_text(encoding="utf-8")
    if fmt == "tsv":
        records = list(_parse_tsv(text))
    elif fmt == "jsonl":
        records = list(_parse_jsonl(text))
    else:
        raise DatasetError(f"unknown format {fmt!r}; expected 'tsv' or 'jsonl'")
    if fmt == "jsonl" and not records:
        raise DatasetError("empty file")

    seen: dict[str, int] = {}
    max_label = 1
    for lineno, sample in records:
        if sample.id in seen:
            raise DatasetError(
                f"line {lineno}: duplicate id {sample.id!r} (first seen on line {seen[sample.id]})"
            )
        seen[sample.id] = lineno
        if sample.label < 0 or sample.original_label < 0:
            raise DatasetError(f"line {lineno}: negative label for sample {sample.id!r}")
        if num_classes is not None and (
            sample.label >= num_classes or sample.original_label >= num_classes
        ):
            raise DatasetError(
                f"line {lineno}: label {sample.label} out of range for {num_classes} classes"
                f" (sample {sample.id!r})"
            )
        max_label = max(max_label, sample.label, sample.original_label)

    resolved = num_classes if num_classes is not None else max_label + 1
    dataset = Dataset(
        samples=tuple(sample for _, sample in records),
        label_space=LabelSpace(num_classes=resolved),
        split_name=split_name,
    )
    dataset.validate()
    return dataset


def save_dataset(dataset: Dataset, path, format: str | None = None) -> None:
    """Write a dataset to TSV or JSONL.

    JSONL carries provenance (original_label, flags, cluster_id) and
    round-trips exactly. TSV keeps only id/text/label; provenance is dropped
    with a warning. Output is byte-stable for a given dataset.
    """
    p = Path(path)
    fmt = format or _infer_format(p)
    if fmt == "tsv":
        dropped = any(
            s.flags or s.label != s.original_label or s.cluster_id is not None
            for s in dataset.samples
        )
        if dropped:
            warnings.warn(
                "TSV output drops flags, original_label, and cluster_id",
                stacklevel=2,
            )
        lines = ["\t".join(_TSV_HEADER)]
        for s in dataset.samples:
            if "\t" in s.text or "\n" in s.text or "\r" in s.text:
                raise DatasetError(
                    f"sample {s.id!r}: text contains tab or newline; not representable as TSV"
                )
            lines.append(f"{s.id}\t{s.text}\t{s.label}")
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "jsonl":
        lines = []
        for s in dataset.samples:
            obj: dict = {"id": s.id, "text": s.text, "label": s.label}
            if s.original_label != s.label:
                obj["original_label"] = s.original_label
            if s.flags:
                obj["flags"] = sorted(s.flags)
            if s.cluster_id is not None:
                obj["cluster_id"] = s.cluster_id
            lines.append(json.dumps(obj, ensure_ascii=False))
        p.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    else:
        raise DatasetError(f"unknown format {fmt!r}; expected 'tsv' or 'jsonl'")
