"""Fake-class threshold runs and percentile-based mislabel flagging.

A threshold run reassigns an equal share of each class to a synthetic extra
class. Those samples are mislabelled by construction, so the distribution of
their AUM values calibrates a flagging threshold: real samples scoring below
the chosen percentile of the fake-class AUMs are flagged. A second run with a
disjoint fake set supplies verdicts for the samples that wore the fake label
in the first run, so every sample is judged under its own label exactly once.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Dataset
from .dynamics import AumRecord


class ThresholdError(ValueError):
    """A threshold run or verdict merge violates its contract."""


@dataclass(frozen=True)
class ThresholdRunPlan:
    run_index: int
    fake_ids: frozenset[str]
    per_class_counts: dict[int, int]
    seed: int


@dataclass(eq=False)
class ThresholdResult:
    percentile: float
    threshold_value: float
    flagged_ids: frozenset[str]
    fake_aums: list[float]


def build_threshold_run(
    dataset: Dataset,
    run_index: int,
    prior_plan: ThresholdRunPlan | None = None,
    seed: int = 0,
    *,
    fake_fraction: float | None = None,
) -> tuple[Dataset, ThresholdRunPlan]:
    """Relabel an equal per-class share of samples to the fake class.

    Selects ``floor(N * fake_fraction)`` samples in total (default fraction
    1/(c+1)), split across classes as evenly as possible; any remainder goes
    to the most populated classes first. Run 2 must receive run 1's plan and
    never reuses its fake ids. The input dataset is untouched; the returned
    view carries the fake labels and an active fake class.
    """
    if run_index not in (1, 2):
        raise ThresholdError(f"run_index must be 1 or 2, got {run_index}")
    if run_index == 2 and prior_plan is None:
        raise ThresholdError("run 2 requires the plan of run 1")
    if run_index == 1 and prior_plan is not None:
        raise ThresholdError("run 1 cannot take a prior plan")
    if dataset.label_space.fake_class_active:
        raise ThresholdError("dataset already carries an active fake class")

    c = dataset.label_space.num_classes
    n = len(dataset)
    if fake_fraction is None:
        total = n // (c + 1)
    else:
        if not 0 < fake_fraction < 1:
            raise ThresholdError(f"fake fraction must be in (0, 1), got {fake_fraction}")
        total = math.floor(n * fake_fraction)
    if total < c:
        raise ThresholdError(
            f"fake class of {total} samples cannot cover {c} classes; dataset too small"
        )

    excluded = prior_plan.fake_ids if prior_plan is not None else frozenset()
    pools: dict[int, list[str]] = {label: [] for label in range(c)}
    for s in dataset.samples:
        if s.id not in excluded:
            pools[s.label].append(s.id)

    base, remainder = divmod(total, c)
    # Hand the remainder to the classes with the most candidates left.
    extra_order = sorted(range(c), key=lambda label: (-len(pools[label]), label))
    quotas = {label: base for label in range(c)}
    for label in extra_order[:remainder]:
        quotas[label] += 1

    rng = np.random.default_rng(seed)
    fake_ids: set[str] = set()
    for label in range(c):
        pool = pools[label]
        quota = quotas[label]
        if quota > len(pool):
            raise ThresholdError(
                f"class {label} has only {len(pool)} eligible samples for a quota of {quota}"
            )
        picked = rng.choice(len(pool), size=quota, replace=False)
        fake_ids.update(pool[i] for i in picked)

    plan = ThresholdRunPlan(
        run_index=run_index,
        fake_ids=frozenset(fake_ids),
        per_class_counts=dict(quotas),
        seed=seed,
    )
    fake_label = c
    flag = f"fake_assigned_run{run_index}"
    augmented = Dataset(
        samples=tuple(
            s.with_label(fake_label, flag) if s.id in plan.fake_ids else s
            for s in dataset.samples
        ),
        label_space=dataset.label_space.with_fake_class(),
        split_name=dataset.split_name,
    )
    return augmented, plan


def compute_threshold(fake_aums: Sequence[float], percentile: float) -> float:
    """Nearest-rank percentile of the fake-class AUMs.

    Sorts ascending and returns the element at rank ``ceil(p/100 * n)``, so
    the threshold is always an observed value.
    """
    if len(fake_aums) == 0:
        raise ThresholdError("cannot take a percentile of zero fake-class AUMs")
    if not 0 < percentile <= 100:
        raise ThresholdError(f"percentile must be in (0, 100], got {percentile}")
    ordered = sorted(float(v) for v in fake_aums)
    rank = max(1, math.ceil(percentile * len(ordered) / 100.0))
    return ordered[rank - 1]


def flag_mislabelled(
    aums: Iterable[AumRecord], threshold_value: float, exclude: frozenset[str] | set[str]
) -> set[str]:
    """Ids with AUM strictly below the threshold, minus the excluded fake ids."""
    return {
        r.sample_id
        for r in aums
        if r.aum < threshold_value and r.sample_id not in exclude
    }


def resolve_threshold(
    records: Sequence[AumRecord], plan: ThresholdRunPlan, percentile: float
) -> ThresholdResult:
    """Threshold one run's AUM records at a percentile of its fake-class AUMs."""
    by_id = {r.sample_id: r for r in records}
    missing = [sid for sid in plan.fake_ids if sid not in by_id]
    if missing:
        raise ThresholdError(f"no AUM record for fake sample {sorted(missing)[0]!r}")
    fake_aums = [by_id[sid].aum for sid in sorted(plan.fake_ids)]
    threshold_value = compute_threshold(fake_aums, percentile)
    flagged = flag_mislabelled(records, threshold_value, plan.fake_ids)
    return ThresholdResult(
        percentile=percentile,
        threshold_value=threshold_value,
        flagged_ids=frozenset(flagged),
        fake_aums=fake_aums,
    )


RunOutputs = tuple[Sequence[AumRecord], ThresholdRunPlan, float]


def two_run_verdicts(run1: RunOutputs, run2: RunOutputs) -> set[str]:
    """Merge two threshold runs so every sample gets exactly one verdict.

    Samples that wore the fake label in run 1 are judged by run 2; everyone
    else (including run 2's fake samples) is judged by run 1. Returns the
    union of the per-run flag sets.
    """
    records1, plan1, threshold1 = run1
    records2, plan2, threshold2 = run2
    overlap = plan1.fake_ids & plan2.fake_ids
    if overlap:
        raise ThresholdError(
            f"sample {sorted(overlap)[0]!r} is fake in both runs; fake sets must be disjoint"
        )
    flagged = flag_mislabelled(records1, threshold1, plan1.fake_ids)
    aums2 = {r.sample_id: r.aum for r in records2}
    for sid in plan1.fake_ids:
        if sid not in aums2:
            raise ThresholdError(f"run 2 has no AUM record for sample {sid!r}")
        if aums2[sid] < threshold2:
            flagged.add(sid)
    return flagged


def governing_records(
    records1: Sequence[AumRecord],
    plan1: ThresholdRunPlan,
    records2: Sequence[AumRecord],
) -> list[AumRecord]:
    """Per-sample AUM records taken from the run where the sample kept its label."""
    map1 = {r.sample_id: r for r in records1}
    map2 = {r.sample_id: r for r in records2}
    out = []
    for sid in sorted(map1):
        if sid in plan1.fake_ids:
            if sid not in map2:
                raise ThresholdError(f"run 2 has no AUM record for sample {sid!r}")
            out.append(map2[sid])
        else:
            out.append(map1[sid])
    return out


def write_run_manifest(plan: ThresholdRunPlan, result: ThresholdResult, path) -> None:
    """Persist one run's plan and threshold so flagging is re-runnable without retraining."""
    obj = {
        "run_index": plan.run_index,
        "seed": plan.seed,
        "fake_ids": sorted(plan.fake_ids),
        "percentile": result.percentile,
        "threshold_value": result.threshold_value,
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def read_run_manifest(path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    required = {"run_index", "seed", "fake_ids", "percentile", "threshold_value"}
    missing = required - obj.keys()
    if missing:
        raise ThresholdError(f"run manifest {path} is missing keys {sorted(missing)}")
    return obj
