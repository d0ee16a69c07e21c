"""End-to-end experiments: inject, threshold, flag, filter, retrain, evaluate.

All randomness in an experiment derives from one master seed: each stage
(inject, run1, run2, retrain) gets its own sub-seed by hashing the master
seed with the stage tag, so reruns are byte-identical and the two threshold
runs stay independent.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Dataset, LabeledSample, load_dataset, save_dataset
from .dynamics import AumRecord, DynamicsTable, compute_aum, write_dynamics
from .noise import NoiseMask, NoiseReport, inject_noise, score_noise_identification, write_noise_mask
from .thresholds import (
    ThresholdResult,
    ThresholdRunPlan,
    build_threshold_run,
    governing_records,
    resolve_threshold,
    two_run_verdicts,
    write_run_manifest,
)
from .trainer import TrainConfig, evaluate, train

ACTIONS = ("none", "sieve", "flip")


@dataclass(frozen=True)
class FilterAction:
    kind: str
    flagged_ids: frozenset[str]
    percentile_used: float

    def __post_init__(self) -> None:
        if self.kind not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    train_path: str
    val_path: str
    noise_rate: float = 0.0
    action: str = "none"
    percentile: float = 99.0
    fake_fraction: float | None = None
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    data_format: str | None = None
    filtered_format: str = "jsonl"
    percentiles: tuple[float, ...] | None = None
    num_seeds: int = 1
    allow_multiclass_flip: bool = False
    out_dir: str | None = None

    def __post_init__(self) -> None:
        if self.action not in ACTIONS:
            raise ValueError(f"action must be one of {ACTIONS}, got {self.action!r}")
        if self.filtered_format not in ("tsv", "jsonl"):
            raise ValueError(f"filtered_format must be tsv or jsonl, got {self.filtered_format!r}")
        if self.num_seeds < 1:
            raise ValueError("num_seeds must be >= 1")


@dataclass
class ExperimentResult:
    acc_unfiltered: float
    acc_filtered: float
    num_flagged: int
    num_sieved_or_flipped: int
    threshold_run1: float
    threshold_run2: float
    percentile: float
    action: str
    master_seed: int
    sub_seeds: dict[str, int]
    noise_report: NoiseReport | None
    train_config: TrainConfig

    def to_json_dict(self) -> dict:
        return {
            "acc_unfiltered": self.acc_unfiltered,
            "acc_filtered": self.acc_filtered,
            "num_flagged": self.num_flagged,
            "num_sieved_or_flipped": self.num_sieved_or_flipped,
            "threshold_run1": self.threshold_run1,
            "threshold_run2": self.threshold_run2,
            "percentile": self.percentile,
            "action": self.action,
            "master_seed": self.master_seed,
            "sub_seeds": self.sub_seeds,
            "noise_report": self.noise_report.to_json_dict() if self.noise_report else None,
            "train_config": dataclasses.asdict(self.train_config),
        }


def derive_seed(master_seed: int, tag: str) -> int:
    """Stable 64-bit sub-seed for one pipeline stage."""
    digest = hashlib.blake2s(f"{master_seed}:{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def sieve(dataset: Dataset, flagged) -> Dataset:
    """Drop the flagged samples, keeping the remaining order."""
    flagged = set(flagged)
    unknown = flagged - dataset.id_set
    if unknown:
        raise ValueError(f"cannot sieve unknown sample id {sorted(unknown)[0]!r}")
    kept = tuple(s for s in dataset.samples if s.id not in flagged)
    if not kept:
        warnings.warn("sieving removed every sample; the result cannot be trained on")
    return dataset.replace_samples(kept)


def removed_by_sieve(dataset: Dataset, flagged) -> list[LabeledSample]:
    """The samples a sieve would drop, carrying the ``sieved`` flag, for audit output."""
    flagged = set(flagged)
    return [s.with_flags("sieved") for s in dataset.samples if s.id in flagged]


def flip(dataset: Dataset, flagged, dynamics: DynamicsTable | None = None) -> Dataset:
    """Rectify the labels of the flagged samples in place of removing them.

    Binary label spaces flip to the other class. With more classes a
    dynamics table must be supplied; the new label is the non-assigned real
    class with the highest mean logit over epochs.
    """
    flagged = set(flagged)
    unknown = flagged - dataset.id_set
    if unknown:
        raise ValueError(f"cannot flip unknown sample id {sorted(unknown)[0]!r}")
    c = dataset.label_space.num_classes
    if c != 2 and dynamics is None:
        raise ValueError(
            "flipping a non-binary label space needs a dynamics table to pick the new label"
        )
    new_samples = []
    for s in dataset.samples:
        if s.id not in flagged:
            new_samples.append(s)
            continue
        if c == 2:
            new_label = 1 - s.label
        else:
            if s.id not in dynamics.entries:
                raise ValueError(f"no dynamics recorded for sample {s.id!r}")
            mean_logits = dynamics.entries[s.id][:, :c].mean(axis=0)
            order = np.argsort(-mean_logits, kind="stable")
            new_label = int(next(k for k in order if k != s.label))
        new_samples.append(s.with_label(new_label, "flipped"))
    return dataset.replace_samples(new_samples)


@dataclass(eq=False)
class TwoRunOutcome:
    """Everything the two threshold runs produced, reusable across percentiles."""

    plan1: ThresholdRunPlan
    plan2: ThresholdRunPlan
    records1: list[AumRecord]
    records2: list[AumRecord]
    table1: DynamicsTable
    table2: DynamicsTable

    def resolve(self, percentile: float) -> tuple[ThresholdResult, ThresholdResult, set[str]]:
        res1 = resolve_threshold(self.records1, self.plan1, percentile)
        res2 = resolve_threshold(self.records2, self.plan2, percentile)
        flagged = two_run_verdicts(
            (self.records1, self.plan1, res1.threshold_value),
            (self.records2, self.plan2, res2.threshold_value),
        )
        return res1, res2, flagged

    def governing(self) -> list[AumRecord]:
        return governing_records(self.records1, self.plan1, self.records2)


def run_two_run_scheme(
    dataset: Dataset,
    train_config: TrainConfig,
    master_seed: int,
    *,
    fake_fraction: float | None = None,
) -> TwoRunOutcome:
    """Build, train, and score both fake-class threshold runs."""
    aug1, plan1 = build_threshold_run(
        dataset, 1, None, derive_seed(master_seed, "run1.select"), fake_fraction=fake_fraction
    )
    _, table1 = train(aug1, train_config.with_seed(derive_seed(master_seed, "run1.train")))
    records1 = compute_aum(table1, aug1.labels())

    aug2, plan2 = build_threshold_run(
        dataset, 2, plan1, derive_seed(master_seed, "run2.select"), fake_fraction=fake_fraction
    )
    _, table2 = train(aug2, train_config.with_seed(derive_seed(master_seed, "run2.train")))
    records2 = compute_aum(table2, aug2.labels())

    return TwoRunOutcome(
        plan1=plan1,
        plan2=plan2,
        records1=records1,
        records2=records2,
        table1=table1,
        table2=table2,
    )


def apply_action(
    dataset: Dataset, action: FilterAction, dynamics: DynamicsTable | None = None
) -> Dataset:
    if action.kind == "none":
        return dataset
    if action.kind == "sieve":
        return sieve(dataset, action.flagged_ids)
    return flip(dataset, action.flagged_ids, dynamics)


def _format_float(value) -> str:
    return repr(float(value))


def write_flags_csv(rows, path) -> None:
    """Rows of (sample_id, judged_by_run, aum, flagged) sorted by sample id."""
    lines = ["sample_id,judged_by_run,aum,flagged"]
    for sid, run_index, aum, flagged in sorted(rows):
        lines.append(f"{sid},{run_index},{_format_float(aum)},{int(flagged)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_flags_csv(path) -> set[str]:
    """The flagged sample ids recorded in a flags.csv file."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",")[:1] != ["sample_id"]:
        raise ValueError(f"{path} is not a flags csv")
    header = lines[0].split(",")
    flag_col = header.index("flagged")
    flagged = set()
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split(",")
        if fields[flag_col] == "1":
            flagged.add(fields[0])
    return flagged


def _flag_rows(outcome: TwoRunOutcome, flagged: set[str]):
    for record in outcome.governing():
        run_index = 2 if record.sample_id in outcome.plan1.fake_ids else 1
        yield record.sample_id, run_index, record.aum, record.sample_id in flagged


def load_experiment_config(path) -> ExperimentConfig:
    """Read an experiment config JSON file; unknown keys are rejected."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ValueError("experiment config must be a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = obj.keys() - known
    if unknown:
        raise ValueError(f"unknown experiment config keys {sorted(unknown)}")
    missing = {"train_path", "val_path"} - obj.keys()
    if missing:
        raise ValueError(f"experiment config is missing keys {sorted(missing)}")
    if "train" in obj:
        train_obj = obj["train"]
        if not isinstance(train_obj, dict):
            raise ValueError("'train' must be an object of TrainConfig fields")
        train_known = {f.name for f in dataclasses.fields(TrainConfig)}
        train_unknown = train_obj.keys() - train_known
        if train_unknown:
            raise ValueError(f"unknown train config keys {sorted(train_unknown)}")
        if "ngram_orders" in train_obj:
            train_obj = dict(train_obj, ngram_orders=tuple(train_obj["ngram_orders"]))
        obj = dict(obj, train=TrainConfig(**train_obj))
    if "percentiles" in obj and obj["percentiles"] is not None:
        obj = dict(obj, percentiles=tuple(obj["percentiles"]))
    return ExperimentConfig(**obj)


def _load_splits(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    train_ds = load_dataset(config.train_path, config.data_format, split_name="train")
    val_ds = load_dataset(
        config.val_path,
        config.data_format,
        num_classes=train_ds.label_space.num_classes,
        split_name="validation",
    )
    return train_ds, val_ds


def run_experiment(config: ExperimentConfig, out_dir) -> ExperimentResult:
    """Execute one full experiment and write its results directory.

    Stages: optional noise injection, two threshold runs, verdict merge at
    the configured percentile, filtering (sieve/flip/none), retraining from
    scratch, and evaluation on the untouched validation split. Writes
    manifest.json, dynamics logs and run manifests, flags.csv, the filtered
    dataset, mask.json when noise was injected, and result.json.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, val_ds = _load_splits(config)

    sub_seeds = {
        tag: derive_seed(config.master_seed, tag)
        for tag in ("inject", "run1.select", "run1.train", "run2.select", "run2.train", "retrain")
    }

    mask: NoiseMask | None = None
    working = train_ds
    if config.noise_rate > 0:
        working, mask = inject_noise(train_ds, config.noise_rate, sub_seeds["inject"])

    outcome = run_two_run_scheme(
        working, config.train, config.master_seed, fake_fraction=config.fake_fraction
    )
    res1, res2, flagged = outcome.resolve(config.percentile)
    action = FilterAction(
        kind=config.action, flagged_ids=frozenset(flagged), percentile_used=config.percentile
    )
    # Multi-class flipping is opt-in; when enabled, run 1's dynamics pick the new label.
    flip_dynamics = outcome.table1 if config.allow_multiclass_flip else None
    filtered = apply_action(working, action, flip_dynamics)

    retrain_config = config.train.with_seed(sub_seeds["retrain"])
    baseline_model, _ = train(working, retrain_config)
    acc_unfiltered = evaluate(baseline_model, val_ds)
    if config.action == "none":
        acc_filtered = acc_unfiltered
    else:
        filtered_model, _ = train(filtered, retrain_config)
        acc_filtered = evaluate(filtered_model, val_ds)

    noise_report: NoiseReport | None = None
    if mask is not None:
        noise_report = score_noise_identification(flagged, mask, outcome.governing())

    result = ExperimentResult(
        acc_unfiltered=acc_unfiltered,
        acc_filtered=acc_filtered,
        num_flagged=len(flagged),
        num_sieved_or_flipped=0 if config.action == "none" else len(flagged),
        threshold_run1=res1.threshold_value,
        threshold_run2=res2.threshold_value,
        percentile=config.percentile,
        action=config.action,
        master_seed=config.master_seed,
        sub_seeds=sub_seeds,
        noise_report=noise_report,
        train_config=config.train,
    )

    write_dynamics(outcome.table1, out / "dynamics_run1.jsonl")
    write_dynamics(outcome.table2, out / "dynamics_run2.jsonl")
    write_run_manifest(outcome.plan1, res1, out / "run1_manifest.json")
    write_run_manifest(outcome.plan2, res2, out / "run2_manifest.json")
    write_flags_csv(_flag_rows(outcome, flagged), out / "flags.csv")
    filtered_name = f"filtered.{config.filtered_format}"
    save_dataset(filtered, out / filtered_name, config.filtered_format)
    if config.action == "sieve":
        removed = working.replace_samples(removed_by_sieve(working, flagged))
        save_dataset(removed, out / "removed.jsonl", "jsonl")
    if mask is not None:
        write_noise_mask(mask, out / "mask.json")
    (out / "result.json").write_text(
        json.dumps(result.to_json_dict(), indent=2) + "\n", encoding="utf-8"
    )

    manifest = {
        "config": _config_echo(config),
        "sub_seeds": sub_seeds,
        "num_train_samples": len(train_ds),
        "num_val_samples": len(val_ds),
        "files": sorted(p.name for p in out.iterdir() if p.name != "manifest.json"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return result


def _config_echo(config: ExperimentConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo["train"] = dataclasses.asdict(config.train)
    if echo["percentiles"] is not None:
        echo["percentiles"] = list(echo["percentiles"])
    echo["train"]["ngram_orders"] = list(config.train.ngram_orders)
    return echo


def percentile_sweep(
    config: ExperimentConfig, percentiles, out_dir
) -> list[tuple[float, ExperimentResult]]:
    """Rerun only the threshold/filter/retrain stages across percentiles.

    The threshold runs are trained once per seed and shared by every
    percentile; the retrain sub-seed is percentile-independent, so a sweep
    row with one seed matches a standalone ``run_experiment`` at that
    percentile. With ``num_seeds > 1``, seed i uses ``master_seed + i`` and
    sweep.csv reports mean and sample standard deviation per percentile.
    Returns (percentile, result) pairs for the first seed.
    """
    percentiles = [float(p) for p in percentiles]
    if not percentiles:
        raise ValueError("sweep needs at least one percentile")
    for p in percentiles:
        if not 0 < p <= 100:
            raise ValueError(f"percentile must be in (0, 100], got {p}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    per_seed_rows: dict[int, dict[float, ExperimentResult]] = {}
    first_seed_results: list[tuple[float, ExperimentResult]] = []
    for i in range(config.num_seeds):
        master = config.master_seed + i
        train_ds, val_ds = _load_splits(config)
        sub_seeds = {
            tag: derive_seed(master, tag)
            for tag in ("inject", "run1.select", "run1.train", "run2.select", "run2.train", "retrain")
        }
        mask = None
        working = train_ds
        if config.noise_rate > 0:
            working, mask = inject_noise(train_ds, config.noise_rate, sub_seeds["inject"])
        outcome = run_two_run_scheme(
            working, config.train, master, fake_fraction=config.fake_fraction
        )
        retrain_config = config.train.with_seed(sub_seeds["retrain"])
        baseline_model, _ = train(working, retrain_config)
        acc_unfiltered = evaluate(baseline_model, val_ds)

        rows: dict[float, ExperimentResult] = {}
        for p in percentiles:
            res1, res2, flagged = outcome.resolve(p)
            action = FilterAction(
                kind=config.action, flagged_ids=frozenset(flagged), percentile_used=p
            )
            flip_dynamics = outcome.table1 if config.allow_multiclass_flip else None
            filtered = apply_action(working, action, flip_dynamics)
            if config.action == "none":
                acc_filtered = acc_unfiltered
            else:
                model, _ = train(filtered, retrain_config)
                acc_filtered = evaluate(model, val_ds)
            noise_report = None
            if mask is not None:
                noise_report = score_noise_identification(flagged, mask, outcome.governing())
            rows[p] = ExperimentResult(
                acc_unfiltered=acc_unfiltered,
                acc_filtered=acc_filtered,
                num_flagged=len(flagged),
                num_sieved_or_flipped=0 if config.action == "none" else len(flagged),
                threshold_run1=res1.threshold_value,
                threshold_run2=res2.threshold_value,
                percentile=p,
                action=config.action,
                master_seed=master,
                sub_seeds=sub_seeds,
                noise_report=noise_report,
                train_config=config.train,
            )
        per_seed_rows[master] = rows
        if i == 0:
            first_seed_results = [(p, rows[p]) for p in percentiles]

    _write_sweep_csvs(per_seed_rows, percentiles, out)
    manifest = {
        "config": _config_echo(config),
        "percentiles": percentiles,
        "seeds": sorted(per_seed_rows),
        "files": ["sweep.csv", "sweep_runs.csv"],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return first_seed_results


def _write_sweep_csvs(per_seed_rows, percentiles, out: Path) -> None:
    run_lines = [
        "seed,percentile,threshold_run1,threshold_run2,num_flagged,acc_unfiltered,"
        "acc_filtered,precision,recall,f1,roc_auc"
    ]
    for master in sorted(per_seed_rows):
        for p in percentiles:
            r = per_seed_rows[master][p]
            nr = r.noise_report
            metric = lambda v: "" if v is None else _format_float(v)
            run_lines.append(
                ",".join(
                    [
                        str(master),
                        _format_float(p),
                        _format_float(r.threshold_run1),
                        _format_float(r.threshold_run2),
                        str(r.num_flagged),
                        _format_float(r.acc_unfiltered),
                        _format_float(r.acc_filtered),
                        metric(nr.precision if nr else None),
                        metric(nr.recall if nr else None),
                        metric(nr.f1 if nr else None),
                        metric(nr.roc_auc if nr else None),
                    ]
                )
            )
    (out / "sweep_runs.csv").write_text("\n".join(run_lines) + "\n", encoding="utf-8")

    lines = [
        "percentile,num_seeds,acc_unfiltered,acc_filtered,acc_filtered_std,num_flagged,recall"
    ]
    seeds = sorted(per_seed_rows)
    for p in percentiles:
        results = [per_seed_rows[s][p] for s in seeds]
        accs_f = np.array([r.acc_filtered for r in results])
        accs_u = np.array([r.acc_unfiltered for r in results])
        flags = np.array([r.num_flagged for r in results], dtype=float)
        recalls = [
            r.noise_report.recall
            for r in results
            if r.noise_report is not None and r.noise_report.recall is not None
        ]
        std = _format_float(accs_f.std(ddof=1)) if len(seeds) > 1 else ""
        lines.append(
            ",".join(
                [
                    _format_float(p),
                    str(len(seeds)),
                    _format_float(accs_u.mean()),
                    _format_float(accs_f.mean()),
                    std,
                    _format_float(flags.mean()),
                    _format_float(float(np.mean(recalls))) if recalls else "",
                ]
            )
        )
    (out / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
