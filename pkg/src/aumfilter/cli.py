"""Command-line surface for the margin-based filtering toolkit.

Every subcommand is a thin wrapper over one library operation. Diagnostics go
to stderr; data goes to files (or stdout where noted). Exit codes: 0 success,
1 contract or usage errors, 2 I/O errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .corpus import load_dataset, save_dataset
from .dynamics import compute_aum, compute_datamap, ingest_dynamics, write_dynamics
from .noise import (
    ClusterSpec,
    dominant_class_report,
    generate_clustered_dataset,
    generate_separable_dataset,
    inject_noise,
    read_noise_mask,
    write_noise_mask,
)
from .pipeline import (
    load_experiment_config,
    percentile_sweep,
    read_flags_csv,
    run_experiment,
    sieve,
    flip,
    removed_by_sieve,
    write_flags_csv,
)
from .reports import (
    HistogramSpec,
    emit_aum_histogram,
    emit_datamap,
    read_aum_csv,
    render_datamap_png,
    render_histogram_png,
    write_aum_csv,
    write_aum_detail_csv,
    write_cluster_report_csv,
    write_datamap_csv,
    write_histogram_csv,
)
from .thresholds import (
    ThresholdRunPlan,
    build_threshold_run,
    compute_threshold,
    flag_mislabelled,
    read_run_manifest,
    resolve_threshold,
    write_run_manifest,
)
from .trainer import TrainConfig, save_model, train


def _log(message: str) -> None:
    print(message, file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    # Usage errors (unknown subcommand or flag) exit 1, not argparse's 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_cfg(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    obj = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ValueError(f"config file {args.config} must hold a JSON object")
    return obj


def _pick(flag_value, cfg: dict, key: str, default):
    if flag_value is not None:
        return flag_value
    return cfg.get(key, default)


def _train_config(args, cfg: dict) -> TrainConfig:
    section = cfg.get("train", cfg)
    if not isinstance(section, dict):
        raise ValueError("'train' config section must be an object")
    orders = _pick(getattr(args, "ngram_orders", None), section, "ngram_orders", (1, 2))
    if isinstance(orders, str):
        orders = tuple(int(x) for x in orders.split(",") if x)
    return TrainConfig(
        epochs=int(_pick(getattr(args, "epochs", None), section, "epochs", 20)),
        learning_rate=float(
            _pick(getattr(args, "learning_rate", None), section, "learning_rate", 0.1)
        ),
        weight_decay=float(
            _pick(getattr(args, "weight_decay", None), section, "weight_decay", 1e-4)
        ),
        batch_size=int(_pick(getattr(args, "batch_size", None), section, "batch_size", 32)),
        seed=int(_pick(getattr(args, "seed", None), section, "seed", 0)),
        ngram_orders=tuple(orders),
        feature_dim=int(
            _pick(getattr(args, "feature_dim", None), section, "feature_dim", 2**18)
        ),
    )


def cmd_inject_noise(args) -> int:
    cfg = _load_cfg(args)
    seed = int(_pick(args.seed, cfg, "seed", 0))
    rate = float(_pick(args.rate, cfg, "rate", None) or 0.0)
    dataset = load_dataset(args.data, args.format)
    noisy, mask = inject_noise(dataset, rate, seed, stratified=args.stratified)
    save_dataset(noisy, args.out)
    mask_path = args.mask_out or Path(args.out).with_suffix(".mask.json")
    write_noise_mask(mask, mask_path)
    _log(f"flipped {len(mask.flipped_ids)} of {len(dataset)} labels; mask at {mask_path}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    dataset = load_dataset(args.data, args.format)
    train_config = _train_config(args, cfg)
    model, table = train(dataset, train_config)
    write_dynamics(table, args.out)
    if args.model_out:
        save_model(model, args.model_out)
    _log(
        f"trained {train_config.epochs} epochs on {len(dataset)} samples; "
        f"dynamics at {args.out}"
    )
    return 0


def cmd_ingest(args) -> int:
    table = ingest_dynamics(args.dynamics, allow_ragged=args.allow_ragged)
    summary = {
        "num_samples": len(table),
        "num_epochs": table.num_epochs,
        "logit_len": table.logit_len,
        "num_ragged": len(table.ragged_ids),
    }
    text = json.dumps(summary, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_aum(args) -> int:
    table = ingest_dynamics(args.dynamics, allow_ragged=args.allow_ragged)
    labels = load_dataset(args.labels).labels()
    records = compute_aum(table, labels)
    write_aum_csv(records, args.out)
    _log(f"wrote {len(records)} AUM scores to {args.out}")
    return 0


def cmd_datamap(args) -> int:
    table = ingest_dynamics(args.dynamics, allow_ragged=args.allow_ragged)
    labels = load_dataset(args.labels).labels()
    records = compute_datamap(table, labels)
    aums = compute_aum(table, labels)
    flagged = read_flags_csv(args.flags) if args.flags else set()
    points = emit_datamap(records, aums, flagged)
    write_datamap_csv(points, args.out)
    _log(f"wrote {len(points)} data-map rows to {args.out}")
    return 0


def _plan_from_manifest(obj) -> ThresholdRunPlan:
    return ThresholdRunPlan(
        run_index=obj["run_index"],
        fake_ids=frozenset(obj["fake_ids"]),
        per_class_counts={},
        seed=obj["seed"],
    )


def cmd_threshold_run(args) -> int:
    cfg = _load_cfg(args)
    dataset = load_dataset(args.data, args.format)
    seed = int(_pick(args.seed, cfg, "seed", 0))
    percentile = float(_pick(args.percentile, cfg, "percentile", 99.0))
    fraction = _pick(args.fake_fraction, cfg, "fake_fraction", None)
    prior = None
    if args.prior:
        prior = _plan_from_manifest(read_run_manifest(args.prior))
    augmented, plan = build_threshold_run(
        dataset,
        args.run_index,
        prior,
        seed,
        fake_fraction=float(fraction) if fraction is not None else None,
    )
    train_config = _train_config(args, cfg)
    _, table = train(augmented, train_config)
    records = compute_aum(table, augmented.labels())
    result = resolve_threshold(records, plan, percentile)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    idx = args.run_index
    write_dynamics(table, out / f"dynamics_run{idx}.jsonl")
    write_run_manifest(plan, result, out / f"run{idx}_manifest.json")
    write_aum_detail_csv(records, out / f"aum_run{idx}.csv")
    _log(
        f"run {idx}: {len(plan.fake_ids)} fake samples, "
        f"threshold {result.threshold_value:.6f} at percentile {percentile}"
    )
    return 0


def cmd_flag(args) -> int:
    cfg = _load_cfg(args)
    run_dir = Path(args.run_dir)
    manifest1 = read_run_manifest(run_dir / "run1_manifest.json")
    aums1 = read_aum_csv(run_dir / "aum_run1.csv")
    percentile = float(_pick(args.percentile, cfg, "percentile", manifest1["percentile"]))
    plan1 = _plan_from_manifest(manifest1)
    fake_aums1 = [aums1[sid] for sid in sorted(plan1.fake_ids)]
    threshold1 = compute_threshold(fake_aums1, percentile)

    manifest2_path = run_dir / "run2_manifest.json"
    rows = []
    if manifest2_path.exists():
        manifest2 = read_run_manifest(manifest2_path)
        aums2 = read_aum_csv(run_dir / "aum_run2.csv")
        plan2 = _plan_from_manifest(manifest2)
        fake_aums2 = [aums2[sid] for sid in sorted(plan2.fake_ids)]
        threshold2 = compute_threshold(fake_aums2, percentile)
        for sid in sorted(aums1):
            if sid in plan1.fake_ids:
                rows.append((sid, 2, aums2[sid], aums2[sid] < threshold2))
            else:
                rows.append((sid, 1, aums1[sid], aums1[sid] < threshold1))
    else:
        _log("run 2 artifacts not found; flagging from run 1 only (its fake samples get no verdict)")
        for sid in sorted(aums1):
            if sid not in plan1.fake_ids:
                rows.append((sid, 1, aums1[sid], aums1[sid] < threshold1))
    write_flags_csv(rows, args.out)
    flagged = sum(1 for r in rows if r[3])
    _log(f"flagged {flagged} of {len(rows)} samples at percentile {percentile}")
    return 0


def cmd_sieve(args) -> int:
    dataset = load_dataset(args.data, args.format)
    flagged = read_flags_csv(args.flags)
    kept = sieve(dataset, flagged & dataset.id_set)
    save_dataset(kept, args.out)
    if args.removed_out:
        removed = dataset.replace_samples(removed_by_sieve(dataset, flagged & dataset.id_set))
        save_dataset(removed, args.removed_out)
    _log(f"kept {len(kept)} of {len(dataset)} samples")
    return 0


def cmd_flip(args) -> int:
    dataset = load_dataset(args.data, args.format)
    flagged = read_flags_csv(args.flags)
    dynamics = ingest_dynamics(args.dynamics) if args.dynamics else None
    flipped = flip(dataset, flagged & dataset.id_set, dynamics)
    save_dataset(flipped, args.out)
    _log(f"flipped {len(flagged & dataset.id_set)} of {len(dataset)} labels")
    return 0


def cmd_run_experiment(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=int(args.seed))
    out_dir = args.out or config.out_dir
    if out_dir is None:
        raise ValueError("pass --out or set out_dir in the experiment config")
    result = run_experiment(config, out_dir)
    _log(
        f"action={result.action} percentile={result.percentile} "
        f"flagged={result.num_flagged} "
        f"acc_unfiltered={result.acc_unfiltered:.4f} acc_filtered={result.acc_filtered:.4f}"
    )
    return 0


def cmd_sweep(args) -> int:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=int(args.seed))
    if args.num_seeds is not None:
        config = dataclasses.replace(config, num_seeds=int(args.num_seeds))
    percentiles = args.percentiles or config.percentiles
    if not percentiles:
        raise ValueError("pass --percentiles or set them in the experiment config")
    if isinstance(percentiles, str):
        percentiles = tuple(float(x) for x in percentiles.split(",") if x)
    out_dir = args.out or config.out_dir
    if out_dir is None:
        raise ValueError("pass --out or set out_dir in the experiment config")
    rows = percentile_sweep(config, percentiles, out_dir)
    for p, result in rows:
        _log(
            f"percentile={p} flagged={result.num_flagged} "
            f"acc_filtered={result.acc_filtered:.4f}"
        )
    return 0


def cmd_synth_clusters(args) -> int:
    cfg = _load_cfg(args)
    spec = ClusterSpec(
        num_clusters=int(_pick(args.clusters, cfg, "num_clusters", 10)),
        cluster_size=int(_pick(args.cluster_size, cfg, "cluster_size", 12)),
        dominant_fraction=float(_pick(args.dominant_fraction, cfg, "dominant_fraction", 0.75)),
        vocab_overlap=float(_pick(args.vocab_overlap, cfg, "vocab_overlap", 0.9)),
        seed=int(_pick(args.seed, cfg, "seed", 0)),
    )
    dataset = generate_clustered_dataset(spec)
    save_dataset(dataset, args.out, "jsonl")
    _log(f"wrote {len(dataset)} samples in {spec.num_clusters} clusters to {args.out}")
    return 0


def cmd_synth_separable(args) -> int:
    cfg = _load_cfg(args)
    dataset = generate_separable_dataset(
        int(_pick(args.num_samples, cfg, "num_samples", 2000)),
        num_classes=int(_pick(args.classes, cfg, "num_classes", 2)),
        seed=int(_pick(args.seed, cfg, "seed", 0)),
        id_prefix=args.id_prefix,
    )
    save_dataset(dataset, args.out)
    _log(f"wrote {len(dataset)} separable samples to {args.out}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_cfg(args)
    table = ingest_dynamics(args.dynamics, allow_ragged=args.allow_ragged)
    dataset = load_dataset(args.labels)
    labels = dataset.labels()
    aums = compute_aum(table, labels)
    datamap = compute_datamap(table, labels)
    mask = read_noise_mask(args.mask) if args.mask else None
    flagged = read_flags_csv(args.flags) if args.flags else set()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = HistogramSpec(bin_count=int(_pick(args.bins, cfg, "bins", 30)))
    hist = emit_aum_histogram(aums, mask, spec)
    write_histogram_csv(hist, out / "aum_histogram.csv")
    render_histogram_png(hist, out / "aum_histogram.png")
    points = emit_datamap(datamap, aums, flagged)
    write_datamap_csv(points, out / "datamap.csv")
    render_datamap_png(points, out / "datamap.png")
    written = ["aum_histogram.csv", "aum_histogram.png", "datamap.csv", "datamap.png"]
    if any(s.cluster_id is not None for s in dataset.samples):
        rows = dominant_class_report(dataset, aums, flagged)
        write_cluster_report_csv(rows, out / "clusters.csv")
        written.append("clusters.csv")
    _log(f"wrote {', '.join(written)} to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aumfilter", description=__doc__)
    parser.add_argument("--version", action="version", version=f"aumfilter {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for any randomness")
    common.add_argument("--config", default=None, help="JSON file supplying option defaults")

    train_flags = argparse.ArgumentParser(add_help=False)
    train_flags.add_argument("--epochs", type=int, default=None)
    train_flags.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    train_flags.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    train_flags.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    train_flags.add_argument("--feature-dim", type=int, default=None, dest="feature_dim")
    train_flags.add_argument(
        "--ngram-orders", default=None, dest="ngram_orders", help="comma list, e.g. 1,2"
    )

    p = sub.add_parser("inject-noise", parents=[common], help="flip labels uniformly at random")
    p.add_argument("--data", required=True)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--format", default=None, choices=("tsv", "jsonl"))
    p.add_argument("--out", required=True)
    p.add_argument("--mask-out", default=None, dest="mask_out")
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser(
        "train", parents=[common, train_flags], help="train and record per-epoch logits"
    )
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("tsv", "jsonl"))
    p.add_argument("--out", required=True, help="dynamics-log JSONL destination")
    p.add_argument("--model-out", default=None, dest="model_out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ingest", parents=[common], help="validate a dynamics log")
    p.add_argument("--dynamics", required=True)
    p.add_argument("--allow-ragged", action="store_true", dest="allow_ragged")
    p.add_argument("--out", default=None, help="summary JSON (stdout when omitted)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("aum", parents=[common], help="AUM scores from a dynamics log")
    p.add_argument("--dynamics", required=True)
    p.add_argument("--labels", required=True, help="dataset supplying the labels")
    p.add_argument("--allow-ragged", action="store_true", dest="allow_ragged")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aum)

    p = sub.add_parser("datamap", parents=[common], help="confidence/variability statistics")
    p.add_argument("--dynamics", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--flags", default=None, help="flags.csv marking flagged samples")
    p.add_argument("--allow-ragged", action="store_true", dest="allow_ragged")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datamap)

    p = sub.add_parser(
        "threshold-run",
        parents=[common, train_flags],
        help="build and train one fake-class threshold run",
    )
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("tsv", "jsonl"))
    p.add_argument("--run-index", type=int, required=True, choices=(1, 2), dest="run_index")
    p.add_argument("--prior", default=None, help="run 1 manifest (required for run 2)")
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--fake-fraction", type=float, default=None, dest="fake_fraction")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_threshold_run)

    p = sub.add_parser("flag", parents=[common], help="flag samples from saved threshold runs")
    p.add_argument("--run-dir", required=True, dest="run_dir")
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flag)

    p = sub.add_parser("sieve", parents=[common], help="drop flagged samples")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("tsv", "jsonl"))
    p.add_argument("--flags", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--removed-out", default=None, dest="removed_out")
    p.set_defaults(func=cmd_sieve)

    p = sub.add_parser("flip", parents=[common], help="rectify flagged samples' labels")
    p.add_argument("--data", required=True)
    p.add_argument("--format", default=None, choices=("tsv", "jsonl"))
    p.add_argument("--flags", required=True)
    p.add_argument("--dynamics", default=None, help="needed for non-binary label spaces")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flip)

    p = sub.add_parser(
        "run-experiment", parents=[common], help="inject, threshold, filter, retrain, evaluate"
    )
    p.add_argument("--out", default=None, help="results directory")
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("sweep", parents=[common], help="rerun filtering across percentiles")
    p.add_argument("--percentiles", default=None, help="comma list, e.g. 1,10,50,90")
    p.add_argument("--num-seeds", type=int, default=None, dest="num_seeds")
    p.add_argument("--out", default=None, help="results directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser(
        "synth-clusters", parents=[common], help="generate a clustered synthetic corpus"
    )
    p.add_argument("--clusters", type=int, default=None)
    p.add_argument("--cluster-size", type=int, default=None, dest="cluster_size")
    p.add_argument(
        "--dominant-fraction", type=float, default=None, dest="dominant_fraction"
    )
    p.add_argument("--vocab-overlap", type=float, default=None, dest="vocab_overlap")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_clusters)

    p = sub.add_parser(
        "synth-separable", parents=[common], help="generate a separable synthetic corpus"
    )
    p.add_argument("--num-samples", type=int, default=None, dest="num_samples")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--id-prefix", default="s", dest="id_prefix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_separable)

    p = sub.add_parser(
        "report", parents=[common], help="histogram, data map, and cluster tables plus figures"
    )
    p.add_argument("--dynamics", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--mask", default=None, help="noise mask JSON")
    p.add_argument("--flags", default=None, help="flags.csv")
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--allow-ragged", action="store_true", dest="allow_ragged")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors itself
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args) or 0
    except OSError as exc:
        _log(f"aumfilter: I/O error: {exc}")
        return 2
    except (ValueError, KeyError, RuntimeError) as exc:
        _log(f"aumfilter: error: {exc}")
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
