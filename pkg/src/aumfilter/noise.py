"""Synthetic label noise, noise-identification scoring, and corpus generators.

Noise injection flips the labels of uniformly sampled records and keeps a
ground-truth mask so any flagging method can be scored against it. The
clustered generator builds groups of lexically similar texts with one
majority ("dominant") label per group, the regime where margin-based
filtering starts flagging correctly labeled minority samples.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .corpus import Dataset, LabeledSample, LabelSpace
from .dynamics import AumRecord


@dataclass(frozen=True)
class NoiseMask:
    """Ground truth of which sample ids had their labels flipped."""

    flipped_ids: frozenset[str]
    rate: float
    seed: int


@dataclass(frozen=True)
class ClusterSpec:
    """Knobs for the clustered generator.

    ``vocab_overlap`` is the share of each text drawn from the cluster's
    shared word pool; the rest comes from a global filler vocabulary.
    ``dominant_fraction`` must exceed 0.5 so each cluster has a unique
    majority class.
    """

    num_clusters: int = 10
    cluster_size: int = 12
    dominant_fraction: float = 0.75
    vocab_overlap: float = 0.9
    seed: int = 0


@dataclass
class NoiseReport:
    precision: float | None
    recall: float | None
    f1: float | None
    roc_auc: float | None
    mean_aum_noise: float | None
    mean_aum_clean: float | None
    num_flagged: int
    num_noise: int

    def to_json_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "roc_auc": self.roc_auc,
            "mean_aum_noise": self.mean_aum_noise,
            "mean_aum_clean": self.mean_aum_clean,
            "num_flagged": self.num_flagged,
            "num_noise": self.num_noise,
        }


@dataclass(frozen=True)
class ClusterReportRow:
    cluster_id: str
    dominant_label: int
    num_dominant: int
    num_non_dominant: int
    mean_aum_dominant: float
    mean_aum_non_dominant: float | None
    flagged_dominant: int
    flagged_non_dominant: int


def inject_noise(
    dataset: Dataset, rate: float, seed: int, *, stratified: bool = False
) -> tuple[Dataset, NoiseMask]:
    """Flip the labels of ``floor(rate * N)`` uniformly chosen samples.

    Binary datasets flip to the other class; with more classes the new label
    is drawn uniformly from the remaining ones. Flipped samples get the
    ``noise_injected`` flag; ``original_label`` is left untouched. With
    ``stratified`` the draw happens per class (``floor(rate * N_class)``
    each), which can change the total count.
    """
    if not 0 <= rate < 1:
        raise ValueError(f"noise rate must be in [0, 1), got {rate}")
    if dataset.label_space.fake_class_active:
        raise ValueError("refusing to inject noise into an augmented fake-class view")
    c = dataset.label_space.num_classes
    n = len(dataset)
    rng = np.random.default_rng(seed)

    if stratified:
        positions: list[int] = []
        for label in range(c):
            pool = [i for i, s in enumerate(dataset.samples) if s.label == label]
            count = math.floor(rate * len(pool))
            if count:
                picked = rng.choice(len(pool), size=count, replace=False)
                positions.extend(pool[i] for i in picked)
    else:
        count = math.floor(rate * n)
        positions = list(rng.choice(n, size=count, replace=False)) if count else []

    flipped: set[str] = set()
    new_samples = list(dataset.samples)
    for pos in sorted(positions):
        s = new_samples[pos]
        if c == 2:
            new_label = 1 - s.label
        else:
            candidates = [label for label in range(c) if label != s.label]
            new_label = candidates[int(rng.integers(len(candidates)))]
        new_samples[pos] = s.with_label(new_label, "noise_injected")
        flipped.add(s.id)

    mask = NoiseMask(flipped_ids=frozenset(flipped), rate=rate, seed=seed)
    return dataset.replace_samples(new_samples), mask


def score_noise_identification(
    flagged: Iterable[str], mask: NoiseMask, aums: Sequence[AumRecord]
) -> NoiseReport:
    """Precision/recall/F1 of the flag set against the mask, plus rank AUC.

    The ROC-AUC treats the negated AUM as a noise score with mask membership
    as the positive class; ties get averaged ranks.
    """
    flagged = set(flagged)
    noise_ids = mask.flipped_ids
    tp = len(flagged & noise_ids)

    if flagged:
        precision: float | None = tp / len(flagged)
    else:
        precision = 1.0 if not noise_ids else None
    recall = tp / len(noise_ids) if noise_ids else None
    if precision is None or recall is None:
        f1 = 0.0 if recall == 0.0 else None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)

    noise_aums = [r.aum for r in aums if r.sample_id in noise_ids]
    clean_aums = [r.aum for r in aums if r.sample_id not in noise_ids]
    roc_auc = None
    if noise_aums and clean_aums:
        scores = np.array([-r.aum for r in aums])
        positive = np.array([r.sample_id in noise_ids for r in aums])
        ranks = rankdata(scores)
        n_pos = int(positive.sum())
        n_neg = len(aums) - n_pos
        roc_auc = float(
            (ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
        )

    return NoiseReport(
        precision=precision,
        recall=recall,
        f1=f1,
        roc_auc=roc_auc,
        mean_aum_noise=float(np.mean(noise_aums)) if noise_aums else None,
        mean_aum_clean=float(np.mean(clean_aums)) if clean_aums else None,
        num_flagged=len(flagged),
        num_noise=len(noise_ids),
    )


def generate_separable_dataset(
    num_samples: int,
    *,
    num_classes: int = 2,
    signal_words: int = 6,
    filler_words: int = 6,
    class_vocab_size: int = 40,
    filler_vocab_size: int = 3000,
    seed: int = 0,
    split_name: str = "train",
    id_prefix: str = "s",
) -> Dataset:
    """Linearly separable synthetic corpus with balanced classes.

    Each text mixes words from its class's private vocabulary with words from
    a large shared filler vocabulary. The class words make the task learnable;
    the rare filler words give a high-capacity model room to memorize
    individual samples.
    """
    if num_samples < num_classes:
        raise ValueError("need at least one sample per class")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(num_samples):
        label = i % num_classes
        words = [f"c{label}w{rng.integers(class_vocab_size)}" for _ in range(signal_words)]
        words += [f"g{rng.integers(filler_vocab_size)}" for _ in range(filler_words)]
        order = rng.permutation(len(words))
        text = " ".join(words[j] for j in order)
        samples.append(
            LabeledSample(id=f"{id_prefix}{i:05d}", text=text, label=label, original_label=label)
        )
    return Dataset(
        samples=tuple(samples),
        label_space=LabelSpace(num_classes=num_classes),
        split_name=split_name,
    )


def generate_clustered_dataset(
    spec: ClusterSpec,
    *,
    words_per_text: int = 10,
    pool_size: int = 8,
    filler_vocab_size: int = 200,
    split_name: str = "train",
) -> Dataset:
    """Binary corpus of lexically coherent clusters with a majority label each.

    Every cluster shares a small word pool; texts draw
    ``round(words_per_text * vocab_overlap)`` words from it and the rest from
    a global filler vocabulary, so members of one cluster look alike while
    their labels disagree. Dominant labels alternate across clusters to keep
    the corpus balanced. Cluster membership is recorded on each sample.
    """
    if not 0.5 < spec.dominant_fraction <= 1.0:
        raise ValueError(
            f"dominant_fraction must be in (0.5, 1], got {spec.dominant_fraction}"
        )
    if not 0.0 <= spec.vocab_overlap <= 1.0:
        raise ValueError(f"vocab_overlap must be in [0, 1], got {spec.vocab_overlap}")
    if spec.num_clusters < 1 or spec.cluster_size < 1:
        raise ValueError("num_clusters and cluster_size must be positive")
    num_dominant = round(spec.cluster_size * spec.dominant_fraction)
    if num_dominant < 1:
        raise ValueError("cluster_size * dominant_fraction must be at least 1")
    if num_dominant <= spec.cluster_size - num_dominant:
        raise ValueError("dominant members must outnumber non-dominant members")

    rng = np.random.default_rng(spec.seed)
    pool_draws = round(words_per_text * spec.vocab_overlap)
    samples = []
    for ci in range(spec.num_clusters):
        cluster_id = f"k{ci:02d}"
        dominant = ci % 2
        pool = [f"{cluster_id}t{j}" for j in range(pool_size)]
        for m in range(spec.cluster_size):
            label = dominant if m < num_dominant else 1 - dominant
            words = [pool[int(rng.integers(pool_size))] for _ in range(pool_draws)]
            words += [
                f"g{rng.integers(filler_vocab_size)}"
                for _ in range(words_per_text - pool_draws)
            ]
            order = rng.permutation(len(words))
            text = " ".join(words[j] for j in order)
            samples.append(
                LabeledSample(
                    id=f"{cluster_id}s{m:02d}",
                    text=text,
                    label=label,
                    original_label=label,
                    cluster_id=cluster_id,
                )
            )
    return Dataset(
        samples=tuple(samples),
        label_space=LabelSpace(num_classes=2),
        split_name=split_name,
    )


def dominant_class_report(
    dataset: Dataset, aums: Sequence[AumRecord], flagged: Iterable[str]
) -> list[ClusterReportRow]:
    """Per-cluster AUM means and flag counts, split by dominant-class membership.

    The dominant label of a cluster is its majority label (ties break toward
    the lower index). Every scored sample must carry a cluster id.
    """
    flagged = set(flagged)
    aum_map = {r.sample_id: r.aum for r in aums}
    clusters: dict[str, list[LabeledSample]] = {}
    for sid in sorted(aum_map):
        if sid not in dataset.by_id:
            raise ValueError(f"AUM record for unknown sample {sid!r}")
        s = dataset.by_id[sid]
        if s.cluster_id is None:
            raise ValueError(f"sample {sid!r} has no cluster id")
        clusters.setdefault(s.cluster_id, []).append(s)

    rows = []
    for cluster_id in sorted(clusters):
        members = clusters[cluster_id]
        counts: dict[int, int] = {}
        for s in members:
            counts[s.label] = counts.get(s.label, 0) + 1
        dominant = min(
            counts, key=lambda label: (-counts[label], label)
        )
        dom = [s for s in members if s.label == dominant]
        non = [s for s in members if s.label != dominant]
        rows.append(
            ClusterReportRow(
                cluster_id=cluster_id,
                dominant_label=dominant,
                num_dominant=len(dom),
                num_non_dominant=len(non),
                mean_aum_dominant=float(np.mean([aum_map[s.id] for s in dom])),
                mean_aum_non_dominant=(
                    float(np.mean([aum_map[s.id] for s in non])) if non else None
                ),
                flagged_dominant=sum(1 for s in dom if s.id in flagged),
                flagged_non_dominant=sum(1 for s in non if s.id in flagged),
            )
        )
    return rows


def write_noise_mask(mask: NoiseMask, path) -> None:
    obj = {"seed": mask.seed, "rate": mask.rate, "flipped_ids": sorted(mask.flipped_ids)}
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def read_noise_mask(path) -> NoiseMask:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    missing = {"seed", "rate", "flipped_ids"} - obj.keys()
    if missing:
        raise ValueError(f"noise mask {path} is missing keys {sorted(missing)}")
    return NoiseMask(
        flipped_ids=frozenset(obj["flipped_ids"]), rate=obj["rate"], seed=obj["seed"]
    )
