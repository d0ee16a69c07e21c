"""Deterministic bag-of-n-grams linear softmax classifier trained with SGD.

Features are word n-gram counts hashed into a fixed-width space with
blake2s, so feature ids are stable across processes and platforms. Training
records one logit vector per sample at the end of every epoch; with a fixed
seed the resulting model and dynamics table are bit-identical across runs.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .corpus import Dataset, LabelSpace
from .dynamics import DynamicsTable


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.1
    weight_decay: float = 1e-4
    batch_size: int = 32
    seed: int = 0
    ngram_orders: tuple[int, ...] = (1, 2)
    feature_dim: int = 2**18

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        orders = tuple(sorted(set(self.ngram_orders)))
        if not orders or not set(orders) <= {1, 2}:
            raise ValueError(f"ngram_orders must be a non-empty subset of {{1, 2}}, got {self.ngram_orders}")
        object.__setattr__(self, "ngram_orders", orders)
        d = self.feature_dim
        if d < 2 or d & (d - 1):
            raise ValueError(f"feature_dim must be a power of two >= 2, got {d}")

    def with_seed(self, seed: int) -> TrainConfig:
        return replace(self, seed=seed)


@dataclass(eq=False)
class FeatureVector:
    """Sparse non-negative counts; ``indices`` strictly increasing."""

    indices: np.ndarray
    values: np.ndarray


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray  # (effective classes, feature_dim)
    bias: np.ndarray
    feature_dim: int
    label_space: LabelSpace
    ngram_orders: tuple[int, ...]

    @property
    def num_outputs(self) -> int:
        return self.weights.shape[0]

    def logits(self, features: sp.csr_matrix) -> np.ndarray:
        return np.asarray(features @ self.weights.T) + self.bias


def hash_ngram(gram: str, dim: int) -> int:
    """Map an n-gram (tokens joined by single spaces) to [0, dim)."""
    digest = hashlib.blake2s(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def featurize(text: str, config: TrainConfig) -> FeatureVector:
    """Lowercase, split on whitespace, count hashed word n-grams."""
    tokens = text.lower().split()
    counts: dict[int, float] = {}
    for order in config.ngram_orders:
        for i in range(len(tokens) - order + 1):
            idx = hash_ngram(" ".join(tokens[i : i + order]), config.feature_dim)
            counts[idx] = counts.get(idx, 0.0) + 1.0
    if not counts:
        return FeatureVector(np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64))
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64)
    return FeatureVector(indices, values)


def feature_matrix(texts, config: TrainConfig) -> sp.csr_matrix:
    """Stack featurized texts into one (n_texts, feature_dim) CSR matrix."""
    indptr = [0]
    indices: list[np.ndarray] = []
    data: list[np.ndarray] = []
    for text in texts:
        fv = featurize(text, config)
        indices.append(fv.indices)
        data.append(fv.values)
        indptr.append(indptr[-1] + len(fv.indices))
    if indices:
        all_indices = np.concatenate(indices)
        all_data = np.concatenate(data)
    else:
        all_indices = np.empty(0, dtype=np.int64)
        all_data = np.empty(0, dtype=np.float64)
    return sp.csr_matrix(
        (all_data, all_indices, np.array(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, config.feature_dim),
    )


def init_model(label_space: LabelSpace, config: TrainConfig) -> LinearModel:
    """Zero-initialized model; every input maps to an all-zero logit vector."""
    k = label_space.effective_num_classes
    return LinearModel(
        weights=np.zeros((k, config.feature_dim)),
        bias=np.zeros(k),
        feature_dim=config.feature_dim,
        label_space=label_space,
        ngram_orders=config.ngram_orders,
    )


def _loss_and_grad(weights, bias, features: sp.csr_matrix, y: np.ndarray, weight_decay: float):
    """Mean softmax cross-entropy plus L2 penalty on the weights (not bias)."""
    n = features.shape[0]
    z = np.asarray(features @ weights.T) + bias
    z_shift = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z_shift).sum(axis=1))
    data_loss = float(np.mean(log_norm - z_shift[np.arange(n), y]))
    loss = data_loss + 0.5 * weight_decay * float(np.sum(weights * weights))

    probs = np.exp(z_shift)
    probs /= probs.sum(axis=1, keepdims=True)
    g = probs
    g[np.arange(n), y] -= 1.0
    g /= n
    grad_w = np.asarray(features.T @ g).T + weight_decay * weights
    grad_b = g.sum(axis=0)
    return loss, grad_w, grad_b


def train(dataset: Dataset, config: TrainConfig) -> tuple[LinearModel, DynamicsTable]:
    """Mini-batch SGD over softmax cross-entropy with L2 weight decay.

    Shuffles per epoch from the seed and records one logit vector per sample
    at the end of each epoch. Single-threaded and deterministic: the same
    dataset, config, and seed reproduce the model and table exactly.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    k = dataset.label_space.effective_num_classes
    y = np.array([s.label for s in dataset.samples], dtype=np.int64)
    if y.min() < 0 or y.max() >= k:
        bad = dataset.samples[int(np.argmax((y < 0) | (y >= k)))]
        raise ValueError(f"sample {bad.id!r}: label {bad.label} out of range for {k} classes")

    features = feature_matrix((s.text for s in dataset.samples), config)
    n = features.shape[0]
    rng = np.random.default_rng(config.seed)
    weights = np.zeros((k, config.feature_dim))
    bias = np.zeros(k)
    lr = config.learning_rate

    epoch_logits = np.empty((config.epochs, n, k))
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grad_w, grad_b = _loss_and_grad(
                weights, bias, features[batch], y[batch], config.weight_decay
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch}; lower the learning rate"
                )
            weights -= lr * grad_w
            bias -= lr * grad_b
        epoch_logits[epoch] = np.asarray(features @ weights.T) + bias

    entries = {
        s.id: epoch_logits[:, i, :].copy() for i, s in enumerate(dataset.samples)
    }
    table = DynamicsTable(entries=entries, num_epochs=config.epochs, logit_len=k)
    model = LinearModel(
        weights=weights,
        bias=bias,
        feature_dim=config.feature_dim,
        label_space=dataset.label_space,
        ngram_orders=config.ngram_orders,
    )
    return model, table


def _inference_config(model: LinearModel) -> TrainConfig:
    return TrainConfig(feature_dim=model.feature_dim, ngram_orders=model.ngram_orders)


def evaluate(model: LinearModel, dataset: Dataset) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Ties break toward the lowest class index. When the model carries a fake
    class but the dataset does not, the fake logit is ignored.
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    k = dataset.label_space.effective_num_classes
    if k > model.num_outputs:
        raise ValueError(
            f"dataset has {k} effective classes but the model only outputs {model.num_outputs}"
        )
    features = feature_matrix((s.text for s in dataset.samples), _inference_config(model))
    z = model.logits(features)[:, :k]
    preds = np.argmax(z, axis=1)
    y = np.array([s.label for s in dataset.samples])
    return float(np.mean(preds == y))


def mean_loss(model: LinearModel, dataset: Dataset) -> float:
    """Mean softmax cross-entropy of the dataset under the model (no penalty)."""
    if len(dataset) == 0:
        raise ValueError("cannot compute the loss of an empty dataset")
    features = feature_matrix((s.text for s in dataset.samples), _inference_config(model))
    y = np.array([s.label for s in dataset.samples])
    loss, _, _ = _loss_and_grad(model.weights, model.bias, features, y, 0.0)
    return loss


def gradient_check(
    model: LinearModel,
    features_batch,
    labels,
    *,
    weight_decay: float = 0.0,
    step: float = 1e-5,
    min_checks: int = 50,
    seed: int = 0,
    tolerance: float = 1e-4,
) -> float:
    """Compare the analytic gradient against central finite differences.

    Checks all bias entries plus randomly chosen weight coordinates among the
    batch's active features, at least ``min_checks`` coordinates in total, and
    returns the maximum relative error. ``tolerance`` is the caller's pass
    bar and is echoed in the failure hint only.
    """
    if len(features_batch) == 0:
        raise ValueError("gradient check needs a non-empty batch")
    indptr = [0]
    idx_parts, val_parts = [], []
    for fv in features_batch:
        idx_parts.append(fv.indices)
        val_parts.append(fv.values)
        indptr.append(indptr[-1] + len(fv.indices))
    features = sp.csr_matrix(
        (np.concatenate(val_parts), np.concatenate(idx_parts), np.array(indptr)),
        shape=(len(features_batch), model.feature_dim),
    )
    y = np.asarray(labels, dtype=np.int64)
    weights = model.weights.copy()
    bias = model.bias.copy()
    _, grad_w, grad_b = _loss_and_grad(weights, bias, features, y, weight_decay)

    k = weights.shape[0]
    active_cols = np.unique(features.indices)
    coords = [("b", r, 0) for r in range(k)]
    weight_coords = [(r, c) for r in range(k) for c in active_cols]
    rng = np.random.default_rng(seed)
    want = max(min_checks - len(coords), 0)
    if weight_coords:
        chosen = rng.choice(len(weight_coords), size=min(want, len(weight_coords)), replace=False)
        coords += [("w", *weight_coords[i]) for i in chosen]

    def loss_at(w, b):
        value, _, _ = _loss_and_grad(w, b, features, y, weight_decay)
        return value

    max_rel = 0.0
    for kind, r, c in coords:
        target = bias if kind == "b" else weights
        flat = (r,) if kind == "b" else (r, c)
        original = target[flat]
        target[flat] = original + step
        plus = loss_at(weights, bias)
        target[flat] = original - step
        minus = loss_at(weights, bias)
        target[flat] = original
        numeric = (plus - minus) / (2 * step)
        analytic = grad_b[r] if kind == "b" else grad_w[r, c]
        rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    if max_rel > tolerance:
        warnings.warn(f"gradient check error {max_rel:.3e} exceeds tolerance {tolerance:.1e}")
    return max_rel


def save_model(model: LinearModel, path) -> None:
    np.savez(
        path,
        weights=model.weights,
        bias=model.bias,
        feature_dim=model.feature_dim,
        num_classes=model.label_space.num_classes,
        fake_class_active=model.label_space.fake_class_active,
        ngram_orders=np.array(model.ngram_orders),
    )


def load_model(path) -> LinearModel:
    with np.load(path) as blob:
        space = LabelSpace(
            num_classes=int(blob["num_classes"]),
            fake_class_active=bool(blob["fake_class_active"]),
        )
        return LinearModel(
            weights=blob["weights"],
            bias=blob["bias"],
            feature_dim=int(blob["feature_dim"]),
            label_space=space,
            ngram_orders=tuple(int(o) for o in blob["ngram_orders"]),
        )
