"""A small deterministic MLP trainer: forward/backward passes, SGD with
momentum, masked fine-tuning, evaluation, and loss-Hessian eigenvalues.

Each layer ``l`` stores one ``(d_in + 1) x d_out`` matrix whose last row is
the bias. Pruning masks cover only the weight rows unless a caller passes a
full-size mask.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySplit,
    InvalidLabel,
    InvalidParameter,
    NonFiniteLoss,
    NonNumericCell,
    ParseError,
    RaggedRows,
)
from .numkernel import RngStream, power_iteration
from .pruning import PruneMask, WeightVector

CROSS_ENTROPY = "cross-entropy"
CORRELATION = "correlation"
LOSSES = (CROSS_ENTROPY, CORRELATION)


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise InvalidParameter("need at least input and output dims")
        if self.activation not in ("relu", "tanh"):
            raise InvalidParameter(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_dims) - 1:
            raise DimensionMismatch("one weight matrix per layer transition")
        for i, w in enumerate(self.weights):
            want = (self.layer_dims[i] + 1, self.layer_dims[i + 1])
            if w.shape != want:
                raise DimensionMismatch(f"layer {i} weights {w.shape}, expected {want}")
            if not np.all(np.isfinite(w)):
                raise InvalidParameter(f"layer {i} has non-finite weights")

    @classmethod
    def init(cls, layer_dims: Sequence[int], rng: RngStream, activation: str = "relu") -> "MlpModel":
        """He-scaled normal weights, zero biases."""
        weights = []
        for d_in, d_out in zip(layer_dims[:-1], layer_dims[1:]):
            w = np.zeros((d_in + 1, d_out))
            w[:-1] = rng.normal((d_in, d_out)) * math.sqrt(2.0 / d_in)
            weights.append(w)
        return cls(list(layer_dims), weights, activation)

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], activation: str = "relu") -> "MlpModel":
        return cls(list(layer_dims), [np.zeros((a + 1, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])], activation)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights], self.activation)

    def layer_index(self, index: int) -> int:
        idx = index + self.n_layers if index < 0 else index
        if not 0 <= idx < self.n_layers:
            raise InvalidParameter(f"layer {index} does not exist")
        return idx

    def layer_vector(self, index: int, include_bias: bool = False) -> WeightVector:
        """Flattened (row-major) weights of one layer."""
        idx = self.layer_index(index)
        w = self.weights[idx] if include_bias else self.weights[idx][:-1]
        return WeightVector(w.reshape(-1).copy(), f"layer{idx}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 32
    lr_schedule: str = "step"
    lr_gamma: float = 0.5
    lr_every: int = 10
    seed: int = 0
    loss: str = CROSS_ENTROPY

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameter("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidParameter("momentum must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidParameter("epochs must be >= 0 and batch_size >= 1")
        if self.lr_schedule not in ("constant", "step"):
            raise InvalidParameter(f"unknown lr schedule {self.lr_schedule!r}")
        if self.loss not in LOSSES:
            raise InvalidParameter(f"unknown loss {self.loss!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "step" and self.lr_every > 0:
            return self.learning_rate * self.lr_gamma ** (epoch // self.lr_every)
        return self.learning_rate


@dataclass(frozen=True)
class EvalResult:
    dataset_id: str
    split: str
    loss: float
    accuracy: float
    n: int
    correct: int = 0


@dataclass(eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    classes: int
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype="<U5")
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise DimensionMismatch("features must be n x d with one label per row")
        if self.splits.size != self.labels.size:
            raise DimensionMismatch("one split tag per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise InvalidLabel(f"labels must lie in [0, {self.classes})")

    @property
    def dataset_id(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.descriptor, sort_keys=True).encode())
        h.update(self.features.tobytes())
        h.update(self.labels.tobytes())
        h.update(self.splits.astype("S5").tobytes())
        return h.hexdigest()[:16]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        sel = self.splits == name
        if not np.any(sel):
            raise EmptySplit(f"split {name!r} is empty")
        return self.features[sel], self.labels[sel]


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _activate_grad(z: np.ndarray, a: np.ndarray, kind: str) -> np.ndarray:
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - a * a


def _forward_cache(model: MlpModel, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise DimensionMismatch(f"input must be n x {model.layer_dims[0]}, got {x.shape}")
    acts, pre = [x], []
    h = x
    for i, w in enumerate(model.weights):
        z = h @ w[:-1] + w[-1]
        pre.append(z)
        h = z if i == model.n_layers - 1 else _activate(z, model.activation)
        acts.append(h)
    return acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Logits; softmax is applied only inside the loss."""
    acts, _ = _forward_cache(model, x)
    return acts[-1]


def _check_labels(model: MlpModel, y: np.ndarray, loss: str):
    out = model.layer_dims[-1]
    if loss == CORRELATION:
        if out != 1:
            raise InvalidParameter("correlation loss needs a single output score")
        if np.any((y != 0) & (y != 1)):
            raise InvalidLabel("correlation loss takes labels in {0, 1}")
    elif np.any((y < 0) | (y >= out)):
        raise InvalidLabel(f"labels must lie in [0, {out})")


def per_sample_loss(model: MlpModel, x, y, loss: str = CROSS_ENTROPY) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample loss and a correctness flag per sample."""
    y = np.asarray(y, dtype=np.int64)
    _check_labels(model, y, loss)
    logits = forward(model, x)
    if loss == CORRELATION:
        signed = 2.0 * y - 1.0
        score = logits[:, 0]
        return -signed * score, (score > 0) == (y == 1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=1))
    losses = logz - shifted[np.arange(y.size), y]
    return losses, np.argmax(logits, axis=1) == y


def loss_and_grad(model: MlpModel, x, y, loss: str = CROSS_ENTROPY) -> tuple[float, list[np.ndarray]]:
    """Mean batch loss and its exact gradient for every layer matrix.

    ``correlation`` is ``-mean(y_signed * score)`` with ``y_signed = 2y - 1``
    and a single output score; ``cross-entropy`` is mean softmax CE.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise EmptySplit("batch is empty")
    _check_labels(model, y, loss)
    acts, pre = _forward_cache(model, x)
    n = y.size
    logits = acts[-1]
    if loss == CORRELATION:
        signed = 2.0 * y - 1.0
        value = float(-np.mean(signed * logits[:, 0]))
        delta = (-signed / n)[:, None]
    else:
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        total = expd.sum(axis=1, keepdims=True)
        value = float(np.mean(np.log(total[:, 0]) - shifted[np.arange(n), y]))
        delta = expd / total
        delta[np.arange(n), y] -= 1.0
        delta /= n
    grads = [None] * model.n_layers
    for i in range(model.n_layers - 1, -1, -1):
        h = acts[i]
        g = np.empty_like(model.weights[i])
        g[:-1] = h.T @ delta
        g[-1] = delta.sum(axis=0)
        grads[i] = g
        if i > 0:
            delta = (delta @ model.weights[i][:-1].T) * _activate_grad(pre[i - 1], acts[i], model.activation)
    return value, grads


def evaluate(model: MlpModel, data: Dataset, split: str = "test", loss: str = CROSS_ENTROPY) -> EvalResult:
    """Exact sweep over one split."""
    x, y = data.split(split)
    losses, correct = per_sample_loss(model, x, y, loss)
    n_correct = int(np.count_nonzero(correct))
    return EvalResult(data.dataset_id, split, float(np.sum(losses) / y.size), n_correct / y.size, int(y.size), n_correct)


def full_masks(model: MlpModel, masks: dict[int, PruneMask] | None) -> dict[int, np.ndarray]:
    """Expand per-layer masks to the layer matrix shape (bias row kept at 1)."""
    out = {}
    for index, mask in (masks or {}).items():
        idx = model.layer_index(index)
        w = model.weights[idx]
        bits = mask.bits.astype(np.float64)
        if bits.size == w.size:
            out[idx] = bits.reshape(w.shape)
        elif bits.size == w[:-1].size:
            full = np.ones_like(w)
            full[:-1] = bits.reshape(w[:-1].shape)
            out[idx] = full
        else:
            raise DimensionMismatch(f"mask for layer {idx} has {bits.size} entries, layer has {w[:-1].size}")
    return out


def sgd_train(
    model: MlpModel,
    data: Dataset,
    cfg: TrainConfig,
    masks: dict[int, PruneMask] | None = None,
    on_epoch: Callable[[int, MlpModel], None] | None = None,
) -> tuple[MlpModel, list[dict[str, EvalResult]]]:
    """Minibatch SGD with momentum on the ``train`` split.

    With masks, gradients and weights are multiplied by the mask after every
    update so pruned entries stay exactly zero. Returns a trained copy and a
    per-epoch history of ``{"train": EvalResult, "test": EvalResult}``.
    """
    model = model.copy()
    dense = full_masks(model, masks)
    for idx, m in dense.items():
        model.weights[idx] = np.where(m == 1.0, model.weights[idx], 0.0)
    x, y = data.split("train")
    has_test = np.any(data.splits == "test")
    rng = RngStream(cfg.seed).child("shuffle")
    velocity = [np.zeros_like(w) for w in model.weights]
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.child(epoch).permutation(y.size)
        for start in range(0, y.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            value, grads = loss_and_grad(model, x[batch], y[batch], cfg.loss)
            if not math.isfinite(value):
                raise NonFiniteLoss(f"loss became {value} at epoch {epoch}; lower the learning rate")
            for i, g in enumerate(grads):
                if i in dense:
                    g = g * dense[i]
                velocity[i] = cfg.momentum * velocity[i] + g
                model.weights[i] = model.weights[i] - lr * velocity[i]
                if i in dense:
                    model.weights[i] = np.where(dense[i] == 1.0, model.weights[i], 0.0)
        record = {"train": evaluate(model, data, "train", cfg.loss)}
        if has_test:
            record["test"] = evaluate(model, data, "test", cfg.loss)
        if not math.isfinite(record["train"].loss):
            raise NonFiniteLoss(f"training loss became {record['train'].loss} at epoch {epoch}")
        history.append(record)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model, history


def fine_tune(
    pruned: MlpModel,
    masks: dict[int, PruneMask],
    data: Dataset,
    cfg: TrainConfig,
    tracked_layer: int = -1,
) -> tuple[MlpModel, list[dict[str, EvalResult]], list[WeightVector]]:
    """Masked training plus a per-epoch snapshot of the tracked layer's weights."""
    snapshots: list[WeightVector] = []
    full_masks(pruned, masks)

    def grab(epoch, model):
        snapshots.append(model.layer_vector(tracked_layer))

    model, history = sgd_train(pruned, data, cfg, masks, on_epoch=grab)
    return model, history, snapshots


def flat_layer_grad(model: MlpModel, data: Dataset, layer_index: int, loss: str = CROSS_ENTROPY, split: str = "train"):
    """Gradient of the mean loss with respect to one flattened layer matrix."""
    idx = model.layer_index(layer_index)
    x, y = data.split(split)
    shape = model.weights[idx].shape
    probe = model.copy()

    def grad(w_flat: np.ndarray) -> np.ndarray:
        probe.weights[idx] = w_flat.reshape(shape)
        return loss_and_grad(probe, x, y, loss)[1][idx].reshape(-1)

    def value(w_flat: np.ndarray) -> float:
        probe.weights[idx] = w_flat.reshape(shape)
        return float(np.mean(per_sample_loss(probe, x, y, loss)[0]))

    return grad, value, model.weights[idx].reshape(-1).copy()


def hvp_fd(grad: Callable[[np.ndarray], np.ndarray], w0: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Hessian-vector product by central differences of the gradient.

    Step ``h = 1e-4 * (1 + |w0|)`` along the unit direction.
    """
    h = 1e-4 * (1.0 + np.linalg.norm(w0))

    def apply(v: np.ndarray) -> np.ndarray:
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return np.zeros_like(v)
        u = v / norm
        return (grad(w0 + h * u) - grad(w0 - h * u)) * (norm / (2.0 * h))

    return apply


def lambda_max_from_grad(grad, w0, tol: float = 1e-8, rng: RngStream | None = None, max_iter: int = 20_000) -> float:
    lam, _ = power_iteration(hvp_fd(grad, np.asarray(w0, dtype=np.float64)), w0.size, tol, max_iter, rng)
    return lam


def hessian_lambda_max(
    model: MlpModel,
    data: Dataset,
    layer_index: int = -1,
    tol: float = 1e-8,
    rng: RngStream | None = None,
    loss: str = CROSS_ENTROPY,
) -> float:
    """Largest-magnitude eigenvalue of the training-loss Hessian restricted to
    one layer (weights and bias), by power iteration on finite-difference
    Hessian-vector products."""
    grad, _, w0 = flat_layer_grad(model, data, layer_index, loss)
    return lambda_max_from_grad(grad, w0, tol, rng)


def make_blobs(
    classes: int = 3,
    n_per_class: int = 800,
    spread: float = 1.0,
    dim: int = 2,
    rng: RngStream | None = None,
    center_box: float = 5.0,
    test_fraction: float = 0.2,
) -> Dataset:
    """Gaussian clusters around uniform random centers in ``[-center_box, center_box]^dim``.

    The split is an 80/20 (by default) shuffle drawn from the same seed.
    """
    if classes < 2:
        raise InvalidParameter("need at least two classes")
    if n_per_class < 1 or dim < 1 or spread < 0:
        raise InvalidParameter("n_per_class and dim must be positive, spread non-negative")
    rng = rng if rng is not None else RngStream(0)
    centers = rng.child("centers").uniform(-center_box, center_box, size=(classes, dim))
    noise = rng.child("noise").normal((classes * n_per_class, dim))
    labels = np.repeat(np.arange(classes), n_per_class)
    features = centers[labels] + spread * noise
    n = labels.size
    n_test = int(round(test_fraction * n))
    splits = np.full(n, "train", dtype="<U5")
    splits[rng.child("split").permutation(n)[:n_test]] = "test"
    descriptor = {
        "generator": "blobs",
        "classes": classes,
        "n_per_class": n_per_class,
        "spread": spread,
        "dim": dim,
        "center_box": center_box,
        "test_fraction": test_fraction,
        "seed": rng.seed,
        "path": list(rng.path),
    }
    return Dataset(features, labels, splits, classes, descriptor)


def load_csv(path, label_column: str = "label", split_column: str | None = "split", test_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Read a numeric CSV with a header row.

    If ``split_column`` is present its values (``train``/``test``) are used;
    otherwise a seeded ``test_fraction`` shuffle assigns splits. Errors name
    the 1-based file row and the column.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        if label_column not in header:
            raise ParseError(f"{path}: label column {label_column!r} not found in header {header}")
        label_at = header.index(label_column)
        split_at = header.index(split_column) if split_column and split_column in header else None
        feature_cols = [i for i in range(len(header)) if i not in (label_at, split_at)]
        rows, labels, splits = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRows(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            values = []
            for i in feature_cols:
                try:
                    values.append(float(row[i]))
                except ValueError:
                    raise NonNumericCell(f"{path}: row {lineno}, column {header[i]!r}: {row[i]!r} is not numeric") from None
            try:
                label = float(row[label_at])
            except ValueError:
                raise NonNumericCell(f"{path}: row {lineno}, column {label_column!r}: {row[label_at]!r} is not numeric") from None
            if label != int(label):
                raise InvalidLabel(f"{path}: row {lineno}: label {label} is not an integer")
            rows.append(values)
            labels.append(int(label))
            if split_at is not None:
                tag = row[split_at].strip()
                if tag not in ("train", "test"):
                    raise ParseError(f"{path}: row {lineno}, column {split_column!r}: unknown split {tag!r}")
                splits.append(tag)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    n = labels_arr.size
    if split_at is None:
        tags = np.full(n, "train", dtype="<U5")
        tags[RngStream(seed).child("split").permutation(n)[: int(round(test_fraction * n))]] = "test"
    else:
        tags = np.asarray(splits, dtype="<U5")
    descriptor = {
        "generator": "csv",
        "path": str(path),
        "label_column": label_column,
        "feature_columns": [header[i] for i in feature_cols],
    }
    return Dataset(np.asarray(rows, dtype=np.float64).reshape(n, len(feature_cols)), labels_arr, tags, int(labels_arr.max()) + 1, descriptor)


def write_csv(data: Dataset, path, label_column: str = "label", split_column: str = "split") -> None:
    names = data.descriptor.get("feature_columns") or [f"x{i}" for i in range(data.features.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*names, label_column, split_column])
        for row, label, tag in zip(data.features, data.labels, data.splits):
            writer.writerow([*(repr(float(v)) for v in row), int(label), str(tag)])
