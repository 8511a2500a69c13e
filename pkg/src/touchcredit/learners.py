"""Training backends for the relabel/retrain loop.

Two backends cover the spectrum the loop needs:

* :class:`AveragingLearner` -- exact weighted mean label per distinct
  scenario prefix.  No generalization, no noise; this is the backend under
  which the loop provably climbs its likelihood and lands on the additive
  valuation.
* :class:`LogisticLearner` -- regularized logistic regression on hashed
  features, trained on fractional labels with deterministic mini-batch
  gradient descent.  This is the backend for real feature spaces where
  exact averaging is useless because every input is unique.

Feature hashing uses the package's fixed 64-bit FNV-1a hash reduced modulo
2^bits (single sign, collisions tolerated), so trained models are portable
across platforms and runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .attribution import PrefixExamples, TabularValuation
from .errors import DatasetParseError, TrainingError
from .hashing import bucket
from .timeline import Scenario, TimelineRecord

FEATURE_RECIPE = "fnv1a64-prefix/1"
DEFAULT_HASH_BITS = 13


class Learner(Protocol):
    """A backend turning prefix-labeled examples into a valuation model."""

    def train(self, examples: PrefixExamples): ...


@dataclass
class AveragingLearner:
    """Weighted mean label per exact scenario key."""

    on_missing: str = "zero"

    def train(self, examples: PrefixExamples) -> TabularValuation:
        key = "averaging_groups"
        if key not in examples.cache:
            group_of: dict[Scenario, int] = {}
            ids = np.empty(len(examples), dtype=np.int64)
            order: list[Scenario] = []
            for e, scenario in enumerate(examples.scenarios):
                gid = group_of.get(scenario)
                if gid is None:
                    gid = len(order)
                    group_of[scenario] = gid
                    order.append(scenario)
                ids[e] = gid
            examples.cache[key] = (ids, order)
        ids, order = examples.cache[key]
        mass = np.bincount(ids, weights=examples.weights, minlength=len(order))
        label_mass = np.bincount(
            ids, weights=examples.weights * examples.labels, minlength=len(order)
        )
        means = label_mass / mass
        return TabularValuation(
            values=dict(zip(order, means.tolist())), on_missing=self.on_missing
        )


@dataclass(frozen=True)
class HashedFeatureVector:
    """Sparse bucketed features; duplicate buckets sum when dotted."""

    dimension: int
    indices: np.ndarray
    values: np.ndarray


def featurize(
    record: TimelineRecord, position: int, hash_bits: int = DEFAULT_HASH_BITS
) -> HashedFeatureVector:
    """Hash the display's sparse features plus derived prefix features
    (position index, action id, qualifier) into 2^hash_bits buckets."""
    if not 1 <= position <= len(record.scenario):
        raise IndexError(f"position {position} outside timeline of length {len(record.scenario)}")
    dimension = 1 << hash_bits
    action, qualifier = record.scenario.displays[position - 1]
    tokens: list[tuple[str, float]] = [
        (f"position={position}", 1.0),
        (f"action={action}", 1.0),
    ]
    if qualifier is not None:
        tokens.append((f"qualifier={qualifier}", 1.0))
    tokens.extend(record.display_features[position - 1].items())
    indices = np.fromiter(
        (bucket(key, dimension) for key, _ in tokens), dtype=np.int64, count=len(tokens)
    )
    values = np.fromiter((v for _, v in tokens), dtype=np.float64, count=len(tokens))
    return HashedFeatureVector(dimension=dimension, indices=indices, values=values)


@dataclass
class _Design:
    """CSR-like matrix of hashed features, one row per prefix example."""

    dimension: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    def dot(self, weights: np.ndarray) -> np.ndarray:
        contrib = self.values * weights[self.indices]
        out = np.add.reduceat(contrib, self.indptr[:-1])
        out[self.indptr[:-1] == self.indptr[1:]] = 0.0
        return out

    def transpose_dot(self, row_coefficients: np.ndarray) -> np.ndarray:
        lengths = np.diff(self.indptr)
        spread = np.repeat(row_coefficients, lengths)
        return np.bincount(
            self.indices, weights=spread * self.values, minlength=self.dimension
        )

    def take_rows(self, rows: np.ndarray) -> "_Design":
        lengths = np.diff(self.indptr)[rows]
        flat = _multi_arange(self.indptr[rows], lengths)
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        return _Design(
            dimension=self.dimension,
            indptr=indptr,
            indices=self.indices[flat],
            values=self.values[flat],
        )


def _multi_arange(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenation of arange(start, start + length) for each pair."""
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    keep = lengths > 0
    starts, lengths = starts[keep], lengths[keep]
    steps = np.ones(total, dtype=np.int64)
    row_starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    steps[row_starts] = starts
    steps[row_starts[1:]] -= starts[:-1] + lengths[:-1] - 1
    return np.cumsum(steps)


def design_matrix(examples: PrefixExamples, hash_bits: int) -> _Design:
    """Featurize every prefix example once; cached on the example set."""
    key = ("design", hash_bits)
    if key not in examples.cache:
        rows = [
            featurize(examples.records[ri], int(pos), hash_bits)
            for ri, pos in zip(examples.record_index, examples.positions)
        ]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        np.cumsum([len(r.indices) for r in rows], out=indptr[1:])
        examples.cache[key] = _Design(
            dimension=1 << hash_bits,
            indptr=indptr,
            indices=np.concatenate([r.indices for r in rows]),
            values=np.concatenate([r.values for r in rows]),
        )
    return examples.cache[key]


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -35.0, 35.0)))


def logistic_loss(
    design: _Design,
    labels: np.ndarray,
    sample_weights: np.ndarray,
    weights: np.ndarray,
    intercept: float,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Weighted cross-entropy against fractional labels plus an L2 penalty
    on the weights (never the intercept); returns (loss, grad_w, grad_b)."""
    z = design.dot(weights) + intercept
    p = _sigmoid(z)
    eps = 1e-15
    ce = -(labels * np.log(p + eps) + (1.0 - labels) * np.log(1.0 - p + eps))
    total_weight = sample_weights.sum()
    loss = float(np.dot(sample_weights, ce) / total_weight) + 0.5 * l2 * float(
        np.dot(weights, weights)
    )
    coeff = sample_weights * (p - labels) / total_weight
    grad_w = design.transpose_dot(coeff) + l2 * weights
    grad_b = float(coeff.sum())
    return loss, grad_w, grad_b


@dataclass
class LogisticValuation:
    """Hashed-feature logistic model; prediction is sigmoid of the hashed
    dot product, rescaled by the label scale used during training."""

    weights: np.ndarray
    intercept: float
    hash_bits: int
    label_scale: float = 1.0
    training: dict | None = None  # hyperparameters recorded for provenance

    def evaluate(self, record: TimelineRecord, position: int) -> float:
        fv = featurize(record, position, self.hash_bits)
        z = float(np.dot(fv.values, self.weights[fv.indices])) + self.intercept
        return self.label_scale / (1.0 + math.exp(-min(max(z, -35.0), 35.0)))

    def evaluate_examples(self, examples: PrefixExamples) -> np.ndarray:
        design = design_matrix(examples, self.hash_bits)
        return self.label_scale * _sigmoid(design.dot(self.weights) + self.intercept)


@dataclass
class LogisticLearner:
    """Deterministic mini-batch gradient descent on hashed features.

    Labels above 1 (non-binary rewards) are scaled into [0, 1] by the batch
    maximum and predictions are scaled back; with binary rewards the credits
    are already valid fractional labels.  Identical seed and
    hyperparameters reproduce identical weights bit for bit.
    """

    hash_bits: int = DEFAULT_HASH_BITS
    l2: float = 1e-6
    epochs: int = 10
    step_size: float = 0.1
    batch_size: int = 256
    seed: int = 0

    def train(self, examples: PrefixExamples) -> LogisticValuation:
        design = design_matrix(examples, self.hash_bits)
        scale = max(1.0, float(examples.labels.max(initial=0.0)))
        labels = examples.labels / scale
        sample_weights = examples.weights
        n = len(examples)
        weights = np.zeros(design.dimension)
        intercept = 0.0
        rng = np.random.default_rng(self.seed)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            shuffled = design.take_rows(order)
            y = labels[order]
            sw = sample_weights[order]
            for start in range(0, n, self.batch_size):
                stop = min(start + self.batch_size, n)
                rows = np.arange(start, stop)
                batch = shuffled.take_rows(rows)
                z = batch.dot(weights) + intercept
                p = _sigmoid(z)
                coeff = sw[start:stop] * (p - y[start:stop]) / sw[start:stop].sum()
                weights -= self.step_size * (batch.transpose_dot(coeff) + self.l2 * weights)
                intercept -= self.step_size * float(coeff.sum())
            loss, _, _ = logistic_loss(
                design, labels, sample_weights, weights, intercept, self.l2
            )
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} "
                    f"(step_size={self.step_size}, l2={self.l2})"
                )
        return LogisticValuation(
            weights=weights,
            intercept=intercept,
            hash_bits=self.hash_bits,
            label_scale=scale,
            training={
                "l2": self.l2,
                "epochs": self.epochs,
                "step_size": self.step_size,
                "batch_size": self.batch_size,
                "seed": self.seed,
            },
        )


def save_model(model, path) -> None:
    """Persist a valuation model as line-oriented text with a JSON header."""
    if isinstance(model, TabularValuation):
        header = {
            "format": "tabular/1",
            "on_missing": model.on_missing,
            "clamp_count": model.clamp_count,
        }
        lines = ["#" + json.dumps(header, separators=(",", ":"))]
        for scenario in sorted(model.values, key=lambda s: (len(s), s.encode())):
            lines.append(f"{scenario.encode()}\t{model.values[scenario]!r}")
    elif isinstance(model, LogisticValuation):
        header = {
            "format": "logistic/1",
            "hash_bits": model.hash_bits,
            "intercept": model.intercept,
            "label_scale": model.label_scale,
            "feature_recipe": FEATURE_RECIPE,
        }
        if model.training is not None:
            header["training"] = model.training
        lines = ["#" + json.dumps(header, separators=(",", ":"))]
        for index in np.nonzero(model.weights)[0]:
            lines.append(f"{index}\t{float(model.weights[index])!r}")
    else:
        raise TypeError(f"cannot save model of type {type(model).__name__}")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")


def load_model(path):
    """Inverse of :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = handle.read().splitlines()
    if not raw or not raw[0].startswith("#"):
        raise DatasetParseError("missing model header", line_number=1)
    header = json.loads(raw[0][1:])
    body = [line for line in raw[1:] if line]
    if header.get("format") == "tabular/1":
        values = {}
        for line in body:
            encoded, _, value = line.partition("\t")
            values[Scenario.decode(encoded)] = float(value)
        return TabularValuation(
            values=values,
            on_missing=header.get("on_missing", "zero"),
            clamp_count=int(header.get("clamp_count", 0)),
        )
    if header.get("format") == "logistic/1":
        hash_bits = int(header["hash_bits"])
        weights = np.zeros(1 << hash_bits)
        for line in body:
            index, _, value = line.partition("\t")
            weights[int(index)] = float(value)
        return LogisticValuation(
            weights=weights,
            intercept=float(header["intercept"]),
            hash_bits=hash_bits,
            label_scale=float(header.get("label_scale", 1.0)),
            training=header.get("training"),
        )
    raise DatasetParseError(f"unknown model format {header.get('format')!r}", line_number=1)
