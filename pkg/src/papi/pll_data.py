"""Partially labelled datasets: synthetic blobs, candidate-set generators,
vector augmentations, mixup and CSV I/O."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from . import model as mdl
from . import numerics as nx
from .errors import DimensionError, IntegrityError, ParseError
from .rng import make_rng

Seed = int | np.random.Generator


def _generator(seed: Seed, purpose: str) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return make_rng(seed, purpose)


@dataclass(frozen=True)
class Example:
    features: np.ndarray
    true_label: int
    candidates: frozenset[int]


@dataclass(frozen=True)
class GenerationMeta:
    kind: Literal["clean", "uniform", "instance_dependent", "loaded"] = "clean"
    q: float | None = None
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class PLLDataset:
    """Features (N, d), hidden true labels (N,) and a boolean candidate mask (N, K).

    Arrays are made read-only on construction.
    """

    features: np.ndarray
    true_labels: np.ndarray
    candidate_mask: np.ndarray
    num_classes: int
    generation_meta: GenerationMeta = field(default_factory=GenerationMeta)

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.true_labels, dtype=np.int64)
        m = np.array(self.candidate_mask, dtype=bool)
        if x.ndim != 2 or y.shape != (x.shape[0],) or m.shape != (x.shape[0], self.num_classes):
            raise DimensionError(
                f"inconsistent dataset shapes: features {x.shape}, labels {y.shape}, candidates {m.shape}"
            )
        if self.num_classes < 2:
            raise DimensionError(f"need at least 2 classes, got {self.num_classes}")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise IntegrityError("true label out of range")
        if y.size and not m[np.arange(y.size), y].all():
            bad = np.flatnonzero(~m[np.arange(y.size), y])[0]
            raise IntegrityError(f"example {bad}: candidate set does not contain the true label")
        for a in (x, y, m):
            a.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "true_labels", y)
        object.__setattr__(self, "candidate_mask", m)

    def __len__(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PLLDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.true_labels, other.true_labels)
            and np.array_equal(self.candidate_mask, other.candidate_mask)
        )

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_fully_labeled(self) -> bool:
        return bool((self.candidate_mask.sum(axis=1) == 1).all())

    def example(self, i: int) -> Example:
        return Example(
            self.features[i],
            int(self.true_labels[i]),
            frozenset(np.flatnonzero(self.candidate_mask[i]).tolist()),
        )

    @property
    def examples(self) -> list[Example]:
        return [self.example(i) for i in range(len(self))]

    def with_candidates(self, mask: np.ndarray, meta: GenerationMeta) -> "PLLDataset":
        return PLLDataset(self.features, self.true_labels, mask, self.num_classes, meta)


def _one_hot_mask(labels: np.ndarray, k: int) -> np.ndarray:
    m = np.zeros((labels.size, k), dtype=bool)
    m[np.arange(labels.size), labels] = True
    return m


# ----------------------------------------------------------------------------
# synthetic data

def class_directions(num_classes: int, dim: int) -> np.ndarray:
    """Unit directions for the class means: basis vectors when K <= d,
    otherwise fixed random unit vectors (independent of any run seed)."""
    if num_classes <= dim:
        return np.eye(dim)[:num_classes]
    rng = make_rng(0, "class-directions", num_classes, dim)
    return nx.l2_normalize_rows(rng.standard_normal((num_classes, dim)))


def make_blobs(num_classes: int, per_class: int, dim: int, separation: float, seed: int) -> PLLDataset:
    """Unit-variance Gaussian blobs centred at ``separation * direction_k``.

    Samples are ordered class by class. The class means depend only on
    (K, d, separation), so two calls with different seeds draw from the same
    distribution (useful for train/test splits).
    """
    if num_classes < 2 or per_class < 1 or dim < 1:
        raise ValueError(f"invalid blob counts: K={num_classes}, per_class={per_class}, d={dim}")
    if not separation > 0:
        raise ValueError(f"separation must be positive, got {separation}")
    rng = make_rng(seed, "blobs")
    means = separation * class_directions(num_classes, dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + rng.standard_normal((labels.size, dim))
    return PLLDataset(x, labels, _one_hot_mask(labels, num_classes), num_classes, GenerationMeta("clean", None, seed))


# ----------------------------------------------------------------------------
# candidate generation

def uniform_candidates(dataset: PLLDataset, q: float, seed: int) -> PLLDataset:
    """Flip every incorrect label into the candidate set independently with probability q."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    rng = make_rng(seed, "uniform-candidates")
    mask = rng.random((len(dataset), dataset.num_classes)) < q
    mask[np.arange(len(dataset)), dataset.true_labels] = True
    return dataset.with_candidates(mask, GenerationMeta("uniform", float(q), seed))


def flip_probabilities(true_labels: np.ndarray, oracle_scores) -> np.ndarray:
    """Per-example flip probability of each incorrect label, score / max incorrect score.

    The true label's entry is set to 1.
    """
    g = np.asarray(oracle_scores, dtype=np.float64)
    n = true_labels.size
    if g.shape[0] != n or g.ndim != 2:
        raise DimensionError(f"oracle scores {g.shape} do not match {n} examples")
    if (g < 0).any() or not np.isfinite(g).all():
        raise ValueError("oracle scores must be finite and non-negative")
    rows = np.arange(n)
    incorrect = g.copy()
    incorrect[rows, true_labels] = -np.inf
    top = incorrect.max(axis=1)
    if (top <= 0).any():
        bad = int(np.flatnonzero(top <= 0)[0])
        raise ValueError(f"example {bad}: all incorrect-label scores are zero")
    probs = np.clip(g / top[:, None], 0.0, 1.0)
    probs[rows, true_labels] = 1.0
    return probs


def instance_dependent_candidates(dataset: PLLDataset, oracle_scores, seed: int) -> PLLDataset:
    probs = flip_probabilities(dataset.true_labels, oracle_scores)
    rng = make_rng(seed, "instance-candidates")
    mask = rng.random(probs.shape) < probs
    mask[np.arange(len(dataset)), dataset.true_labels] = True
    return dataset.with_candidates(mask, GenerationMeta("instance_dependent", None, seed))


def pretrain_oracle(
    dataset: PLLDataset,
    epochs: int,
    seed: int,
    *,
    hidden: tuple[int, ...] = (64,),
    enc_dim: int = 64,
    learning_rate: float = 0.05,
    batch_size: int = 64,
) -> np.ndarray:
    """Train encoder + linear classifier on the clean labels and return softmax scores (N, K).

    The architecture and budget are configurable; the defaults match the
    encoder used for partial-label training.
    """
    if not dataset.is_fully_labeled:
        raise IntegrityError("pretrain_oracle needs a fully labelled dataset")
    dims = mdl.ModelDims(dataset.feature_dim, dataset.num_classes, tuple(hidden), enc_dim)
    params = mdl.init_params(dims, seed)
    rng = make_rng(seed, "oracle-shuffle")
    x, y = dataset.features, dataset.true_labels
    onehot = np.eye(dataset.num_classes)[y]
    trainable = [k for k in params.arrays if not k.startswith("proj")]
    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            v, enc_cache = mdl.encode(params, x[idx])
            r, cls_cache = mdl.classify(params, v)
            grads: dict[str, np.ndarray] = {}
            dr = nx.neg_log_grad(onehot[idx], r) / idx.size
            dv = mdl.classify_backward(cls_cache, r, dr, grads)
            mdl.encode_backward(params, enc_cache, dv, grads)
            sub = {k: params.arrays[k] for k in trainable}
            params = params.replace({**params.arrays, **nx.sgd_step(sub, grads, learning_rate)})
    v, _ = mdl.encode(params, x)
    r, _ = mdl.classify(params, v)
    return r


# ----------------------------------------------------------------------------
# augmentation and mixup

@dataclass(frozen=True)
class AugmentationSpec:
    weak_noise_sigma: float = 0.1
    strong_noise_sigma: float = 0.5
    strong_dropout_rate: float = 0.2
    composition: Literal["S+W", "2xS", "2xW"] = "S+W"

    def __post_init__(self):
        if self.weak_noise_sigma < 0 or self.strong_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.strong_dropout_rate <= 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1], got {self.strong_dropout_rate}")
        if self.composition not in ("S+W", "2xS", "2xW"):
            raise ValueError(f"unknown augmentation composition {self.composition!r}")

    def view_modes(self) -> tuple[str, str]:
        """Augmentation mode of (view 1, view 2); view 1 feeds the classifier."""
        return {"S+W": ("weak", "strong"), "2xS": ("strong", "strong"), "2xW": ("weak", "weak")}[self.composition]


def augment(batch, mode: Literal["weak", "strong"], spec: AugmentationSpec, seed: Seed) -> np.ndarray:
    """Weak: additive Gaussian noise. Strong: larger noise, then coordinate dropout."""
    x = np.asarray(batch, dtype=np.float64)
    rng = _generator(seed, "augment")
    if mode == "weak":
        sigma = spec.weak_noise_sigma
        return x + sigma * rng.standard_normal(x.shape) if sigma > 0 else x.copy()
    if mode != "strong":
        raise ValueError(f"unknown augmentation mode {mode!r}")
    out = x + spec.strong_noise_sigma * rng.standard_normal(x.shape) if spec.strong_noise_sigma > 0 else x.copy()
    rate = spec.strong_dropout_rate
    if rate > 0:
        out = out * (rng.random(x.shape) >= rate)
    return out


@dataclass(frozen=True)
class MixBatch:
    mixed_features: np.ndarray
    partner_index: np.ndarray
    mix_coeff: float


def mixup_batch(batch, alpha: float, seed: Seed, mix_coeff: float | None = None) -> MixBatch:
    """``x_i * phi + x_partner(i) * (1 - phi)`` with one phi ~ Beta(alpha, alpha) per batch.

    ``mix_coeff`` forces phi (the permutation is still drawn).
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError(f"mixup needs a batch of at least 2 rows, got shape {x.shape}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    rng = _generator(seed, "mixup")
    phi = float(rng.beta(alpha, alpha)) if mix_coeff is None else float(mix_coeff)
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"mix coefficient must lie in [0, 1], got {phi}")
    perm = rng.permutation(x.shape[0])
    return MixBatch(phi * x + (1.0 - phi) * x[perm], perm, phi)


# ----------------------------------------------------------------------------
# CSV I/O

def _format_float(v: float) -> str:
    return repr(float(v))


def dataset_to_csv(dataset: PLLDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"f{j}" for j in range(dataset.feature_dim)] + ["true_label", "candidates"])
    for i in range(len(dataset)):
        cands = ";".join(str(j) for j in np.flatnonzero(dataset.candidate_mask[i]))
        writer.writerow([_format_float(v) for v in dataset.features[i]] + [int(dataset.true_labels[i]), cands])
    return buf.getvalue()


def save_dataset(dataset: PLLDataset, path) -> None:
    """Header ``f0,...,f{d-1},true_label,candidates``; candidates ``;``-separated, sorted."""
    Path(path).write_text(dataset_to_csv(dataset), encoding="utf-8", newline="")


def load_dataset(path, num_classes: int | None = None) -> PLLDataset:
    """Parse a dataset CSV. K defaults to one more than the largest index seen."""
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ParseError(f"{path}: empty file", line=1)
    header = rows[0]
    if len(header) < 3 or header[-2:] != ["true_label", "candidates"]:
        raise ParseError(f"{path}: bad header {header!r}", line=1)
    d = len(header) - 2
    if header[:d] != [f"f{j}" for j in range(d)]:
        raise ParseError(f"{path}: feature columns must be named f0..f{d - 1}", line=1)
    if len(rows) < 2:
        raise ParseError(f"{path}: no data rows", line=2)

    feats, labels, cands = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != d + 2:
            raise ParseError(f"{path}: expected {d + 2} fields, got {len(row)}", line=lineno)
        try:
            feats.append([float(v) for v in row[:d]])
            labels.append(int(row[d]))
            cs = sorted(int(c) for c in row[d + 1].split(";")) if row[d + 1] else []
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", line=lineno) from None
        if not cs:
            raise ParseError(f"{path}: empty candidate set", line=lineno)
        if min(cs) < 0 or labels[-1] < 0:
            raise ParseError(f"{path}: negative class index", line=lineno)
        if labels[-1] not in cs:
            raise IntegrityError(f"{path}: line {lineno}: candidate set {cs} does not contain true label {labels[-1]}")
        cands.append(cs)

    k_seen = max(max(labels), max(max(c) for c in cands)) + 1
    k = k_seen if num_classes is None else num_classes
    if k_seen > k:
        raise IntegrityError(f"{path}: class index {k_seen - 1} out of range for K={k}")
    mask = np.zeros((len(labels), k), dtype=bool)
    for i, cs in enumerate(cands):
        mask[i, cs] = True
    return PLLDataset(np.array(feats), np.array(labels), mask, k, GenerationMeta("loaded"))
