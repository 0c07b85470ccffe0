"""Evaluation diagnostics: accuracies, embedding similarity, classifier disagreement."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import model as mdl
from .pll_data import PLLDataset
from .rng import make_rng

DEFAULT_MAX_PAIRS = 100_000


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValueError(f"prediction/label shapes differ: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def prototype_predictions(z, prototypes: mdl.Prototypes, tau: float = 1.0) -> np.ndarray:
    # argmax is unaffected by tau > 0; kept for a uniform call signature
    return mdl.prototype_logits(z, prototypes, tau).argmax(axis=1)


def prototype_classifier_accuracy(params: mdl.ModelParams, prototypes: mdl.Prototypes, tau: float, test_set: PLLDataset) -> float:
    """Nearest-prototype (cosine) accuracy on unaugmented inputs."""
    z = mdl.embed(params, test_set.features)
    return accuracy(prototype_predictions(z, prototypes, tau), test_set.true_labels)


class SimilarityStats(NamedTuple):
    intra: float
    inter: float
    skipped_classes: tuple[int, ...]  # classes with < 2 samples, excluded from intra


def _sample_intra(z, labels, max_pairs, rng):
    classes, counts = np.unique(labels, return_counts=True)
    skipped = tuple(int(c) for c in classes[counts < 2])
    keep = counts >= 2
    classes, counts = classes[keep], counts[keep]
    if classes.size == 0:
        return float("nan"), skipped
    members = [np.flatnonzero(labels == c) for c in classes]
    n_pairs = counts * (counts - 1) // 2
    if n_pairs.sum() <= max_pairs:
        sims = []
        for idx in members:
            g = z[idx] @ z[idx].T
            sims.append(g[np.triu_indices(idx.size, 1)])
        return float(np.concatenate(sims).mean()), skipped
    which = rng.choice(classes.size, size=max_pairs, p=n_pairs / n_pairs.sum())
    a = np.empty(max_pairs, dtype=np.int64)
    b = np.empty(max_pairs, dtype=np.int64)
    for ci, idx in enumerate(members):
        sel = np.flatnonzero(which == ci)
        i = rng.integers(0, idx.size, size=sel.size)
        j = rng.integers(0, idx.size - 1, size=sel.size)
        j = j + (j >= i)
        a[sel], b[sel] = idx[i], idx[j]
    return float(np.einsum("ij,ij->i", z[a], z[b]).mean()), skipped


def _sample_inter(z, labels, max_pairs, rng):
    n = labels.size
    same = labels[:, None] == labels[None, :]
    if same.all():
        return float("nan")
    total = (n * n - same.sum()) // 2
    if total <= max_pairs:
        g = z @ z.T
        iu = np.triu_indices(n, 1)
        return float(g[iu][~same[iu]].mean())
    # i weighted by its number of other-class partners, then j uniform among them
    other = n - same.sum(axis=1)
    i = rng.choice(n, size=max_pairs, p=other / other.sum())
    order = np.argsort(labels, kind="stable")
    sorted_labels = labels[order]
    starts = np.searchsorted(sorted_labels, labels[i], side="left")
    ends = np.searchsorted(sorted_labels, labels[i], side="right")
    k = rng.integers(0, other[i])
    # skip over the block of i's own class in the label-sorted order
    k = np.where(k >= starts, k + (ends - starts), k)
    j = order[k]
    return float(np.einsum("ij,ij->i", z[i], z[j]).mean())


def embedding_similarity(z, labels, max_pairs: int = DEFAULT_MAX_PAIRS, seed: int = 0) -> SimilarityStats:
    """Mean pairwise cosine similarity within classes and across classes.

    Rows of ``z`` are assumed unit-norm. All pairs are used when there are at
    most ``max_pairs`` of a kind; otherwise ``max_pairs`` pairs are sampled
    uniformly (with replacement) from that kind.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise ValueError("similarity statistics need at least two classes")
    rng = make_rng(seed, "similarity")
    intra, skipped = _sample_intra(z, labels, max_pairs, rng)
    inter = _sample_inter(z, labels, max_pairs, rng)
    return SimilarityStats(intra, inter, skipped)


def intra_inter_similarity(params: mdl.ModelParams, test_set: PLLDataset, max_pairs: int = DEFAULT_MAX_PAIRS, seed: int = 0) -> SimilarityStats:
    return embedding_similarity(mdl.embed(params, test_set.features), test_set.true_labels, max_pairs, seed)


def count_disagreements(linear_pred, proto_pred, labels) -> tuple[int, int]:
    """(linear right & prototype wrong, prototype right & linear wrong)."""
    lin_ok = np.asarray(linear_pred) == np.asarray(labels)
    proto_ok = np.asarray(proto_pred) == np.asarray(labels)
    return int(np.sum(lin_ok & ~proto_ok)), int(np.sum(proto_ok & ~lin_ok))


def disagreement_counts(params: mdl.ModelParams, prototypes: mdl.Prototypes, tau: float, batch, true_labels) -> tuple[int, int]:
    v, _ = mdl.encode(params, batch)
    r, _ = mdl.classify(params, v)
    z, _ = mdl.project(params, v)
    return count_disagreements(r.argmax(axis=1), prototype_predictions(z, prototypes, tau), true_labels)


def disambiguation_purity(pseudo_target, true_labels) -> float:
    """Fraction of rows whose argmax (lowest index on ties) is the true label."""
    p = np.asarray(pseudo_target)
    return accuracy(p.argmax(axis=1), np.asarray(true_labels))
