"""Voting-based pseudo-labeling of target-domain samples.

Every head (the per-modality classifiers plus the fused one) casts one vote
per sample for its argmax class. Samples whose leading class collects at
least `min_votes` votes are selected, and the leading class becomes their
pseudo label. Argmax ties always break to the lowest class index so runs
are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_matrix


@dataclass(frozen=True)
class PseudoLabelSet:
    """Selected target sample indices, their labels, and the full vote table."""

    indices: np.ndarray
    labels: np.ndarray
    vote_counts: np.ndarray


def vote(predictions) -> np.ndarray:
    """Per-sample, per-class vote counts from the heads' probability matrices.

    Each of the M+1 matrices contributes one vote per sample, for the class
    with the largest probability (first such class on ties).
    """
    preds = [as_matrix(p, f"predictions[{i}]") for i, p in enumerate(predictions)]
    if not preds:
        raise ValueError("no prediction matrices")
    shape = preds[0].shape
    for p in preds[1:]:
        if p.shape != shape:
            raise ValueError(f"shape mismatch: {p.shape} vs {shape}")
    n, c = shape
    counts = np.zeros((n, c), dtype=np.int64)
    rows = np.arange(n)
    for p in preds:
        counts[rows, np.argmax(p, axis=1)] += 1
    return counts


def select(vote_counts: np.ndarray, min_votes: int) -> np.ndarray:
    """Indices of samples whose maximum vote count reaches min_votes."""
    counts = np.asarray(vote_counts)
    n_voters = int(counts[0].sum()) if counts.shape[0] else min_votes
    if not 1 <= min_votes <= n_voters:
        raise ValueError(f"min_votes must be in [1, {n_voters}], got {min_votes}")
    return np.flatnonzero(counts.max(axis=1) >= min_votes)


def assign(vote_counts: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Argmax class for each selected row; ties break to the lowest index."""
    counts = np.asarray(vote_counts)
    indices = np.asarray(indices, dtype=np.int64)
    return np.argmax(counts[indices], axis=1)


def pseudo_labels(predictions, min_votes: int) -> PseudoLabelSet:
    """Run vote, select, and assign in one pass."""
    counts = vote(predictions)
    indices = select(counts, min_votes)
    labels = assign(counts, indices)
    return PseudoLabelSet(indices=indices, labels=labels, vote_counts=counts)


def pl_accuracy(pseudo: PseudoLabelSet, true_labels: np.ndarray):
    """Diagnostic accuracy of the pseudo labels against ground truth.

    Returns (selected_count, correct_count, accuracy); accuracy is 0.0 by
    convention when nothing was selected. Evaluation-only: the true target
    labels never feed training.
    """
    selected = len(pseudo.indices)
    if selected == 0:
        return 0, 0, 0.0
    truth = np.asarray(true_labels)[pseudo.indices]
    correct = int(np.sum(pseudo.labels == truth))
    return selected, correct, correct / selected
