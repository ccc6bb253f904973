"""Verification and identification metrics over embedding sets.

All distances are Euclidean on L2-normalized vectors, which makes the
threshold sweeps scale-free (and equivalent to cosine similarity up to a
monotone transform). Threshold sweeps enumerate midpoints between
consecutive distinct distances plus both extremes, so they are exhaustive
over achievable classifications and fully deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ArgumentError, DimensionError, Tensor

__all__ = [
    "EmbeddingSet",
    "ValAtFarResult",
    "pair_distances",
    "verify_pairs",
    "best_verification_threshold",
    "val_at_far",
    "rank_k_identification",
    "write_embeddings_csv",
    "read_embeddings_csv",
]

MODALITIES = ("A", "B")


@dataclass(frozen=True)
class ValAtFarResult:
    """Validation rate at a bounded false-accept rate.

    ``feasible`` is False when no swept threshold satisfies the bound, in
    which case the rate is reported as 0.
    """

    rate: float
    feasible: bool
    threshold: float


class EmbeddingSet:
    """Embeddings with identity labels and a two-way modality tag per row."""

    def __init__(self, vectors, labels, modality):
        self.vectors = vectors if isinstance(vectors, Tensor) else Tensor(vectors)
        if self.vectors.data.ndim != 2:
            raise DimensionError(f"vectors must be [n x d], got shape {self.vectors.shape}")
        n = self.vectors.shape[0]
        self.labels = np.asarray(labels, dtype=np.int64)
        self.modality = np.asarray(list(modality), dtype="U1")
        if self.labels.shape != (n,) or self.modality.shape != (n,):
            raise DimensionError(
                f"labels and modality must both have length {n}, got "
                f"{self.labels.shape} and {self.modality.shape}"
            )
        if not set(self.modality.tolist()) <= set(MODALITIES):
            raise ArgumentError(f"modality tags must be one of {MODALITIES}")
        norms = np.linalg.norm(self.vectors.data, axis=1, keepdims=True)
        self._normalized = self.vectors.data / np.where(norms == 0.0, 1.0, norms)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def normalized(self) -> np.ndarray:
        return self._normalized

    def subset(self, mask: np.ndarray) -> "EmbeddingSet":
        return EmbeddingSet(self.vectors.data[mask], self.labels[mask], self.modality[mask])


def _check_pairs(pairs, size: int) -> list[tuple[int, int, bool]]:
    if not pairs:
        raise ArgumentError("pair list must not be empty")
    checked = []
    for i, j, same in pairs:
        if not (0 <= i < size and 0 <= j < size):
            raise ArgumentError(f"pair ({i}, {j}) outside embedding set of size {size}")
        checked.append((int(i), int(j), bool(same)))
    return checked


def pair_distances(pairs, embeddings: EmbeddingSet) -> tuple[np.ndarray, np.ndarray]:
    """Distances of the listed pairs and their same-identity flags."""
    checked = _check_pairs(pairs, len(embeddings))
    vecs = embeddings.normalized
    ii = np.asarray([p[0] for p in checked])
    jj = np.asarray([p[1] for p in checked])
    same = np.asarray([p[2] for p in checked])
    dist = np.linalg.norm(vecs[ii] - vecs[jj], axis=1)
    return dist, same


def verify_pairs(pairs, embeddings: EmbeddingSet, threshold: float) -> float:
    """Fraction of pairs classified correctly: 'same' iff distance < threshold."""
    dist, same = pair_distances(pairs, embeddings)
    predicted = dist < threshold
    return float(np.mean(predicted == same))


def _candidate_thresholds(dist: np.ndarray) -> np.ndarray:
    """Midpoints between distinct sorted distances, plus both extremes."""
    distinct = np.unique(dist)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([distinct[0] - 1.0], mids, [distinct[-1] + 1.0]))


def best_verification_threshold(pairs, embeddings: EmbeddingSet) -> tuple[float, float]:
    """The swept threshold that maximizes pair accuracy, with that accuracy."""
    dist, same = pair_distances(pairs, embeddings)
    best_threshold, best_acc = 0.0, -1.0
    for threshold in _candidate_thresholds(dist):
        acc = float(np.mean((dist < threshold) == same))
        if acc > best_acc:
            best_threshold, best_acc = float(threshold), acc
    return best_threshold, best_acc


def val_at_far(pairs, embeddings: EmbeddingSet, far_target: float) -> ValAtFarResult:
    """Max true-accept rate over thresholds whose false-accept rate stays
    within the target."""
    dist, same = pair_distances(pairs, embeddings)
    same_count = int(same.sum())
    diff_count = int((~same).sum())
    if same_count == 0 or diff_count == 0:
        raise ArgumentError("need at least one same pair and one different pair")
    best = ValAtFarResult(rate=0.0, feasible=False, threshold=float("nan"))
    for threshold in _candidate_thresholds(dist):
        accepted = dist < threshold
        far = float((accepted & ~same).sum()) / diff_count
        if far > far_target:
            continue
        rate = float((accepted & same).sum()) / same_count
        if not best.feasible or rate > best.rate:
            best = ValAtFarResult(rate=rate, feasible=True, threshold=float(threshold))
    return best


def rank_k_identification(gallery: EmbeddingSet, probes: EmbeddingSet, k: int) -> float:
    """Fraction of probes whose identity is among the k nearest gallery rows.

    Distance ties are broken by ascending gallery index.
    """
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    gallery_ids = set(gallery.labels.tolist())
    missing = [int(label) for label in probes.labels if int(label) not in gallery_ids]
    if missing:
        raise ArgumentError(f"probe identities missing from gallery: {sorted(set(missing))}")
    gvecs = gallery.normalized
    hits = 0
    for vec, label in zip(probes.normalized, probes.labels):
        dist = np.linalg.norm(gvecs - vec[None, :], axis=1)
        order = np.lexsort((np.arange(len(dist)), dist))
        if label in gallery.labels[order[:k]]:
            hits += 1
    return hits / len(probes)


# --------------------------------------------------------------------------
# offline embedding exchange: id,modality,v_0..v_{d-1}
# --------------------------------------------------------------------------

def write_embeddings_csv(embeddings: EmbeddingSet, path, comment: str | None = None) -> None:
    dim = embeddings.vectors.shape[1]
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "modality"] + [f"v_{j}" for j in range(dim)])
        for label, tag, row in zip(embeddings.labels, embeddings.modality,
                                   embeddings.vectors.data):
            writer.writerow([int(label), tag] + [repr(float(v)) for v in row])


def read_embeddings_csv(path) -> EmbeddingSet:
    with open(path, "r", newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if not header or header[:2] != ["id", "modality"]:
        raise ArgumentError(f"{path}: not an embeddings CSV (expected id,modality,v_* header)")
    labels, tags, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            labels.append(int(row[0]))
            tags.append(row[1])
            rows.append([float(v) for v in row[2:]])
            if len(rows[-1]) != len(header) - 2:
                raise ValueError
        except (ValueError, IndexError):
            raise ArgumentError(f"{path}: malformed row {lineno}") from None
    if not rows:
        raise ArgumentError(f"{path}: no embedding rows")
    return EmbeddingSet(np.asarray(rows), labels, tags)
