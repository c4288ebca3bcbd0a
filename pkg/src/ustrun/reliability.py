"""Hardness scoring, the reliable-sample queue and unreliable-sample pasting."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .grid import blend, confidence_mask
from .masks import foreground_union_box


def label_dice(a: np.ndarray, b: np.ndarray, num_classes: int) -> float:
    """Mean foreground-class Dice of two label fields; a class absent from both scores 1."""
    scores = []
    for k in range(1, num_classes):
        ak, bk = a == k, b == k
        total = ak.sum() + bk.sum()
        scores.append(1.0 if total == 0 else 2.0 * np.logical_and(ak, bk).sum() / total)
    return float(np.mean(scores))


def hardness(teacher_label: np.ndarray, student_label: np.ndarray, num_classes: int = 2) -> float:
    return 1.0 - label_dice(teacher_label, student_label, num_classes)


@dataclass
class ReliableEntry:
    sample: np.ndarray      # weak view u^w, (D, H, W)
    prob: np.ndarray        # teacher probabilities, (C, H, W)
    label: np.ndarray       # teacher pseudo-label, (H, W)
    hardness: float
    sample_id: int = -1


@dataclass
class ReliableQueue:
    """FIFO of capacity K gated by a self-adjusting hardness threshold.

    Overflow pops the oldest entry and pulls the threshold down to the
    hardest retained entry; an iteration without admissions raises it by a
    factor ``delta``. The threshold never drops below ``gamma0``.
    """
    capacity: int = 20
    gamma0: float = 0.05
    delta: float = 1.0005
    gamma: float = field(default=None)
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = self.gamma0
        if self.delta <= 1:
            raise ValueError("delta must be > 1")

    def __len__(self):
        return len(self.entries)

    def try_admit(self, entry: ReliableEntry) -> bool:
        if not entry.hardness < self.gamma:
            return False
        self.entries.append(entry)
        if len(self.entries) > self.capacity:
            self.entries.popleft()
            self.gamma = max(self.gamma0, max(e.hardness for e in self.entries))
        return True

    def relax_threshold(self) -> None:
        self.gamma = max(self.gamma0, self.delta * self.gamma)

    def sample(self, rng: np.random.Generator) -> ReliableEntry:
        return self.entries[int(rng.integers(len(self.entries)))]

    def mean_hardness(self) -> float:
        return float(np.mean([e.hardness for e in self.entries])) if self.entries else float("nan")


def pick_unreliable(hardness_scores) -> int:
    scores = np.asarray(hardness_scores, dtype=float)
    if scores.size == 0:
        raise ValueError("cannot pick from an empty batch")
    return int(np.argmax(scores))


def build_unreliable_intermediate(labeled_image, labeled_label, unreliable_image,
                                  unreliable_prob, tau: float):
    """Paste the labeled image into a hard sample over the box of both foregrounds.

    Returns ``(sample, label, weight)``. Inside the box the ground truth is
    trusted outright; outside it the sample's own confident pseudo-label is used.
    """
    pseudo = np.argmax(unreliable_prob, axis=0)
    box = foreground_union_box(pseudo, labeled_label)
    sample = blend(labeled_image, unreliable_image, box)
    label = blend(labeled_label, pseudo, box)
    weight = np.maximum(box, confidence_mask(unreliable_prob, tau)).astype(np.uint8)
    return sample, label, weight
