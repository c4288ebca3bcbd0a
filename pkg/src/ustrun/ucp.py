"""Unified copy-paste and the symmetric pseudo-label merge."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import argmax_field, blend, confidence_mask
from .masks import mask_xor_agreement


@dataclass(frozen=True)
class IntermediatePair:
    """Both paste directions built from one mask.

    ``*_in``: source pasted into the unlabeled image (source inside the mask).
    ``*_out``: unlabeled content kept inside the mask, source around it.
    """
    sample_in: np.ndarray
    sample_out: np.ndarray
    prob_in: np.ndarray
    prob_out: np.ndarray
    label_in: np.ndarray
    label_out: np.ndarray
    weight_in: np.ndarray
    weight_out: np.ndarray
    mask: np.ndarray


def compose_ucp(source_image: np.ndarray, source_prob: np.ndarray,
                unlabeled_image: np.ndarray, unlabeled_prob: np.ndarray,
                mask: np.ndarray, tau: float) -> IntermediatePair:
    """Build the in/out intermediates, their probability maps, labels and weights.

    ``source_prob`` is either a one-hot ground truth or the stored teacher
    probabilities of a reliable sample. Weights are recomputed from the
    composited probabilities; one-hot regions always clear ``tau``.
    """
    prob_in = blend(source_prob, unlabeled_prob, mask)
    prob_out = blend(unlabeled_prob, source_prob, mask)
    return IntermediatePair(
        sample_in=blend(source_image, unlabeled_image, mask),
        sample_out=blend(unlabeled_image, source_image, mask),
        prob_in=prob_in,
        prob_out=prob_out,
        label_in=argmax_field(prob_in),
        label_out=argmax_field(prob_out),
        weight_in=confidence_mask(prob_in, tau),
        weight_out=confidence_mask(prob_out, tau),
        mask=mask,
    )


def merge_intermediate_pseudolabels(pred_on_in: np.ndarray, pred_on_out: np.ndarray,
                                    mask: np.ndarray, tau: float):
    """Stitch the unlabeled regions of the teacher's two intermediate predictions.

    Inside the mask the unlabeled content sits in the "out" sample, outside it
    in the "in" sample. Returns ``(merged_label, merged_weight)``.
    """
    q_mg = blend(argmax_field(pred_on_out), argmax_field(pred_on_in), mask)
    w_mg = blend(confidence_mask(pred_on_out, tau), confidence_mask(pred_on_in, tau), mask)
    return q_mg, w_mg


def ensemble_weight(q_direct, q_merged, w, w_mg) -> np.ndarray:
    return mask_xor_agreement(q_direct, q_merged) * w * w_mg
