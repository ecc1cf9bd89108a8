"""Reward law for verified responses.

Three pieces: a binary accuracy reward, an entropy reward that decays
with the cumulative-average entropy at the final step, and the segmented
combination that only pays the entropy component on correct answers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidInputError

__all__ = ["RewardBundle", "accuracy_reward", "teca_reward", "segmented_reward", "score_response"]


def accuracy_reward(prediction, ground_truth) -> int:
    """1 iff the prediction equals the ground truth, else 0.

    ``None`` marks an absent prediction (no parseable answer) and never
    matches any ground truth.
    """
    return int(prediction is not None and prediction == ground_truth)


def teca_reward(teca_last: float) -> float:
    """exp(-teca_last) + 1, strictly decreasing in the final cumulative entropy.

    The value lies in (1, 2]: 2 at zero entropy, approaching 1 as the
    cumulative average grows.
    """
    if not (math.isfinite(teca_last) and teca_last >= 0):
        raise InvalidInputError("teca_last must be finite and nonnegative")
    return math.exp(-teca_last) + 1.0


def segmented_reward(accuracy: int, teca_rw: float) -> float:
    """Combined reward: accuracy alone when wrong, mean of both when right.

    Incorrect responses score exactly 0 regardless of the entropy term,
    so any correct response (> 1) outranks any incorrect one.
    """
    if accuracy not in (0, 1):
        raise InvalidInputError("accuracy must be 0 or 1")
    if accuracy == 0:
        return 0.0
    return (accuracy + teca_rw) / 2.0


@dataclass(frozen=True)
class RewardBundle:
    """All reward components for one response."""

    accuracy: int
    teca_reward: float
    combined: float
    teca_last: float


def score_response(correct: bool | int, teca_last: float) -> RewardBundle:
    """Build the full reward bundle for a response."""
    acc = int(bool(correct))
    rte = teca_reward(teca_last)
    return RewardBundle(accuracy=acc, teca_reward=rte,
                        combined=segmented_reward(acc, rte), teca_last=float(teca_last))
