"""Scheduled sampling: mixing gold and model tokens as decoder inputs."""

from __future__ import annotations

import numpy as np

from ..tensor import RngStream


def scheduled_sampling_step(p_use_gold, gold_token, model_token, rng: RngStream):
    """Gold token with probability ``p_use_gold``, else the model's token.

    Works elementwise on arrays of tokens (one draw per element).
    """
    if not 0.0 <= p_use_gold <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p_use_gold}")
    gold = np.asarray(gold_token)
    model = np.asarray(model_token)
    use_gold = rng.random(gold.shape) < p_use_gold
    out = np.where(use_gold, gold, model)
    return out.item() if out.ndim == 0 else out


def gold_probability(epoch: int, slope: float = 0.05, floor: float = 0.75) -> float:
    """Linear decay from 1.0 by ``slope`` per epoch (0-based), never below ``floor``."""
    return max(floor, 1.0 - slope * epoch)
