"""Multi-scale adaptation loss: blank-excluded entropy, utterance-level
centroid alignment and confidence-weighted token-level alignment.

Every function accepts leading batch axes on its array arguments so a whole
CMA-ES population is scored at once; the scalar case is just batch shape ().
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 2.0
    h_min: float = 0.0
    h_max: float = 5.0
    c_max: float = 2.0
    epsilon: float = 1e-8
    use_token: bool = True

    def __post_init__(self):
        if not self.h_max > self.h_min:
            raise InvalidArgument("h_max must exceed h_min")
        if not self.c_max > 0:
            raise InvalidArgument("c_max must be positive")
        if not self.epsilon > 0:
            raise InvalidArgument("epsilon must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


# ablation presets (loss panel of the ablation table)
LOSS_VARIANTS = {
    "ent": {"beta": 0.0, "use_token": False},
    "ent+utt": {"use_token": False},
    "full": {},
}


@dataclass
class LossBreakdown:
    l_ent: float
    l_utt: float
    l_token: float
    confidence_c: float
    total: float
    non_blank_count: int
    present_classes: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "l_ent": self.l_ent,
            "l_utt": self.l_utt,
            "l_token": self.l_token,
            "confidence_c": self.confidence_c,
            "total": self.total,
            "non_blank_count": self.non_blank_count,
            "present_classes": sorted(self.present_classes),
        }


def entropy_loss(posteriors: np.ndarray, blank_index: int):
    """Mean Shannon entropy (nats) over frames whose argmax is not blank.

    Returns ``(loss, count)``; both are arrays when ``posteriors`` is batched.
    An utterance with no non-blank frame scores ``(0, 0)``.
    """
    p = np.asarray(posteriors, dtype=float)
    keep = np.argmax(p, axis=-1) != blank_index
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    h = -plogp.sum(axis=-1)
    count = keep.sum(axis=-1)
    total = np.where(keep, h, 0.0).sum(axis=-1)
    loss = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    if loss.ndim == 0:
        return float(loss), int(count)
    return loss, count


def utterance_alignment_loss(layer_states: Sequence[np.ndarray], source_centroids: np.ndarray):
    """Mean over layers of ``||frame-mean - source centroid||^2``."""
    cents = np.asarray(source_centroids, dtype=float)
    if len(layer_states) != len(cents):
        raise InvalidArgument(f"{len(layer_states)} layer states but {len(cents)} source centroids")
    terms = []
    for states, mu_src in zip(layer_states, cents):
        if states.shape[-1] != mu_src.shape[-1]:
            raise InvalidArgument("layer width does not match centroid width")
        diff = states.mean(axis=-2) - mu_src
        terms.append((diff**2).sum(axis=-1))
    loss = np.mean(terms, axis=0)
    return float(loss) if np.ndim(loss) == 0 else loss


def class_statistics(layer_states: Sequence[np.ndarray], labels: np.ndarray, num_classes: int):
    """Per-class, per-layer frame counts, means and population stds.

    ``labels`` has shape ``(..., N)``; returns ``counts (..., V)`` and
    ``means, stds (..., V, L+1, d)``.  Absent classes get zero statistics.
    """
    onehot = (labels[..., :, None] == np.arange(num_classes)).astype(float)
    counts = onehot.sum(axis=-2)
    safe = np.maximum(counts, 1.0)[..., :, None]
    states = np.concatenate(list(layer_states), axis=-1)  # layers side by side
    pooled = np.swapaxes(onehot, -1, -2)
    m = (pooled @ states) / safe
    # two-pass variance: a single-frame class gets an exact zero std
    var = (pooled @ (states - onehot @ m) ** 2) / safe
    shape = m.shape[:-1] + (len(layer_states), -1)
    return counts, m.reshape(shape), np.sqrt(var).reshape(shape)


def token_alignment_loss(layer_states, posteriors, blank_index: int, source_stats):
    """Mean over layers and compared classes of squared mean and std gaps.

    A class is compared when it is non-blank, pseudo-labelled in at least one
    frame, and present in ``source_stats``.  Returns ``(loss, classes)``
    where ``classes`` is a set (scalar case) or a boolean ``(..., V)`` mask.
    """
    V = posteriors.shape[-1]
    labels = np.argmax(posteriors, axis=-1)
    counts, means, stds = class_statistics(layer_states, labels, V)
    comparable = (counts > 0) & source_stats.class_mask()
    comparable[..., blank_index] = False
    gap = ((means - source_stats.token_means) ** 2).sum(axis=-1)
    gap = gap + ((stds - source_stats.token_stds) ** 2).sum(axis=-1)
    per_class = gap.mean(axis=-1)  # average over the L+1 layers
    n = comparable.sum(axis=-1)
    loss = np.where(n > 0, np.where(comparable, per_class, 0.0).sum(axis=-1) / np.maximum(n, 1), 0.0)
    if np.ndim(loss) == 0:
        return float(loss), {int(v) for v in np.flatnonzero(comparable)}
    return loss, comparable


def adaptive_confidence(l_ent, l_utt, config: LossConfig):
    h = np.clip(np.asarray(l_ent) + np.asarray(l_utt), config.h_min, config.h_max)
    c = config.c_max - (h - config.h_min) / (config.h_max - config.h_min + config.epsilon)
    return float(c) if np.ndim(c) == 0 else c


def batch_losses(layer_states, posteriors, stats, config: LossConfig, blank_index: int) -> dict:
    """All loss terms for a (possibly batched) forward pass, as arrays."""
    if len(layer_states) != stats.num_states:
        raise InvalidArgument(
            f"source stats hold {stats.num_states} layer states, bundle has {len(layer_states)}"
        )
    l_ent, count = entropy_loss(posteriors, blank_index)
    l_utt = utterance_alignment_loss(layer_states, stats.centroids)
    c = adaptive_confidence(l_ent, l_utt, config)
    if config.use_token:
        l_tok, classes = token_alignment_loss(layer_states, posteriors, blank_index, stats)
    else:
        l_tok = np.zeros_like(np.asarray(l_ent, dtype=float))
        classes = set() if np.ndim(l_ent) == 0 else None
    total = config.alpha * np.asarray(l_ent) + config.beta * np.asarray(l_utt) + np.asarray(c) * l_tok
    return {
        "l_ent": l_ent, "non_blank_count": count, "l_utt": l_utt, "confidence_c": c,
        "l_token": l_tok, "present_classes": classes, "total": total,
    }


def total_loss(bundle, stats, config: LossConfig) -> LossBreakdown:
    blank = stats.blank_index
    parts = batch_losses(bundle.layer_states, bundle.posteriors, stats, config, blank)
    if np.ndim(parts["total"]) != 0:
        raise InvalidArgument("total_loss expects an unbatched bundle; use batch_losses")
    return breakdown_at(parts, None)


def breakdown_at(parts: dict, index: int | None) -> LossBreakdown:
    """Extract one candidate's :class:`LossBreakdown` from :func:`batch_losses` output."""
    def pick(key):
        v = parts[key]
        return v if index is None else np.asarray(v)[index]

    classes = parts["present_classes"]
    if index is not None:
        classes = set() if classes is None else {int(v) for v in np.flatnonzero(classes[index])}
    return LossBreakdown(
        l_ent=float(pick("l_ent")),
        l_utt=float(pick("l_utt")),
        l_token=float(pick("l_token")),
        confidence_c=float(pick("confidence_c")),
        total=float(pick("total")),
        non_blank_count=int(pick("non_blank_count")),
        present_classes=set(classes),
    )
