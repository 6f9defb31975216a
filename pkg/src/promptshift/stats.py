"""Source-domain statistics and the Fréchet mean/covariance shift split."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .container import read_container, write_container
from .errors import InputMismatch, InvalidArgument
from .model import ModelWeights, Utterance, forward

STATS_KIND = "source_stats"
# below this a covariance term is treated as zero and the ratio left undefined
COVARIANCE_FLOOR = 1e-10


def _fsum0(stack: np.ndarray) -> np.ndarray:
    """Exactly-rounded sum along axis 0, independent of the row order."""
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(col) for col in flat.T])
    return out.reshape(stack.shape[1:])


@dataclass(frozen=True)
class SourceStats:
    """Per-layer centroids plus per-class, per-layer token means and stds.

    ``token_means`` and ``token_stds`` are dense ``(V, L+1, d)`` arrays; rows
    of classes never predicted on the source corpus are zero and masked out
    by ``frame_counts == 0`` (see :meth:`token_keys`).
    """

    centroids: np.ndarray  # (L+1, d)
    token_means: np.ndarray  # (V, L+1, d)
    token_stds: np.ndarray
    frame_counts: np.ndarray  # (V,) int
    blank_index: int
    vocab_hash: str
    model_hash: str

    @property
    def num_states(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]

    def class_mask(self) -> np.ndarray:
        mask = self.frame_counts > 0
        mask[self.blank_index] = False
        return mask

    def token_keys(self) -> set[tuple[int, int]]:
        return {(int(v), l) for v in np.flatnonzero(self.class_mask()) for l in range(self.num_states)}

    def token_mean(self, v: int, l: int) -> np.ndarray:
        if (v, l) not in self.token_keys():
            raise KeyError((v, l))
        return self.token_means[v, l]

    def token_std(self, v: int, l: int) -> np.ndarray:
        if (v, l) not in self.token_keys():
            raise KeyError((v, l))
        return self.token_stds[v, l]

    def num_values(self) -> int:
        return self.centroids.size + self.token_means.size + self.token_stds.size

    def meta(self) -> dict:
        return {
            "vocab_hash": self.vocab_hash,
            "model_hash": self.model_hash,
            "num_states": self.num_states,
            "d": self.d,
            "blank_index": self.blank_index,
        }

    def check_model(self, weights: ModelWeights) -> None:
        if weights.digest() != self.model_hash:
            raise InputMismatch(f"stats were extracted with model {self.model_hash}, got {weights.digest()}")
        if weights.vocab.digest() != self.vocab_hash:
            raise InputMismatch("stats vocabulary does not match the model vocabulary")


def extract_stats(weights: ModelWeights, source_corpus: Sequence[Utterance]) -> SourceStats:
    """Forward the source corpus without a prompt and summarize its latents.

    Centroids average per-utterance frame means; token statistics pool all
    frames by argmax pseudo-label.  Sums use exact rounding, so the result is
    deterministic and unchanged when the corpus is duplicated or reordered.
    """
    if len(source_corpus) == 0:
        raise InvalidArgument("source corpus is empty")
    V = len(weights.vocab)
    blank = weights.vocab.blank_index
    utt_means, class_sums, class_counts, cached = [], [], [], []
    for utt in source_corpus:
        bundle = forward(weights, utt)
        states = np.stack(bundle.layer_states, axis=1)  # (N, L+1, d)
        labels = np.argmax(bundle.posteriors, axis=-1)
        onehot = (labels[:, None] == np.arange(V)).astype(float)
        utt_means.append(states.mean(axis=0))
        class_sums.append(np.einsum("nv,nld->vld", onehot, states))
        class_counts.append(onehot.sum(axis=0))
        cached.append((states, onehot))

    centroids = _fsum0(np.stack(utt_means)) / len(utt_means)
    counts = np.rint(np.sum(class_counts, axis=0)).astype(np.int64)
    counts[blank] = 0
    safe = np.maximum(counts, 1)[:, None, None]
    means = _fsum0(np.stack(class_sums)) / safe
    sq = []
    for states, onehot in cached:
        own = np.einsum("nv,vld->nld", onehot, means)
        sq.append(np.einsum("nv,nld->vld", onehot, (states - own) ** 2))
    stds = np.sqrt(_fsum0(np.stack(sq)) / safe)
    absent = counts == 0
    means[absent] = 0.0
    stds[absent] = 0.0
    return SourceStats(
        centroids=centroids,
        token_means=means,
        token_stds=stds,
        frame_counts=counts,
        blank_index=blank,
        vocab_hash=weights.vocab.digest(),
        model_hash=weights.digest(),
    )


def save_stats(stats: SourceStats, path: str | Path) -> None:
    tensors = {
        "centroids": stats.centroids,
        "token_means": stats.token_means,
        "token_stds": stats.token_stds,
        "frame_counts": stats.frame_counts,
    }
    write_container(path, STATS_KIND, tensors, meta=stats.meta(), dtype="<f8")


def load_stats(path: str | Path, weights: ModelWeights | None = None) -> SourceStats:
    """Read a stats file; with ``weights`` given, a hash mismatch raises :class:`InputMismatch`."""
    header, t = read_container(path, kind=STATS_KIND)
    meta = header["meta"]
    stats = SourceStats(
        centroids=t["centroids"],
        token_means=t["token_means"],
        token_stds=t["token_stds"],
        frame_counts=t["frame_counts"].astype(np.int64),
        blank_index=int(meta["blank_index"]),
        vocab_hash=meta["vocab_hash"],
        model_hash=meta["model_hash"],
    )
    if weights is not None:
        stats.check_model(weights)
    return stats


def inspect_stats(stats: SourceStats, tokens: Sequence[str] | None = None) -> dict:
    classes = {}
    for v in np.flatnonzero(stats.frame_counts):
        name = tokens[v] if tokens is not None else str(int(v))
        classes[name] = int(stats.frame_counts[v])
    return {
        **stats.meta(),
        "centroid_norms": [float(np.linalg.norm(c)) for c in stats.centroids],
        "frame_counts": classes,
        "stored_values": stats.num_values(),
    }


@dataclass(frozen=True)
class ShiftReport:
    mean_shift: float
    covariance_shift: float
    ratio: float | None
    sample_counts: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "mean_shift": self.mean_shift,
            "covariance_shift": self.covariance_shift,
            "ratio": self.ratio,
            "sample_counts": list(self.sample_counts),
        }


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def shift_report(embeddings_src, embeddings_tgt, jitter: float = 1e-6) -> ShiftReport:
    """Split the Fréchet distance between two sample sets into mean and covariance parts."""
    src = np.atleast_2d(np.asarray(embeddings_src, dtype=float))
    tgt = np.atleast_2d(np.asarray(embeddings_tgt, dtype=float))
    if src.shape[0] < 2 or tgt.shape[0] < 2:
        raise InvalidArgument("shift_report needs at least 2 samples per set")
    if src.shape[1] != tgt.shape[1]:
        raise InvalidArgument("embedding widths differ")
    if jitter < 0:
        raise InvalidArgument("jitter must be >= 0")
    eye = np.eye(src.shape[1])
    cov_s = np.cov(src, rowvar=False, ddof=1).reshape(eye.shape) + jitter * eye
    cov_t = np.cov(tgt, rowvar=False, ddof=1).reshape(eye.shape) + jitter * eye
    half = _psd_sqrt(cov_s)
    inner = half @ cov_t @ half
    w = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    cov_shift = float(np.trace(cov_s) + np.trace(cov_t) - 2.0 * np.sqrt(w).sum())
    mean_shift = float(np.sum((src.mean(axis=0) - tgt.mean(axis=0)) ** 2))
    ratio = mean_shift / cov_shift if cov_shift > COVARIANCE_FLOOR else None
    return ShiftReport(mean_shift, cov_shift, ratio, (src.shape[0], tgt.shape[0]))


def utterance_embeddings(weights: ModelWeights, corpus: Sequence[Utterance], layer: int = 0) -> np.ndarray:
    """Frame-mean of layer ``layer`` (0 is the encoder output) for each utterance."""
    if not 0 <= layer <= weights.num_layers:
        raise InvalidArgument(f"layer must be in [0, {weights.num_layers}]")
    return np.stack([forward(weights, u).layer_states[layer].mean(axis=0) for u in corpus])


def characterize_conditions(
    weights: ModelWeights,
    source_corpus: Sequence[Utterance],
    condition_corpora: Mapping[str, Sequence[Utterance]],
    layer: int = 0,
    jitter: float = 1e-6,
) -> list[dict]:
    """One shift row per condition, comparing equal-size samples of source and target."""
    src = utterance_embeddings(weights, source_corpus, layer)
    rows = []
    for label, corpus in condition_corpora.items():
        tgt = utterance_embeddings(weights, corpus, layer)
        n = min(len(src), len(tgt))
        rep = shift_report(src[:n], tgt[:n], jitter)
        rows.append({"condition": label, **rep.to_dict()})
    return rows
