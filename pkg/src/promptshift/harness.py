"""Stream driver: adapt utterances one at a time, chain optimizer state
between them, checkpoint after each one, and summarize the run."""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .adapt import AdaptConfig, adapt_utterance
from .cma import CmaState
from .ema import EmaState, ema_update, next_init
from .errors import InputMismatch
from .losses import LOSS_VARIANTS
from .metrics import greedy_decode, word_errors
from .model import ModelWeights, Utterance, forward
from .stats import SourceStats

CHECKPOINT_VERSION = 1


def utterance_seed(seed: int, utterance: Utterance) -> int:
    """Search seed from the run seed and the frame content, so equal inputs search alike."""
    digest = hashlib.sha256(np.ascontiguousarray(utterance.frames, dtype="<f8").tobytes()).digest()
    return int(np.random.SeedSequence([seed, int.from_bytes(digest[:8], "little")]).generate_state(1)[0])


@dataclass
class RunResult:
    records: list[dict]
    aggregates: dict
    config: dict
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "aggregates": self.aggregates,
            "config": self.config,
            "wall_clock_s": self.wall_clock_s,
        }


def _blank_frames(posteriors: np.ndarray, blank: int) -> int:
    return int(np.sum(np.argmax(posteriors, axis=-1) == blank))


def aggregate(records: Sequence[dict], population_size: int, d: int, cma_values: int) -> dict:
    words = sum(r["words"] for r in records)
    frames = sum(r["frames"] for r in records)

    def rate(key):
        return sum(r[key] for r in records) / words if words else 0.0

    return {
        "utterances": len(records),
        "source_wer": rate("source_errors"),
        "adapted_wer": rate("adapted_errors"),
        "mean_iterations": float(np.mean([r["iterations"] for r in records])) if records else 0.0,
        "forward_passes": sum(r["evaluations"] for r in records),
        "blank_fraction": sum(r["blank_frames"] for r in records) / frames if frames else 0.0,
        "source_blank_fraction": sum(r["source_blank_frames"] for r in records) / frames if frames else 0.0,
        "nonfinite_candidates": sum(r["nonfinite_candidates"] for r in records),
        "prompt_values": d,
        "optimizer_values": cma_values,
        "population_size": population_size,
    }


def _record(t, utt, weights, stats, state, config) -> tuple[dict, CmaState]:
    blank = weights.vocab.blank_index
    source_post = forward(weights, utt).posteriors
    source_hyp = greedy_decode(source_post, weights.vocab)
    out = adapt_utterance(weights, stats, utt, state, config, utterance_seed(config.seed, utt))
    rec = {
        "index": t,
        "id": utt.utterance_id,
        "domain_tag": utt.domain_tag,
        "reference": utt.reference,
        "source_hypothesis": source_hyp,
        "adapted_hypothesis": out.decoded,
        "frames": utt.num_frames,
        "iterations": out.iterations_run,
        # one unadapted pass plus J per generation
        "evaluations": 1 + out.evaluations,
        "best_loss": out.best_loss,
        "loss_trace": out.loss_trace,
        "breakdown": out.breakdown.to_dict(),
        "nonfinite_candidates": out.nonfinite_candidates,
        "blank_frames": _blank_frames(out.best_posteriors, blank),
        "source_blank_frames": _blank_frames(source_post, blank),
        "best_prompt": out.best_prompt.tolist(),
    }
    if utt.reference:
        e_src, n = word_errors(source_hyp, utt.reference)
        e_ad, _ = word_errors(out.decoded, utt.reference)
        rec.update(words=n, source_errors=e_src, adapted_errors=e_ad,
                   source_wer=e_src / n, adapted_wer=e_ad / n)
    else:
        rec.update(words=0, source_errors=0, adapted_errors=0, source_wer=None, adapted_wer=None)
    return rec, out.final_cma


def _write_json_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def _fingerprint(config: AdaptConfig, weights: ModelWeights, stats: SourceStats, stream) -> dict:
    return {
        "config": config.to_dict(),
        "model_hash": weights.digest(),
        "stats_model_hash": stats.model_hash,
        "stream_ids": [u.utterance_id for u in stream],
    }


def run_stream(
    config: AdaptConfig,
    weights: ModelWeights,
    stats: SourceStats,
    stream: Sequence[Utterance],
    checkpoint: str | Path | None = None,
    resume: bool = False,
    stop_after: int | None = None,
    progress=None,
) -> RunResult:
    """Adapt ``stream`` in order, carrying optimizer state per ``config.ema_mode``.

    With ``checkpoint`` set, the driver state is saved after every utterance;
    ``resume=True`` continues from an existing checkpoint and yields records
    identical to an uninterrupted run.  ``stop_after`` ends the run early
    after that many utterances in total (used to simulate interruption).
    """
    stats.check_model(weights)
    started = time.perf_counter()
    fingerprint = _fingerprint(config, weights, stats, stream)
    initial = config.initial_state(weights.d)
    ema = EmaState.start(initial, config.gamma)
    state = initial
    records: list[dict] = []
    ckpt = Path(checkpoint) if checkpoint is not None else None
    if resume and ckpt is not None and ckpt.exists():
        saved = json.loads(ckpt.read_text())
        if saved.get("fingerprint") != fingerprint:
            raise InputMismatch("checkpoint was written for a different config, model or stream")
        records = saved["records"]
        ema = EmaState.from_dict(saved["ema"])
        state = CmaState.from_dict(saved["next_state"])

    for t in range(len(records), len(stream)):
        if stop_after is not None and t >= stop_after:
            break
        rec, finished = _record(t, stream[t], weights, stats, state, config)
        records.append(rec)
        ema = ema_update(ema, finished)
        state = next_init(ema, config.ema_mode, finished)
        if ckpt is not None:
            _write_json_atomic(ckpt, {
                "format_version": CHECKPOINT_VERSION,
                "fingerprint": fingerprint,
                "records": records,
                "ema": ema.to_dict(),
                "next_state": state.to_dict(),
            })
        if progress is not None:
            progress(rec)
    aggregates = aggregate(records, config.population_size, weights.d, initial.num_values())
    return RunResult(records, aggregates, config.to_dict(), time.perf_counter() - started)


@dataclass(frozen=True)
class Variant:
    loss: str = "full"
    ema_mode: str = "t_ema"

    @property
    def name(self) -> str:
        return f"{self.loss}/{self.ema_mode}"


def default_grid() -> list[Variant]:
    return [Variant(loss, mode) for loss in LOSS_VARIANTS for mode in ("t_ema", "reset", "continuous")]


def variant_config(config: AdaptConfig, variant: Variant) -> AdaptConfig:
    loss = replace(config.loss, **LOSS_VARIANTS[variant.loss])
    return replace(config, loss=loss, ema_mode=variant.ema_mode)


def run_ablation(
    config: AdaptConfig,
    weights: ModelWeights,
    stats: SourceStats,
    stream: Sequence[Utterance],
    grid: Iterable[Variant] | None = None,
    progress=None,
) -> list[dict]:
    """One :func:`run_stream` per variant; a row of WER and blank fraction for each."""
    rows = []
    for variant in grid or default_grid():
        result = run_stream(variant_config(config, variant), weights, stats, stream)
        agg = result.aggregates
        rows.append({
            "variant": variant.name,
            "loss": variant.loss,
            "ema_mode": variant.ema_mode,
            "source_wer": agg["source_wer"],
            "adapted_wer": agg["adapted_wer"],
            "blank_fraction": agg["blank_fraction"],
            "mean_iterations": agg["mean_iterations"],
        })
        if progress is not None:
            progress(rows[-1])
    return rows
