"""Shipped corpus specs and the calibration search that keeps them meaningful.

Shift magnitudes are expressed in the oracle's input units.  The defaults
were produced by :func:`calibrate` against ``build_oracle(0)``; the search is
rerun whenever a different oracle leaves a preset too mild or too harsh.
"""

from __future__ import annotations

from typing import Callable, Sequence

from .corpus import CorpusSpec, generate
from .errors import InvalidArgument
from .metrics import corpus_wer, greedy_decode
from .model import ModelWeights, Utterance, forward

NOISE_LEVELS = 5
NOISE_STEP = 0.05
TRANSLATION_NORM = 2.0
TRANSLATION_DIRECTION = 3


def source(num_utterances: int = 200) -> CorpusSpec:
    return CorpusSpec(seed=0, num_utterances=num_utterances)


def translation(norm: float = TRANSLATION_NORM, num_utterances: int = 200, seed: int = 1) -> CorpusSpec:
    cond = {"type": "translation", "norm": norm, "direction_seed": TRANSLATION_DIRECTION}
    return CorpusSpec(seed=seed, num_utterances=num_utterances, condition=cond)


def gaussian(sigma: float, num_utterances: int = 200, seed: int = 2) -> CorpusSpec:
    return CorpusSpec(seed=seed, num_utterances=num_utterances, condition={"type": "gaussian", "sigma": sigma})


def noise_ladder(step: float = NOISE_STEP, num_utterances: int = 200, seed: int = 2) -> list[CorpusSpec]:
    """Five graded noise levels ``0, step, ..., 4*step`` over the same clean utterances."""
    return [gaussian(k * step, num_utterances, seed) for k in range(NOISE_LEVELS)]


def covariance_scale(num_utterances: int = 200, seed: int = 3) -> CorpusSpec:
    cond = {"type": "covariance_scale", "range": [0.25, 1.75]}
    return CorpusSpec(seed=seed, num_utterances=num_utterances, condition=cond)


def mixed(count: int = 50, seed: int = 4) -> CorpusSpec:
    """Two translation environments back to back."""
    segments = [
        {"condition": {"type": "translation", "norm": TRANSLATION_NORM, "direction_seed": s}, "count": count}
        for s in (TRANSLATION_DIRECTION, TRANSLATION_DIRECTION + 1)
    ]
    return CorpusSpec(seed=seed, num_utterances=2 * count, condition={"type": "mixed", "segments": segments})


def presets() -> dict[str, CorpusSpec]:
    out = {"source": source(), "translation": translation(), "covariance_scale": covariance_scale(),
           "mixed": mixed()}
    for k, spec in enumerate(noise_ladder()):
        out[f"gaussian_{k}"] = spec
    return out


def get_preset(name: str) -> CorpusSpec:
    table = presets()
    if name not in table:
        raise InvalidArgument(f"unknown preset {name!r}; choose from {sorted(table)}")
    return table[name]


def unadapted_wer(weights: ModelWeights, utterances: Sequence[Utterance]) -> float:
    pairs = [(greedy_decode(forward(weights, u).posteriors, weights.vocab), u.reference) for u in utterances]
    return corpus_wer(pairs)


def calibrate(
    oracle,
    make_spec: Callable[[float], CorpusSpec],
    target_wer: float,
    lo: float,
    hi: float,
    iterations: int = 12,
) -> float:
    """Smallest magnitude in ``[lo, hi]`` whose un-adapted WER reaches ``target_wer``.

    Bisection assumes WER grows with the magnitude; raises if even ``hi``
    falls short.
    """
    weights = oracle[0]

    def wer(x):
        return unadapted_wer(weights, generate(make_spec(x), oracle))

    if wer(hi) < target_wer:
        raise InvalidArgument(f"magnitude {hi} does not reach WER {target_wer}")
    if wer(lo) >= target_wer:
        return lo
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if wer(mid) >= target_wer:
            hi = mid
        else:
            lo = mid
    return hi


def calibrated_translation(oracle, target_wer: float = 0.3, num_utterances: int = 200) -> CorpusSpec:
    """The default translation preset, or a stronger one if it degrades too little."""
    spec = translation(num_utterances=num_utterances)
    if unadapted_wer(oracle[0], generate(spec, oracle)) >= target_wer:
        return spec
    norm = calibrate(oracle, lambda x: translation(x, num_utterances), target_wer, 0.1, 10.0)
    return translation(norm, num_utterances)


def calibrated_ladder(oracle, top_wer: float = 0.3, num_utterances: int = 100) -> list[CorpusSpec]:
    """The default ladder, re-scaled when its top level degrades less than ``top_wer``."""
    specs = noise_ladder(num_utterances=num_utterances)
    if unadapted_wer(oracle[0], generate(specs[-1], oracle)) >= top_wer:
        return specs
    top = calibrate(oracle, lambda s: gaussian(s, num_utterances), top_wer, 0.01, 2.0)
    return noise_ladder(top / (NOISE_LEVELS - 1), num_utterances)
