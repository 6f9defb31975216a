"""Synthetic utterance corpora built jointly with a constructed oracle model.

The oracle's encoder is ``GELU(conv2(conv1(x)))`` with orthogonal kernels, its
classifier scores each frame by its proximity to the encoder image of every
token prototype, and its transformer residual branches are small.  Clean
prototype sequences therefore decode to their references, and a constant
input shift ``v`` becomes (for the identity-activation encoder, exactly) the
latent translation ``A @ v``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .container import read_container, write_container
from .errors import GenerationFailure, InputMismatch, InvalidArgument
from .model import (
    ModelWeights,
    TransformerLayer,
    Utterance,
    Vocab,
    encode_cnn,
    gelu,
    round_to_float32,
)

LETTERS = "abcdefghijklmnopqrstuvwxyz"
GELU_ARGMIN = float(minimize_scalar(gelu, bracket=(-2.0, -0.5, 0.0)).x)


@dataclass(frozen=True)
class OracleDims:
    d_in: int = 24
    d: int = 24
    num_layers: int = 2
    heads: int = 2
    ff: int = 48


@dataclass(frozen=True)
class OracleParams:
    """Construction constants of the oracle model.

    The first ``content_dims`` input directions carry token identity and are
    encoded in GELU's near-linear range (``content_offset``).  The remaining
    energy directions are zero for every prototype and are encoded at the
    GELU minimum, where the slope vanishes: zero-mean input noise there
    rectifies into a common energy rise rather than passing through.  The
    blank row of the classifier reads the summed energy channels with weight
    ``energy_coupling``, so that rise pulls token frames towards blank.
    """

    content_dims: int = 12
    prototype_norm: float = 3.0
    jitter_radius: float = 0.4
    side_tap: float = 0.1
    content_offset: float = 4.0
    energy_gain: float = 8.0
    energy_coupling: float = 2.0
    logit_scale: float = 2.0
    blank_bonus: float = 0.0
    residual_scale: float = 0.05
    cnn_activation: str = "gelu"
    max_retries: int = 200


@dataclass
class PrototypeTable:
    prototypes: np.ndarray  # (|V|, d_in); the blank row is the silence frame
    images: np.ndarray  # (|V|, d) encoder images of the constant prototype frames
    jitter_radius: float
    content_dims: int
    centre: np.ndarray  # mean input frame, fixed point of covariance scaling

    def min_separation(self) -> float:
        diff = self.prototypes[:, None, :] - self.prototypes[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        return float(dist[np.triu_indices(len(dist), 1)].min())


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _draw_prototypes(rng, count: int, dim: int, norm: float, min_dist: float, retries: int):
    for attempt in range(retries):
        p = rng.standard_normal((count, dim))
        p *= norm / np.linalg.norm(p, axis=1, keepdims=True)
        diff = p[:, None, :] - p[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        if dist[np.triu_indices(count, 1)].min() >= min_dist:
            return p, attempt
    raise GenerationFailure(
        f"could not place {count} prototypes with separation {min_dist} after {retries} draws"
    )


def build_oracle(
    seed: int = 0,
    dims: OracleDims = OracleDims(),
    params: OracleParams = OracleParams(),
    vocab: Vocab = Vocab(),
) -> tuple[ModelWeights, PrototypeTable]:
    if dims.d != dims.d_in:
        raise InvalidArgument("the oracle encoder maps d_in to an equal width d")
    n, c = dims.d_in, params.content_dims
    if not 1 <= c <= n:
        raise InvalidArgument("content_dims must lie in [1, d_in]")
    rng = np.random.default_rng(seed)
    V = len(vocab)
    blank = vocab.blank_index

    # token prototypes on a sphere in the content subspace; silence at its
    # centre, equidistant from every token
    tokens, _ = _draw_prototypes(
        rng, V - 1, c, params.prototype_norm, 4 * params.jitter_radius, params.max_retries
    )
    protos = np.zeros((V, n))
    protos[np.arange(V) != blank, :c] = tokens
    pre_map = np.zeros((n, n))
    pre_map[:c, :c] = _orthogonal(rng, c)
    pre_map[c:, c:] = params.energy_gain * _orthogonal(rng, n - c)

    m1 = _orthogonal(rng, n)
    m2 = m1.T @ pre_map
    e = params.side_tap
    taps = np.array([e, 1 - 2 * e, e])[:, None, None]
    conv1_w, conv2_w = taps * m1, taps * m2
    conv1_b = np.zeros(n)
    conv2_b = np.zeros(n)
    conv2_b[:c] = params.content_offset
    if params.cnn_activation == "gelu":
        conv2_b[c:] = GELU_ARGMIN

    layers = []
    rs = params.residual_scale
    d, ff = dims.d, dims.ff
    for _ in range(dims.num_layers):
        layer = TransformerLayer.identity(d, ff)
        layer.wq = rng.standard_normal((d, d)) / np.sqrt(d)
        layer.wk = rng.standard_normal((d, d)) / np.sqrt(d)
        layer.wv = rng.standard_normal((d, d)) / np.sqrt(d)
        layer.wo = rs * rng.standard_normal((d, d)) / np.sqrt(d)
        layer.w1 = rng.standard_normal((d, ff)) / np.sqrt(d)
        layer.w2 = rs * rng.standard_normal((ff, d)) / np.sqrt(ff)
        layers.append(layer)

    weights = ModelWeights(
        conv1_w, conv1_b, conv2_w, conv2_b, layers, np.zeros((d, V)), np.zeros(V),
        dims.heads, params.cnn_activation, vocab,
    )
    weights = round_to_float32(weights)
    images = encode_cnn(weights, protos[:, None, :])[:, 0, :]
    k = params.logit_scale
    weights.cls_w = k * images.T
    weights.cls_b = -0.5 * k * (images**2).sum(axis=1)
    weights.cls_b[blank] += params.blank_bonus
    # blank also reads the summed energy channels; offset so clean frames,
    # whose energy channels all sit at the minimum, keep their logits
    weights.cls_w[c:, blank] += params.energy_coupling
    weights.cls_b[blank] -= params.energy_coupling * images[blank, c:].sum()
    weights = round_to_float32(weights)
    weights.validate()
    images = encode_cnn(weights, protos[:, None, :])[:, 0, :]
    table = PrototypeTable(protos, images, params.jitter_radius, c, protos.mean(axis=0))
    return weights, table


# ---------------------------------------------------------------- conditions


def _condition_tag(cond: dict) -> str:
    if "tag" in cond:
        return str(cond["tag"])
    kind = cond["type"]
    if kind == "clean":
        return "clean"
    if kind == "gaussian":
        return f"gaussian({cond['sigma']:g})"
    if kind == "translation":
        if "vector" in cond:
            return "translation(v)"
        return f"translation({cond['norm']:g},{cond.get('direction_seed', 0)})"
    if kind == "covariance_scale":
        lo, hi = cond["range"]
        return f"covariance_scale({lo:g},{hi:g})"
    raise InvalidArgument(f"unknown condition type {kind!r}")


def translation_vector(cond: dict, d_in: int) -> np.ndarray:
    if "vector" in cond:
        v = np.asarray(cond["vector"], dtype=float)
        if v.shape != (d_in,):
            raise InvalidArgument(f"translation vector must have length {d_in}")
        return v
    rng = np.random.default_rng(cond.get("direction_seed", 0))
    u = rng.standard_normal(d_in)
    return cond["norm"] * u / np.linalg.norm(u)


@dataclass
class CorpusSpec:
    seed: int = 0
    num_utterances: int = 200
    tokens_per_utterance: tuple[int, int] = (8, 14)
    frames_per_token: tuple[int, int] = (2, 4)
    blank_gap_frames: tuple[int, int] = (1, 3)
    word_length: tuple[int, int] = (2, 5)
    d_in: int = 24
    condition: dict = field(default_factory=lambda: {"type": "clean"})

    def __post_init__(self):
        for name in ("tokens_per_utterance", "frames_per_token", "blank_gap_frames", "word_length"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 1:
                raise InvalidArgument(f"{name} must be a non-empty range of positive integers")
            setattr(self, name, (int(lo), int(hi)))
        _check_condition(self.condition)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusSpec":
        data = dict(data)
        for key in ("tokens_per_utterance", "frames_per_token", "blank_gap_frames", "word_length"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def _check_condition(cond: dict) -> None:
    kind = cond.get("type")
    if kind == "mixed":
        if not cond.get("segments"):
            raise InvalidArgument("mixed condition needs segments")
        for seg in cond["segments"]:
            _check_condition(seg["condition"])
            if int(seg["count"]) < 0:
                raise InvalidArgument("segment count must be non-negative")
        return
    if kind == "gaussian" and not cond.get("sigma", -1) >= 0:
        raise InvalidArgument("gaussian sigma must be >= 0")
    if kind == "covariance_scale":
        lo, hi = cond["range"]
        if not 0 < lo <= hi:
            raise InvalidArgument("scale range must satisfy 0 < lo <= hi")
    _condition_tag(cond)


def _random_text(rng: np.random.Generator, spec: CorpusSpec) -> str:
    target = int(rng.integers(spec.tokens_per_utterance[0], spec.tokens_per_utterance[1] + 1))
    words: list[str] = []
    count = 0
    while count < target:
        n = int(rng.integers(spec.word_length[0], spec.word_length[1] + 1))
        words.append("".join(LETTERS[i] for i in rng.integers(0, 26, size=n)))
        count += n + (1 if len(words) > 1 else 0)
    return " ".join(words)


def _ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return direction * r[:, None]


def render(rng: np.random.Generator, text: str, table: PrototypeTable, spec: CorpusSpec,
           vocab: Vocab) -> np.ndarray:
    """Clean frames for ``text``: jittered prototypes separated by silence gaps."""
    ids: list[int] = []

    def gap():
        ids.extend([vocab.blank_index] * int(rng.integers(spec.blank_gap_frames[0], spec.blank_gap_frames[1] + 1)))

    gap()
    for tok in vocab.encode(text):
        ids.extend([tok] * int(rng.integers(spec.frames_per_token[0], spec.frames_per_token[1] + 1)))
        gap()
    ids_arr = np.array(ids)
    frames = table.prototypes[ids_arr].copy()
    frames[:, : table.content_dims] += _ball(rng, len(ids_arr), table.content_dims, table.jitter_radius)
    return frames


def _apply(cond: dict, frames: np.ndarray, rng: np.random.Generator, table: PrototypeTable) -> np.ndarray:
    kind = cond["type"]
    if kind == "clean":
        return frames
    if kind == "gaussian":
        noise = rng.standard_normal(frames.shape)
        return frames + cond["sigma"] * noise
    if kind == "translation":
        return frames + translation_vector(cond, frames.shape[1])
    if kind == "covariance_scale":
        lo, hi = cond["range"]
        s = rng.uniform(lo, hi)
        return table.centre + s * (frames - table.centre)
    raise InvalidArgument(f"unknown condition type {kind!r}")


def _segments(spec: CorpusSpec) -> list[tuple[dict, int]]:
    cond = spec.condition
    if cond["type"] == "mixed":
        return [(seg["condition"], int(seg["count"])) for seg in cond["segments"]]
    return [(cond, spec.num_utterances)]


def generate(spec: CorpusSpec, oracle: tuple[ModelWeights, PrototypeTable]) -> list[Utterance]:
    """Deterministic corpus for ``spec``.

    Text and clean frames come from ``seed``; condition noise comes from an
    independent stream, so two specs differing only in their condition share
    the same underlying clean utterances.
    """
    weights, table = oracle
    if spec.d_in != weights.d_in:
        raise InvalidArgument(f"corpus d_in {spec.d_in} != model d_in {weights.d_in}")
    text_rng = np.random.default_rng([spec.seed, 0])
    noise_rng = np.random.default_rng([spec.seed, 1])
    out = []
    idx = 0
    for cond, count in _segments(spec):
        tag = _condition_tag(cond)
        for _ in range(count):
            text = _random_text(text_rng, spec)
            frames = render(text_rng, text, table, spec, weights.vocab)
            frames = _apply(cond, frames, noise_rng, table)
            out.append(Utterance(frames, text, f"utt{idx:05d}", tag))
            idx += 1
    return out


def clean_twin(spec: CorpusSpec) -> CorpusSpec:
    """The same utterances with every condition replaced by ``clean``."""
    total = sum(count for _, count in _segments(spec))
    return CorpusSpec(**{**spec.to_dict(), "num_utterances": total, "condition": {"type": "clean"}})


# ------------------------------------------------------------------ file I/O

TABLE_KIND = "prototype_table"


def save_table(table: PrototypeTable, path: str | Path, model_hash: str) -> None:
    meta = {"jitter_radius": table.jitter_radius, "content_dims": table.content_dims, "model_hash": model_hash}
    tensors = {"prototypes": table.prototypes, "images": table.images, "centre": table.centre}
    write_container(path, TABLE_KIND, tensors, meta, dtype="<f8")


def load_table(path: str | Path, weights: ModelWeights | None = None) -> PrototypeTable:
    header, t = read_container(path, kind=TABLE_KIND)
    meta = header["meta"]
    if weights is not None and meta["model_hash"] != weights.digest():
        raise InputMismatch(f"prototype table belongs to model {meta['model_hash']}, got {weights.digest()}")
    return PrototypeTable(t["prototypes"], t["images"], float(meta["jitter_radius"]),
                          int(meta["content_dims"]), t["centre"])


def table_path(model_path: str | Path) -> Path:
    """Sidecar location of the prototype table written next to an oracle model."""
    model_path = Path(model_path)
    return model_path.with_name(model_path.stem + ".prototypes" + model_path.suffix)



def save_corpus(utterances: Sequence[Utterance], path: str | Path, meta: dict | None = None) -> None:
    """Write the frame payload as a container and a JSON-lines manifest next to it."""
    path = Path(path)
    frames = np.concatenate([u.frames for u in utterances]) if utterances else np.zeros((0, 0))
    write_container(path, "corpus", {"frames": frames}, dict(meta or {}), dtype="<f8")
    with open(manifest_path(path), "w") as fh:
        for u in utterances:
            fh.write(json.dumps({
                "id": u.utterance_id,
                "reference": u.reference,
                "domain_tag": u.domain_tag,
                "frames": u.num_frames,
            }) + "\n")


def manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".jsonl")


def load_corpus(path: str | Path) -> tuple[list[Utterance], dict]:
    header, tensors = read_container(path, kind="corpus")
    frames = tensors["frames"]
    out = []
    pos = 0
    with open(manifest_path(path)) as fh:
        for line in fh:
            rec = json.loads(line)
            n = rec["frames"]
            out.append(Utterance(frames[pos: pos + n], rec["reference"], rec["id"], rec["domain_tag"]))
            pos += n
    return out, header["meta"]


def corpus_digest(utterances: Sequence[Utterance]) -> str:
    h = hashlib.sha256()
    for u in utterances:
        h.update(json.dumps([u.utterance_id, u.reference, u.domain_tag]).encode())
        h.update(np.ascontiguousarray(u.frames, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def corpus_summary(utterances: Sequence[Utterance]) -> list[dict[str, Any]]:
    rows: dict[str, dict[str, Any]] = {}
    for u in utterances:
        row = rows.setdefault(u.domain_tag, {"domain_tag": u.domain_tag, "utterances": 0, "frames": 0, "words": 0})
        row["utterances"] += 1
        row["frames"] += u.num_frames
        row["words"] += len((u.reference or "").split())
    return list(rows.values())
