"""Toy forward-only CTC acoustic model: conv frame encoder followed by a
pre-norm transformer stack and a linear classifier.

All forward functions accept arrays with arbitrary leading batch axes, so the
J candidate prompts of one CMA-ES generation are evaluated in a single call.
"""

from __future__ import annotations

import hashlib
import json
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import read_container, write_container
from .errors import InvalidArgument

SPECIAL_TOKENS = ("<blank>", "<s>", "</s>", "<unk>", "|", "'")
WORD_SEPARATOR = "|"


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...] = SPECIAL_TOKENS + tuple(string.ascii_lowercase)
    blank_index: int = 0

    def __post_init__(self):
        if not 0 <= self.blank_index < len(self.tokens):
            raise InvalidArgument("blank_index out of range")

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> int:
        return self.tokens.index(token)

    def encode(self, text: str) -> list[int]:
        """Map a transcript to token ids; spaces become the word separator."""
        return [self.index(WORD_SEPARATOR if ch == " " else ch) for ch in text]

    def digest(self) -> str:
        payload = json.dumps([list(self.tokens), self.blank_index]).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class Utterance:
    frames: np.ndarray
    reference: str | None = None
    utterance_id: str = ""
    domain_tag: str = "clean"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise InvalidArgument("an utterance needs a (N>=1, d_in) frame matrix")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class LatentBundle:
    """Per-layer latent states of one forward pass.

    ``cnn_out`` is the encoder output before prompt injection;
    ``layer_states[0]`` is the (possibly prompted) transformer input and
    ``layer_states[l]`` the output of transformer layer ``l``.
    """

    cnn_out: np.ndarray
    layer_states: list[np.ndarray]
    posteriors: np.ndarray


@dataclass
class TransformerLayer:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    FIELDS = (
        "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln2_g", "ln2_b", "w1", "b1", "w2", "b2",
    )

    @classmethod
    def identity(cls, d: int, ff: int) -> "TransformerLayer":
        """A layer whose residual branches output exactly zero."""
        z = np.zeros
        return cls(
            np.ones(d), z(d), z((d, d)), z(d), z((d, d)), z(d), z((d, d)), z(d),
            z((d, d)), z(d), np.ones(d), z(d), z((d, ff)), z(ff), z((ff, d)), z(d),
        )


@dataclass
class ModelWeights:
    conv1_w: np.ndarray  # (3, d_in, d) taps for frames t-1, t, t+1
    conv1_b: np.ndarray
    conv2_w: np.ndarray  # (3, d, d)
    conv2_b: np.ndarray
    layers: list[TransformerLayer]
    cls_w: np.ndarray  # (d, |V|)
    cls_b: np.ndarray
    heads: int = 2
    cnn_activation: str = "gelu"
    vocab: Vocab = field(default_factory=Vocab)

    @property
    def d_in(self) -> int:
        return self.conv1_w.shape[1]

    @property
    def d(self) -> int:
        return self.conv1_w.shape[2]

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def ff(self) -> int:
        return self.layers[0].w1.shape[1] if self.layers else 0

    def tensors(self) -> dict[str, np.ndarray]:
        out = {
            "cnn.conv1.weight": self.conv1_w,
            "cnn.conv1.bias": self.conv1_b,
            "cnn.conv2.weight": self.conv2_w,
            "cnn.conv2.bias": self.conv2_b,
        }
        for i, layer in enumerate(self.layers):
            for name in TransformerLayer.FIELDS:
                out[f"transformer.{i}.{name}"] = getattr(layer, name)
        out["classifier.weight"] = self.cls_w
        out["classifier.bias"] = self.cls_b
        return out

    def meta(self) -> dict:
        return {
            "d_in": self.d_in,
            "d": self.d,
            "num_layers": self.num_layers,
            "heads": self.heads,
            "ff": self.ff,
            "cnn_activation": self.cnn_activation,
            "vocab": list(self.vocab.tokens),
            "blank_index": self.vocab.blank_index,
        }

    def digest(self) -> str:
        """SHA-256 over the meta header and every tensor's float32 bytes."""
        h = hashlib.sha256(json.dumps(self.meta(), sort_keys=True).encode())
        for name, arr in self.tensors().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()[:16]

    def validate(self) -> None:
        d = self.d
        if self.conv1_w.shape[0] != 3 or self.conv2_w.shape != (3, d, d):
            raise InvalidArgument("conv kernels must have 3 taps and consistent widths")
        if self.cls_w.shape != (d, len(self.vocab)) or self.cls_b.shape != (len(self.vocab),):
            raise InvalidArgument("classifier shape does not match width and vocabulary")
        if d % self.heads:
            raise InvalidArgument("model width must be divisible by the head count")
        if self.cnn_activation not in ("gelu", "identity"):
            raise InvalidArgument(f"unknown activation {self.cnn_activation!r}")
        for arr in self.tensors().values():
            if not np.all(np.isfinite(arr)):
                raise InvalidArgument("weights contain non-finite entries")


def round_to_float32(weights: ModelWeights) -> ModelWeights:
    """Round every tensor to float32 precision so archive round-trips are exact."""
    def r(a):
        return np.asarray(a, dtype=np.float32).astype(np.float64)

    layers = [
        TransformerLayer(**{n: r(getattr(layer, n)) for n in TransformerLayer.FIELDS})
        for layer in weights.layers
    ]
    return ModelWeights(
        r(weights.conv1_w), r(weights.conv1_b), r(weights.conv2_w), r(weights.conv2_b),
        layers, r(weights.cls_w), r(weights.cls_b), weights.heads, weights.cnn_activation,
        weights.vocab,
    )


def save_weights(weights: ModelWeights, path: str | Path) -> None:
    write_container(path, "weights", weights.tensors(), weights.meta(), dtype="<f4")


def load_weights(path: str | Path) -> ModelWeights:
    header, t = read_container(path, kind="weights")
    meta = header["meta"]
    layers = [
        TransformerLayer(**{n: t[f"transformer.{i}.{n}"] for n in TransformerLayer.FIELDS})
        for i in range(meta["num_layers"])
    ]
    weights = ModelWeights(
        t["cnn.conv1.weight"], t["cnn.conv1.bias"], t["cnn.conv2.weight"], t["cnn.conv2.bias"],
        layers, t["classifier.weight"], t["classifier.bias"], meta["heads"],
        meta["cnn_activation"], Vocab(tuple(meta["vocab"]), meta["blank_index"]),
    )
    weights.validate()
    return weights


def gelu(x: np.ndarray) -> np.ndarray:
    inner = 0.7978845608028654 * x * (1.0 + 0.044715 * x * x)
    return 0.5 * x * (1.0 + np.tanh(inner))


def _conv3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # replicate padding keeps a constant input shift constant at the edges
    padded = np.concatenate([x[..., :1, :], x, x[..., -1:, :]], axis=-2)
    return padded[..., :-2, :] @ w[0] + padded[..., 1:-1, :] @ w[1] + padded[..., 2:, :] @ w[2] + b


def layer1(weights: ModelWeights, frames: np.ndarray) -> np.ndarray:
    """The purely linear first convolution."""
    return _conv3(frames, weights.conv1_w, weights.conv1_b)


def encode_cnn(weights: ModelWeights, utterance: Utterance | np.ndarray) -> np.ndarray:
    frames = utterance.frames if isinstance(utterance, Utterance) else np.asarray(utterance, float)
    if frames.shape[-1] != weights.d_in:
        raise InvalidArgument(f"frame width {frames.shape[-1]} != model input width {weights.d_in}")
    h = _conv3(layer1(weights, frames), weights.conv2_w, weights.conv2_b)
    return gelu(h) if weights.cnn_activation == "gelu" else h


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _attention(layer: TransformerLayer, x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape[-2:]
    dh = d // heads

    def split(a):
        return np.swapaxes(a.reshape(a.shape[:-1] + (heads, dh)), -2, -3)

    q = split(x @ layer.wq + layer.bq)
    k = split(x @ layer.wk + layer.bk)
    v = split(x @ layer.wv + layer.bv)
    att = _softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(dh))
    out = np.swapaxes(att @ v, -2, -3).reshape(x.shape)
    return out @ layer.wo + layer.bo


def transformer_layer(layer: TransformerLayer, x: np.ndarray, heads: int) -> np.ndarray:
    h = x + _attention(layer, _layer_norm(x, layer.ln1_g, layer.ln1_b), heads)
    return h + gelu(_layer_norm(h, layer.ln2_g, layer.ln2_b) @ layer.w1 + layer.b1) @ layer.w2 + layer.b2


def forward_from_latent(weights: ModelWeights, latent: np.ndarray, cnn_out: np.ndarray | None = None) -> LatentBundle:
    latent = np.asarray(latent, dtype=float)
    if latent.shape[-1] != weights.d:
        raise InvalidArgument(f"latent width {latent.shape[-1]} != model width {weights.d}")
    if not np.all(np.isfinite(latent)):
        raise InvalidArgument("latent contains non-finite values")
    states = [latent]
    x = latent
    for layer in weights.layers:
        x = transformer_layer(layer, x, weights.heads)
        states.append(x)
    post = _softmax(x @ weights.cls_w + weights.cls_b)
    return LatentBundle(latent if cnn_out is None else cnn_out, states, post)


def inject_prompt(cnn_out: np.ndarray, prompt: np.ndarray | None, d: int) -> np.ndarray:
    """Add the prompt to every frame row; a ``(J, d)`` prompt batch gives ``(J, N, d)``."""
    if prompt is None:
        return cnn_out
    prompt = np.asarray(prompt, dtype=float)
    if prompt.shape[-1] != d:
        raise InvalidArgument(f"prompt length {prompt.shape[-1]} != model width {d}")
    return cnn_out + prompt[..., None, :]


def forward(weights: ModelWeights, utterance: Utterance | np.ndarray, prompt: np.ndarray | None = None) -> LatentBundle:
    z = encode_cnn(weights, utterance)
    if prompt is not None and np.shape(prompt)[-1] != weights.d:
        raise InvalidArgument(f"prompt length {np.shape(prompt)[-1]} != model width {weights.d}")
    return forward_from_latent(weights, inject_prompt(z, prompt, weights.d), cnn_out=z)


def effective_linear_map(weights: ModelWeights) -> np.ndarray:
    """The encoder's action on a constant input shift, as a ``(d_in, d)`` matrix.

    Exact for the identity-activation encoder; for the GELU encoder it is
    the pre-activation map.
    """
    return weights.conv1_w.sum(axis=0) @ weights.conv2_w.sum(axis=0)


def describe(path: str | Path) -> dict:
    from .container import read_header

    header = read_header(path)
    header.pop("_payload_start", None)
    return header


def bundle_rows(bundle: LatentBundle, index: int) -> LatentBundle:
    """Slice one element out of a batched bundle."""
    return LatentBundle(
        bundle.cnn_out,
        [s[index] for s in bundle.layer_states],
        bundle.posteriors[index],
    )


def stack_prompts(prompts: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.asarray(p, dtype=float) for p in prompts])


def random_weights(
    seed: int,
    d_in: int,
    d: int,
    num_layers: int = 2,
    heads: int = 2,
    ff: int | None = None,
    vocab: Vocab | None = None,
    cnn_activation: str = "gelu",
    scale: float = 0.5,
) -> ModelWeights:
    """A model with Gaussian weights; useful for property tests, not decoding."""
    rng = np.random.default_rng(seed)
    vocab = vocab or Vocab()
    ff = ff or 2 * d

    def g(*shape, s=scale):
        return s * rng.standard_normal(shape) / np.sqrt(shape[-2] if len(shape) > 1 else 1)

    layers = []
    for _ in range(num_layers):
        layers.append(TransformerLayer(
            1.0 + 0.1 * rng.standard_normal(d), 0.1 * rng.standard_normal(d),
            g(d, d), g(d), g(d, d), g(d), g(d, d), g(d), g(d, d), g(d),
            1.0 + 0.1 * rng.standard_normal(d), 0.1 * rng.standard_normal(d),
            g(d, ff), g(ff), g(ff, d), g(d),
        ))
    weights = ModelWeights(
        g(3, d_in, d), g(d), g(3, d, d), g(d), layers, g(d, len(vocab), s=2.0), g(len(vocab)),
        heads, cnn_activation, vocab,
    )
    weights.validate()
    return round_to_float32(weights)
