"""Per-utterance prompt search: CMA-ES over a latent translation vector."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cma import CmaState, cma_init, cma_should_stop, sample_matrix, update_from_arrays
from .errors import InvalidArgument
from .losses import LossBreakdown, LossConfig, batch_losses, breakdown_at, total_loss
from .metrics import greedy_decode
from .model import ModelWeights, Utterance, encode_cnn, forward_from_latent, inject_prompt
from .stats import SourceStats


@dataclass(frozen=True)
class AdaptConfig:
    population_size: int = 50
    max_iterations: int = 20
    min_delta: float = 0.001
    patience: int = 3
    sigma0: float = 0.1
    loss: LossConfig = field(default_factory=LossConfig)
    ema_mode: str = "t_ema"
    gamma: float = 0.9
    seed: int = 0
    # candidates per vectorized forward call; 0 evaluates the whole population at once
    parallel_eval_width: int = 0

    def __post_init__(self):
        if self.population_size < 4:
            raise InvalidArgument("population_size must be >= 4")
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if self.patience < 1:
            raise InvalidArgument("patience must be >= 1")
        if not self.sigma0 > 0:
            raise InvalidArgument("sigma0 must be positive")
        if self.ema_mode not in ("t_ema", "reset", "continuous"):
            raise InvalidArgument(f"unknown ema mode {self.ema_mode!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument("gamma must lie in [0, 1)")
        if self.parallel_eval_width < 0:
            raise InvalidArgument("parallel_eval_width must be >= 0")

    def initial_state(self, d: int) -> CmaState:
        return cma_init(d, self.population_size, self.sigma0)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = self.loss.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "AdaptConfig":
        data = dict(data)
        loss = LossConfig(**data.pop("loss", {}))
        return cls(loss=loss, **data)


@dataclass
class AdaptOutcome:
    best_prompt: np.ndarray
    best_loss: float
    decoded: str
    iterations_run: int
    loss_trace: list[float]
    breakdown: LossBreakdown
    final_cma: CmaState
    evaluations: int = 0
    nonfinite_candidates: int = 0
    best_posteriors: np.ndarray | None = None


def _evaluate(weights, stats, z, prompts, config: AdaptConfig):
    """Loss terms for a ``(J, d)`` prompt batch, evaluated in chunks."""
    width = config.parallel_eval_width or len(prompts)
    blank = stats.blank_index
    totals = np.full(len(prompts), np.inf)
    parts_all, posts = [], []
    for start in range(0, len(prompts), width):
        chunk = prompts[start:start + width]
        finite = np.all(np.isfinite(chunk), axis=1)
        safe = np.where(finite[:, None], chunk, 0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            bundle = forward_from_latent(weights, inject_prompt(z, safe, weights.d), cnn_out=z)
            parts = batch_losses(bundle.layer_states, bundle.posteriors, stats, config.loss, blank)
        t = np.where(finite & np.isfinite(parts["total"]), parts["total"], np.inf)
        totals[start:start + len(chunk)] = t
        parts_all.append(parts)
        posts.append(bundle.posteriors)
    return totals, parts_all, posts, width


def adapt_utterance(
    weights: ModelWeights,
    stats: SourceStats,
    utterance: Utterance,
    cma_in: CmaState,
    config: AdaptConfig,
    rng_seed: int,
) -> AdaptOutcome:
    """Search a translation prompt minimizing the adaptation loss for one utterance.

    The encoder runs once; each generation re-runs only the transformer and
    classifier for all candidates.  The best candidate over the whole
    trajectory is kept and decoded at the end.
    """
    if cma_in.dim != weights.d:
        raise InvalidArgument(f"optimizer dimension {cma_in.dim} != model width {weights.d}")
    if stats.d != weights.d or stats.num_states != weights.num_layers + 1:
        raise InvalidArgument("source stats shape does not match the model")
    if cma_in.population_size != config.population_size:
        raise InvalidArgument("optimizer population size differs from the configured one")
    z = encode_cnn(weights, utterance)
    seeds = np.random.SeedSequence(rng_seed).generate_state(config.max_iterations)

    state = cma_in
    best_loss = math.inf
    best_prompt = cma_in.mean.copy()
    best_parts = None
    best_post = None
    trace: list[float] = []
    evaluations = nonfinite = 0
    for k in range(config.max_iterations):
        xs = sample_matrix(state, int(seeds[k]))
        totals, parts_all, posts, width = _evaluate(weights, stats, z, xs, config)
        evaluations += len(xs)
        nonfinite += int(np.sum(~np.isfinite(totals)))
        i = int(np.argmin(totals))
        trace.append(float(totals[i]))
        if totals[i] < best_loss:
            best_loss = float(totals[i])
            best_prompt = xs[i].copy()
            best_parts = breakdown_at(parts_all[i // width], i % width)
            best_post = posts[i // width][i % width].copy()
        state = update_from_arrays(state, xs, totals)
        if cma_should_stop(trace, config.min_delta, patience=config.patience):
            break

    if best_post is None:
        # every candidate was non-finite: fall back to the search mean
        with np.errstate(over="ignore", invalid="ignore"):
            bundle = forward_from_latent(weights, inject_prompt(z, best_prompt, weights.d), cnn_out=z)
            best_parts = total_loss(bundle, stats, config.loss)
        best_post = bundle.posteriors
    return AdaptOutcome(
        best_prompt=best_prompt,
        best_loss=best_loss,
        decoded=greedy_decode(best_post, weights.vocab),
        iterations_run=len(trace),
        loss_trace=trace,
        breakdown=best_parts,
        final_cma=state,
        evaluations=evaluations,
        nonfinite_candidates=nonfinite,
        best_posteriors=best_post,
    )
