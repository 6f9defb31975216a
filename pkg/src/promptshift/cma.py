"""(mu/mu_w, lambda)-CMA-ES with rank-one + rank-mu covariance update and CSA.

The state is a plain value: :func:`cma_sample` never mutates it and
:func:`cma_update` returns a fresh :class:`CmaState`.  Strategy constants
follow Hansen's tutorial defaults and are recomputed from the dimension and
recombination weights, so a state can be serialized with only its dynamic
fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, NumericFailure

EIG_FLOOR = 1e-12
JITTER = 1e-10


@dataclass(frozen=True)
class CmaState:
    mean: np.ndarray
    covariance: np.ndarray
    step_size: float
    path_sigma: np.ndarray
    path_c: np.ndarray
    generation_count: int
    population_size: int
    parent_count: int
    recombination_weights: np.ndarray
    diagonal: bool = False

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def num_values(self) -> int:
        """Number of real values held by the state (mean, C, sigma, paths, weights, counters)."""
        return (
            self.mean.size + self.covariance.size + 1 + self.path_sigma.size
            + self.path_c.size + self.recombination_weights.size + 3
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "step_size": self.step_size,
            "path_sigma": self.path_sigma.tolist(),
            "path_c": self.path_c.tolist(),
            "generation_count": self.generation_count,
            "population_size": self.population_size,
            "parent_count": self.parent_count,
            "recombination_weights": self.recombination_weights.tolist(),
            "diagonal": self.diagonal,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CmaState":
        return cls(
            mean=np.asarray(data["mean"], dtype=float),
            covariance=np.asarray(data["covariance"], dtype=float),
            step_size=float(data["step_size"]),
            path_sigma=np.asarray(data["path_sigma"], dtype=float),
            path_c=np.asarray(data["path_c"], dtype=float),
            generation_count=int(data["generation_count"]),
            population_size=int(data["population_size"]),
            parent_count=int(data["parent_count"]),
            recombination_weights=np.asarray(data["recombination_weights"], dtype=float),
            diagonal=bool(data.get("diagonal", False)),
        )


@dataclass
class Candidate:
    vector: np.ndarray
    fitness: float | None = None


@dataclass(frozen=True)
class _Constants:
    mu_eff: float
    cc: float
    cs: float
    c1: float
    cmu: float
    damps: float
    chi_n: float


def _constants(dim: int, weights: np.ndarray, diagonal: bool) -> _Constants:
    n = float(dim)
    mu_eff = 1.0 / float(np.sum(weights**2))
    cc = (4 + mu_eff / n) / (n + 4 + 2 * mu_eff / n)
    cs = (mu_eff + 2) / (n + mu_eff + 5)
    c1 = 2 / ((n + 1.3) ** 2 + mu_eff)
    cmu = min(1 - c1, 2 * (mu_eff - 2 + 1 / mu_eff) / ((n + 2) ** 2 + mu_eff))
    if diagonal:
        # separable CMA-ES learning rates
        boost = (n + 2) / 3
        c1 = min(1.0, c1 * boost)
        cmu = min(1 - c1, cmu * boost)
    damps = 1 + 2 * max(0.0, math.sqrt((mu_eff - 1) / (n + 1)) - 1) + cs
    chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))
    return _Constants(mu_eff, cc, cs, c1, cmu, damps, chi_n)


def recombination_weights(population_size: int) -> np.ndarray:
    mu = population_size // 2
    raw = math.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    return raw / raw.sum()


def cma_init(
    dim: int,
    population_size: int,
    initial_step: float,
    initial_mean: Sequence[float] | np.ndarray | None = None,
    diagonal: bool = False,
) -> CmaState:
    if dim < 1:
        raise InvalidArgument(f"dim must be >= 1, got {dim}")
    if population_size < 4:
        raise InvalidArgument(f"population_size must be >= 4, got {population_size}")
    if not initial_step > 0:
        raise InvalidArgument(f"initial_step must be positive, got {initial_step}")
    mean = np.zeros(dim) if initial_mean is None else np.array(initial_mean, dtype=float)
    if mean.shape != (dim,):
        raise InvalidArgument(f"initial_mean must have length {dim}")
    weights = recombination_weights(population_size)
    return CmaState(
        mean=mean,
        covariance=np.eye(dim),
        step_size=float(initial_step),
        path_sigma=np.zeros(dim),
        path_c=np.zeros(dim),
        generation_count=0,
        population_size=population_size,
        parent_count=weights.size,
        recombination_weights=weights,
        diagonal=diagonal,
    )


def decompose(covariance: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(B, D)`` with ``C = B diag(D**2) B^T``.

    An eigenvalue below ``EIG_FLOOR`` triggers one retry on ``C + JITTER*I``;
    a second failure raises :class:`NumericFailure`.
    """
    cov = covariance
    for attempt in range(2):
        if not np.all(np.isfinite(cov)):
            break
        evals, evecs = np.linalg.eigh(cov)
        if evals[0] >= EIG_FLOOR:
            return evecs, np.sqrt(evals)
        cov = cov + JITTER * np.eye(cov.shape[0])
    raise NumericFailure("covariance matrix is not positive definite")


def cma_sample(state: CmaState, rng_seed: int) -> list[Candidate]:
    vectors = sample_matrix(state, rng_seed)
    return [Candidate(vector=v) for v in vectors]


def sample_matrix(state: CmaState, rng_seed: int) -> np.ndarray:
    """Array form of :func:`cma_sample`: a ``(J, d)`` matrix of candidates."""
    B, D = decompose(state.covariance)
    rng = np.random.default_rng(rng_seed)
    z = rng.standard_normal((state.population_size, state.dim))
    return state.mean + state.step_size * (z * D) @ B.T


def cma_update(state: CmaState, candidates: Sequence[Candidate]) -> CmaState:
    if len(candidates) != state.population_size:
        raise InvalidArgument(
            f"expected {state.population_size} candidates, got {len(candidates)}"
        )
    fitness = np.array([np.nan if c.fitness is None else c.fitness for c in candidates], dtype=float)
    if np.any(np.isnan(fitness)):
        raise InvalidArgument("candidate fitness must be set and not NaN")
    xs = np.stack([np.asarray(c.vector, dtype=float) for c in candidates])
    if xs.shape[1] != state.dim:
        raise InvalidArgument("candidate dimension does not match state")
    return _update(state, xs, fitness)


def _update(state: CmaState, xs: np.ndarray, fitness: np.ndarray) -> CmaState:
    n = state.dim
    w = state.recombination_weights
    k = _constants(n, w, state.diagonal)
    order = np.argsort(fitness, kind="stable")[: state.parent_count]
    sigma = state.step_size
    C = state.covariance
    B, D = decompose(C)

    y = (xs[order] - state.mean) / sigma
    y_w = w @ y
    mean = state.mean + sigma * y_w

    c_inv_sqrt_yw = B @ ((B.T @ y_w) / D)
    ps = (1 - k.cs) * state.path_sigma + math.sqrt(k.cs * (2 - k.cs) * k.mu_eff) * c_inv_sqrt_yw
    gen = state.generation_count + 1
    ps_norm = float(np.linalg.norm(ps))
    hsig = ps_norm / math.sqrt(1 - (1 - k.cs) ** (2 * gen)) < (1.4 + 2 / (n + 1)) * k.chi_n
    pc = (1 - k.cc) * state.path_c
    if hsig:
        pc = pc + math.sqrt(k.cc * (2 - k.cc) * k.mu_eff) * y_w

    rank_one = np.outer(pc, pc)
    if not hsig:
        rank_one = rank_one + k.cc * (2 - k.cc) * C
    rank_mu = (y * w[:, None]).T @ y
    C_new = (1 - k.c1 - k.cmu) * C + k.c1 * rank_one + k.cmu * rank_mu
    C_new = 0.5 * (C_new + C_new.T)
    if state.diagonal:
        C_new = np.diag(np.diag(C_new))

    sigma_new = sigma * math.exp((k.cs / k.damps) * (ps_norm / k.chi_n - 1))
    if not (np.isfinite(sigma_new) and sigma_new > 0):
        raise NumericFailure(f"step size left the positive reals: {sigma_new}")
    return replace(
        state,
        mean=mean,
        covariance=C_new,
        step_size=sigma_new,
        path_sigma=ps,
        path_c=pc,
        generation_count=gen,
    )


def update_from_arrays(state: CmaState, xs: np.ndarray, fitness: np.ndarray) -> CmaState:
    """Array form of :func:`cma_update`."""
    fitness = np.asarray(fitness, dtype=float)
    if xs.shape != (state.population_size, state.dim):
        raise InvalidArgument(f"candidate matrix must be {(state.population_size, state.dim)}")
    if np.any(np.isnan(fitness)):
        raise InvalidArgument("fitness contains NaN")
    return _update(state, np.asarray(xs, dtype=float), fitness)


def cma_should_stop(loss_trace: Sequence[float], min_delta: float, patience: int) -> bool:
    """True once the running best has gone ``patience`` iterations without
    improving by at least ``min_delta``."""
    if patience < 1:
        raise InvalidArgument("patience must be >= 1")
    if not loss_trace:
        return False
    best = loss_trace[0]
    stale = 0
    for value in loss_trace[1:]:
        if best - value >= min_delta:
            stale = 0
        else:
            stale += 1
        best = min(best, value)
    return stale >= patience


def minimize(fun, x0, sigma0: float, population_size: int, max_evals: int, seed: int = 0,
             ftarget: float = -np.inf) -> tuple[np.ndarray, float, int]:
    """Plain CMA-ES loop over a scalar objective; returns ``(x_best, f_best, evals)``."""
    state = cma_init(len(x0), population_size, sigma0, x0)
    best_x, best_f = np.array(x0, dtype=float), math.inf
    evals = 0
    ss = np.random.SeedSequence(seed)
    while evals + population_size <= max_evals:
        child = int(ss.spawn(1)[0].generate_state(1)[0])
        xs = sample_matrix(state, child)
        fit = np.array([fun(x) for x in xs])
        evals += population_size
        i = int(np.argmin(fit))
        if fit[i] < best_f:
            best_f, best_x = float(fit[i]), xs[i].copy()
        if best_f < ftarget:
            break
        state = update_from_arrays(state, xs, fit)
    return best_x, best_f, evals
