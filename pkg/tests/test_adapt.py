from dataclasses import replace

import numpy as np
import pytest

from promptshift.adapt import AdaptConfig, _evaluate, adapt_utterance
from promptshift.corpus import CorpusSpec, generate
from promptshift.errors import InvalidArgument
from promptshift.losses import LossConfig, total_loss
from promptshift.metrics import greedy_decode
from promptshift.model import Utterance, encode_cnn, forward, random_weights
from promptshift.stats import extract_stats

SMALL = AdaptConfig(population_size=12, max_iterations=6)


def long_spec(seed, n=1, condition=None):
    return CorpusSpec(seed=seed, num_utterances=n, d_in=8, tokens_per_utterance=(40, 60),
                      condition=condition or {"type": "clean"})


@pytest.fixture(scope="module")
def small_stats(small_linear_oracle):
    return extract_stats(small_linear_oracle[0], generate(long_spec(0, 50), small_linear_oracle))


def run(weights, stats, utt, config=SMALL, seed=0):
    return adapt_utterance(weights, stats, utt, config.initial_state(weights.d), config, seed)


def test_utterance_matching_its_own_stats_needs_no_prompt(oracle, source_corpus):
    w = oracle[0]
    utt = source_corpus[1]
    stats = extract_stats(w, [utt])
    out = run(w, stats, utt)
    assert out.decoded == utt.reference
    assert np.linalg.norm(out.best_prompt) <= 2 * SMALL.sigma0 * np.sqrt(w.d)


@pytest.mark.parametrize("k", range(3))
def test_recovers_a_latent_translation(small_linear_oracle, small_stats, k):
    w = small_linear_oracle[0]
    cond = {"type": "translation", "norm": 0.8, "direction_seed": 10 + k}
    utt = generate(long_spec(100 + k, condition=cond), small_linear_oracle)[0]
    before = forward(w, utt)
    assert greedy_decode(before.posteriors, w.vocab) != utt.reference
    base = total_loss(before, small_stats, LossConfig()).total
    cfg = AdaptConfig(patience=20)
    out = run(w, small_stats, utt, cfg, seed=k)
    assert out.best_loss <= 0.1 * base
    assert out.decoded == utt.reference


def test_two_dimensional_prompt_reaches_grid_minimum():
    grid = np.linspace(-1, 1, 41)
    points = np.array([[a, b] for a in grid for b in grid])
    cfg = AdaptConfig(sigma0=0.5)
    for seed in range(10):
        w = random_weights(seed, 3, 2, heads=1, scale=1.0)
        rng = np.random.default_rng(seed)
        stats = extract_stats(w, [Utterance(rng.standard_normal((8, 3))) for _ in range(20)])
        utt = Utterance(rng.standard_normal((8, 3)) + 0.5)
        losses = np.array([total_loss(forward(w, utt, p), stats, LossConfig()).total for p in points])
        out = run(w, stats, utt, cfg, seed)
        assert out.best_loss <= losses.min() + 0.05 * (losses.max() - losses.min()), seed


def test_weights_untouched_and_state_budget(oracle, source_stats, source_corpus):
    w = oracle[0]
    before = w.digest()
    out = run(w, source_stats, source_corpus[5])
    assert w.digest() == before
    assert out.best_prompt.shape == (w.d,)
    d = w.d
    assert AdaptConfig().initial_state(d).num_values() <= d * d + 4 * d + 16
    assert out.final_cma.num_values() <= d * d + 4 * d + 16


def test_same_seed_same_outcome(oracle, source_stats, source_corpus):
    a = run(oracle[0], source_stats, source_corpus[7], seed=3)
    b = run(oracle[0], source_stats, source_corpus[7], seed=3)
    assert np.array_equal(a.best_prompt, b.best_prompt)
    assert a.loss_trace == b.loss_trace


def test_best_loss_is_the_trace_minimum(oracle, source_stats, source_corpus):
    out = run(oracle[0], source_stats, source_corpus[8], seed=1)
    assert out.best_loss == min(out.loss_trace)
    assert out.iterations_run == len(out.loss_trace) <= SMALL.max_iterations
    assert out.evaluations == SMALL.population_size * out.iterations_run
    assert abs(out.breakdown.total - out.best_loss) < 1e-12


def test_early_stop_respects_patience(oracle, source_stats, source_corpus):
    cfg = AdaptConfig(population_size=12, max_iterations=20, min_delta=1e6, patience=2)
    out = run(oracle[0], source_stats, source_corpus[9], cfg)
    assert out.iterations_run == 3


def test_non_finite_losses_become_infinite_fitness(oracle, source_corpus):
    w = oracle[0]
    utt = source_corpus[1]
    stats = extract_stats(w, [utt])
    prompts = np.zeros((4, w.d))
    prompts[1, 0] = np.nan
    prompts[2] = 1e300
    prompts[3, 3] = np.inf
    totals = _evaluate(w, stats, encode_cnn(w, utt), prompts, SMALL)[0]
    assert np.isfinite(totals[0]) and np.all(totals[1:] == np.inf)


def test_stream_survives_an_all_non_finite_search(oracle, source_corpus):
    w = oracle[0]
    utt = source_corpus[1]
    stats = extract_stats(w, [utt])
    cfg = AdaptConfig(population_size=12, max_iterations=3)
    mean = np.zeros(w.d)
    mean[0] = 1e300
    start = replace(cfg.initial_state(w.d), mean=mean)
    out = adapt_utterance(w, stats, utt, start, cfg, 0)
    assert out.nonfinite_candidates == 36
    assert out.best_loss == np.inf
    assert isinstance(out.decoded, str)


def test_mismatched_inputs_rejected(oracle, source_stats, source_corpus):
    with pytest.raises(InvalidArgument):
        adapt_utterance(oracle[0], source_stats, source_corpus[0], SMALL.initial_state(5), SMALL, 0)
    with pytest.raises(InvalidArgument):
        adapt_utterance(oracle[0], source_stats, source_corpus[0], AdaptConfig().initial_state(24), SMALL, 0)


def test_chunked_evaluation_matches_single_batch(oracle, source_stats, source_corpus):
    a = run(oracle[0], source_stats, source_corpus[4], SMALL, seed=2)
    chunked = AdaptConfig(population_size=12, max_iterations=6, parallel_eval_width=5)
    b = run(oracle[0], source_stats, source_corpus[4], chunked, seed=2)
    assert np.allclose(a.loss_trace, b.loss_trace, rtol=0, atol=1e-10)
    assert np.allclose(a.best_prompt, b.best_prompt, rtol=0, atol=1e-10)


@pytest.mark.parametrize("kw", [{"population_size": 3}, {"max_iterations": 0}, {"patience": 0},
                                {"sigma0": 0.0}, {"ema_mode": "x"}, {"gamma": 1.0}, {"parallel_eval_width": -1}])
def test_config_validation(kw):
    with pytest.raises(InvalidArgument):
        AdaptConfig(**kw)


def test_config_round_trip():
    cfg = AdaptConfig(loss=LossConfig(beta=0.0, use_token=False), ema_mode="reset")
    assert AdaptConfig.from_dict(cfg.to_dict()) == cfg
