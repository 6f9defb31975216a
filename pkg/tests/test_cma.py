import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptshift.cma import (
    Candidate,
    CmaState,
    cma_init,
    cma_sample,
    cma_should_stop,
    cma_update,
    decompose,
    minimize,
    sample_matrix,
    update_from_arrays,
)
from promptshift.errors import InvalidArgument, NumericFailure


def sphere(x):
    return float(np.dot(x, x))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


def test_init_defaults():
    s = cma_init(4, 50, 0.1, np.zeros(4))
    assert np.array_equal(s.covariance, np.eye(4))
    assert s.parent_count == 25
    assert s.step_size == 0.1
    assert not s.path_sigma.any() and not s.path_c.any()
    assert s.generation_count == 0


def test_init_weights_small_population():
    s = cma_init(1, 4, 1.0)
    w = s.recombination_weights
    assert s.parent_count == 2 and len(w) == 2
    assert w[0] > w[1] > 0
    assert abs(w.sum() - 1) < 1e-12


@pytest.mark.parametrize("dim, pop, step", [(0, 10, 0.1), (3, 3, 0.1), (3, 10, 0.0), (3, 10, -1.0)])
def test_init_rejects_bad_arguments(dim, pop, step):
    with pytest.raises(InvalidArgument):
        cma_init(dim, pop, step)


def test_init_mean_length_checked():
    with pytest.raises(InvalidArgument):
        cma_init(3, 10, 0.1, [0.0, 1.0])


@given(st.integers(4, 200))
def test_weights_non_increasing_and_normalized(pop):
    w = cma_init(2, pop, 1.0).recombination_weights
    assert np.all(np.diff(w) <= 0)
    assert abs(w.sum() - 1) < 1e-12
    assert np.all(w > 0)


def test_tiny_sigma_collapses_onto_mean():
    s = cma_init(5, 20, 1e-30, np.arange(5.0))
    for c in cma_sample(s, 3):
        assert np.max(np.abs(c.vector - s.mean)) < 1e-20


def test_sampling_is_deterministic():
    s = cma_init(6, 12, 0.5)
    a = [c.vector for c in cma_sample(s, 99)]
    b = [c.vector for c in cma_sample(s, 99)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(sample_matrix(s, 1), sample_matrix(s, 2))


def test_sampling_law_matches_covariance():
    base = cma_init(2, 10_000, 0.5)
    s = CmaState(
        base.mean, np.diag([1.0, 100.0]), base.step_size, base.path_sigma, base.path_c,
        0, base.population_size, base.parent_count, base.recombination_weights,
    )
    xs = sample_matrix(s, 0)
    var = xs.var(axis=0, ddof=1)
    expected = np.array([0.25, 25.0])
    assert np.all(np.abs(var / expected - 1) < 0.15)


def test_identical_candidates_leave_mean_fixed():
    s = cma_init(3, 8, 0.3, [1.0, -2.0, 0.5])
    cands = [Candidate(s.mean.copy(), 1.0) for _ in range(8)]
    new = cma_update(s, cands)
    assert np.max(np.abs(new.mean - s.mean)) < 1e-12
    assert new.generation_count == 1


def test_update_rejects_nan_and_wrong_count():
    s = cma_init(2, 6, 0.3)
    cands = cma_sample(s, 0)
    for c in cands:
        c.fitness = 1.0
    cands[2].fitness = float("nan")
    with pytest.raises(InvalidArgument):
        cma_update(s, cands)
    with pytest.raises(InvalidArgument):
        cma_update(s, cands[:5])
    cands[2].fitness = None
    with pytest.raises(InvalidArgument):
        cma_update(s, cands)


def test_infinite_fitness_is_ranked_last():
    s = cma_init(2, 6, 0.3)
    xs = sample_matrix(s, 0)
    fit = np.array([sphere(x) for x in xs])
    worst = int(np.argmax(fit))
    fit_inf = fit.copy()
    fit_inf[worst] = np.inf
    a = update_from_arrays(s, xs, fit)
    b = update_from_arrays(s, xs, fit_inf)
    assert np.array_equal(a.mean, b.mean)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1e3, 1e3), st.sampled_from(["shift", "cube", "exp"]))
def test_update_depends_only_on_ranks(seed, shift, transform):
    s = cma_init(4, 10, 0.4, np.ones(4))
    xs = sample_matrix(s, seed)
    fit = np.array([rosenbrock(x) for x in xs])
    g = {"shift": lambda f: f + shift, "cube": lambda f: f**3, "exp": lambda f: np.exp(f / 1e3)}[transform]
    a = update_from_arrays(s, xs, fit)
    b = update_from_arrays(s, xs, g(fit))
    if len(set(g(fit))) == len(fit):  # transform kept every rank distinct
        assert np.array_equal(a.mean, b.mean)
        assert np.array_equal(a.covariance, b.covariance)
        assert a.step_size == b.step_size


def test_ties_broken_by_candidate_index():
    s = cma_init(2, 6, 0.3)
    xs = sample_matrix(s, 5)
    a = update_from_arrays(s, xs, np.zeros(6))
    b = update_from_arrays(s, xs, np.zeros(6))
    expected = s.mean + s.step_size * (s.recombination_weights @ ((xs[:3] - s.mean) / s.step_size))
    assert np.array_equal(a.mean, b.mean)
    assert np.allclose(a.mean, expected, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 8), st.booleans())
def test_covariance_stays_symmetric_positive_definite(seed, dim, diagonal):
    s = cma_init(dim, 8, 0.5, np.ones(dim), diagonal=diagonal)
    rng = np.random.default_rng(seed)
    for g in range(15):
        xs = sample_matrix(s, int(rng.integers(1 << 30)))
        s = update_from_arrays(s, xs, np.array([rosenbrock(np.r_[x, 0.0]) for x in xs]))
        assert np.max(np.abs(s.covariance - s.covariance.T)) < 1e-10
        assert np.linalg.eigvalsh(s.covariance)[0] > 0
        assert s.step_size > 0
        if diagonal:
            assert np.count_nonzero(s.covariance - np.diag(np.diag(s.covariance))) == 0


def test_decompose_jitters_once_then_fails():
    near = np.diag([1.0, 0.0])
    B, D = decompose(near)
    assert np.allclose((B * D**2) @ B.T, near + 1e-10 * np.eye(2))
    with pytest.raises(NumericFailure):
        decompose(np.diag([1.0, -1.0]))
    with pytest.raises(NumericFailure):
        decompose(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_state_round_trip():
    s = cma_init(3, 8, 0.2)
    s = update_from_arrays(s, sample_matrix(s, 1), np.arange(8.0))
    t = CmaState.from_dict(s.to_dict())
    assert np.array_equal(t.mean, s.mean) and np.array_equal(t.covariance, s.covariance)
    assert t.step_size == s.step_size and t.generation_count == s.generation_count


@pytest.mark.parametrize(
    "trace, expected",
    [
        ([5.0, 4.99999, 4.99998, 4.99997], True),
        ([5.0, 4.9, 4.8], False),
        ([5.0], False),
        ([], False),
        ([5.0, 6.0, 7.0, 4.0], False),
        ([5.0, 6.0, 7.0, 8.0], True),
    ],
)
def test_should_stop(trace, expected):
    assert cma_should_stop(trace, 0.001, 3) is expected


def test_should_stop_needs_positive_patience():
    with pytest.raises(InvalidArgument):
        cma_should_stop([1.0, 1.0], 0.001, 0)


def test_sphere_default_population():
    x, f, evals = minimize(sphere, np.ones(16), 0.3, population_size=12, max_evals=3000, ftarget=1e-10)
    assert f < 1e-10 and evals <= 3000


@pytest.mark.xfail(strict=True, reason="J=50 needs roughly 7000 evaluations on the 16-d sphere")
def test_sphere_population_50_within_3000():
    _, f, _ = minimize(sphere, np.ones(16), 0.3, population_size=50, max_evals=3000, ftarget=1e-10)
    assert f < 1e-10


def test_rosenbrock_population_50():
    _, f, evals = minimize(rosenbrock, np.zeros(8), 0.3, population_size=50, max_evals=50_000, ftarget=1e-6)
    assert f < 1e-6 and evals <= 50_000


def test_minimize_running_best_is_monotone():
    bests = []
    for budget in (120, 240, 480):
        bests.append(minimize(rosenbrock, np.zeros(4), 0.3, 12, budget, seed=3)[1])
    assert bests[0] >= bests[1] >= bests[2]
