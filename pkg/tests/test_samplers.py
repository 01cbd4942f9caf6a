import numpy as np
import pytest

from sedd import oracle, process, samplers
from sedd.errors import ArgumentError, ConfigError, SamplerError
from sedd.process import TransitionSpec
from sedd.samplers import PromptSpec, SamplerConfig

from conftest import random_dist


def _exact_step_law(p0, spec, schedule, t, dt):
    """Column-wise exact reverse law over one step for a d = 1 model."""
    prev = oracle.evolve(p0.embed(spec), spec, float(schedule.sigma_bar(t - dt)))
    dsb = float(schedule.sigma_bar(t)) - float(schedule.sigma_bar(t - dt))
    return oracle.reverse_transition(prev, spec, dsb)


@pytest.mark.parametrize("t,dt", [(0.9, 0.3), (0.5, 0.05), (0.1, 0.09)])
def test_tweedie_step_is_exact_for_one_token(kind, schedule_for, rng, t, dt):
    spec = TransitionSpec(kind, 5)
    sched = schedule_for(spec)
    p0 = random_dist(rng, 5, 1)
    model = oracle.ExactScoreModel(p0, spec)
    R = _exact_step_law(p0, spec, sched, t, dt)
    pt = model.marginal(float(sched.sigma_bar(t)))
    xs = np.flatnonzero(pt > 0)
    probs, clipped = samplers.tweedie_probs(model, xs[:, None], t, dt, spec, sched)
    np.testing.assert_allclose(probs[:, 0, :], R[:, xs].T, atol=1e-10)
    assert clipped < 1e-12


def test_euler_step_error_is_second_order(rng):
    spec = TransitionSpec.uniform(4)
    sched = process.GeometricSchedule()
    p0 = random_dist(rng, 4, 1)
    model = oracle.ExactScoreModel(p0, spec)
    errs = []
    for dt in (0.02, 0.01, 0.005):
        R = _exact_step_law(p0, spec, sched, 0.6, dt)
        probs, _ = samplers.euler_probs(model, np.arange(4)[:, None], 0.6, dt, spec, sched)
        errs.append(np.abs(probs[:, 0, :] - R.T).max())
    assert 3.0 < errs[0] / errs[1] < 5.0
    assert 3.0 < errs[1] / errs[2] < 5.0


def test_euler_equals_tweedie_for_loglinear_absorbing(rng):
    spec = TransitionSpec.absorbing(4)
    sched = process.LogLinearSchedule()
    model = oracle.ExactScoreModel(random_dist(rng, 4, 2), spec)
    x = oracle.all_sequences(5, 2)
    a, _ = samplers.euler_probs(model, x, 0.7, 0.2, spec, sched)
    b, _ = samplers.tweedie_probs(model, x, 0.7, 0.2, spec, sched)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_euler_clips_large_steps(rng):
    spec = TransitionSpec.uniform(4)
    sched = process.GeometricSchedule()
    model = oracle.ExactScoreModel(random_dist(rng, 4, 1, alpha=0.2), spec)
    probs, clipped = samplers.euler_probs(model, np.arange(4)[:, None], 1.0, 0.9, spec, sched)
    assert clipped > 0
    np.testing.assert_allclose(probs.sum(-1), 1.0)
    assert probs.min() >= 0


def test_exact_tweedie_denoise_posterior(kind, rng):
    spec = TransitionSpec(kind, 6)
    p = np.zeros(spec.n_states)
    p[:6] = rng.dirichlet(np.ones(6))
    K = process.kernel_matrix(spec, 0.4)
    now = K @ p
    for x in range(spec.n_states):
        got = samplers.exact_tweedie_denoise(now / now[x], spec, 0.4, x)
        np.testing.assert_allclose(got, K[x] * p / now[x], atol=1e-12)
    with pytest.raises(ArgumentError):
        samplers.exact_tweedie_denoise(now / now[0], spec, -1.0, 0)


def test_time_grids(schedule_for, kind):
    spec = TransitionSpec(kind, 3)
    sched = schedule_for(spec)
    for grid in ("uniform", "geometric"):
        ts = samplers.time_grid(sched, SamplerConfig(steps=17, grid=grid))
        assert len(ts) == 18
        assert ts[0] == 1.0 and ts[-1] == sched.t_min
        assert np.all(np.diff(ts) < 0)


def test_categorical_frequencies(rng):
    p = np.array([0.1, 0.0, 0.6, 0.3])
    draws = samplers.categorical(np.tile(p, (200000, 1)), rng)
    freq = np.bincount(draws, minlength=4) / len(draws)
    np.testing.assert_allclose(freq, p, atol=0.005)
    assert freq[1] == 0


def test_degenerate_step_raises():
    with pytest.raises(SamplerError):
        samplers._normalize(np.zeros((1, 2, 3)))


def test_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(method="ancestral")
    with pytest.raises(ConfigError):
        SamplerConfig(steps=0)
    with pytest.raises(ConfigError):
        SamplerConfig(grid="cosine")


def test_prompt_parsing():
    p = PromptSpec.parse("0:3, 2:1")
    assert p.positions == (0, 2) and p.tokens == (3, 1)
    assert PromptSpec.from_dict({"2": 1, "0": 3}) == p
    with pytest.raises(ArgumentError):
        PromptSpec.parse("0:3,0:1")
    with pytest.raises(ArgumentError):
        PromptSpec.parse("x")
    with pytest.raises(ArgumentError):
        PromptSpec((5,), (0,)).validate(TransitionSpec.absorbing(4), 3)
    with pytest.raises(ArgumentError):
        PromptSpec((0,), (4,)).validate(TransitionSpec.absorbing(4), 3)


@pytest.mark.parametrize("method", ["euler", "tweedie"])
def test_sampling_recovers_data_with_exact_scores(kind, schedule_for, method):
    rng = np.random.default_rng(3)
    spec = TransitionSpec(kind, 3)
    sched = schedule_for(spec)
    p0 = random_dist(rng, 3, 2, alpha=2.0)
    model = oracle.ExactScoreModel(p0, spec)
    stats = samplers.SampleStats()
    x = samplers.sample(model, spec, sched, SamplerConfig(method, 128), 2, rng, 6000, stats)
    assert x.max() < 3 and stats.steps == 128
    freq = np.bincount(oracle.encode(x, 3), minlength=9) / len(x)
    assert oracle.tv_distance(freq, p0.probs) < 0.04


def test_exact_tweedie_method_needs_one_token(rng):
    spec = TransitionSpec.absorbing(3)
    model = oracle.ExactScoreModel(random_dist(rng, 3, 2), spec)
    with pytest.raises(ConfigError):
        samplers.sample(model, spec, process.LogLinearSchedule(), SamplerConfig("exact-tweedie", 4), 2, rng)
    model1 = oracle.ExactScoreModel(random_dist(rng, 3, 1), spec)
    x = samplers.sample(model1, spec, process.LogLinearSchedule(), SamplerConfig("exact-tweedie", 8), 1, rng, 50)
    assert x.shape == (50, 1) and x.max() < 3


def test_infill_clamps_and_conditions(rng):
    spec = TransitionSpec.absorbing(3)
    sched = process.LogLinearSchedule()
    p0 = random_dist(rng, 3, 2, alpha=2.0)
    model = oracle.ExactScoreModel(p0, spec)
    prompt = PromptSpec((0,), (1,))
    x = samplers.infill(model, spec, sched, SamplerConfig("tweedie", 64), 2, prompt, rng, 6000)
    assert np.all(x[:, 0] == 1)
    want = p0.tensor()[1] / p0.tensor()[1].sum()
    freq = np.bincount(x[:, 1], minlength=3) / len(x)
    assert oracle.tv_distance(freq, want) < 0.03


def test_full_prompt_returns_prompt(rng):
    spec = TransitionSpec.uniform(3)
    x = samplers.infill(None, spec, process.GeometricSchedule(), SamplerConfig(), 2,
                        PromptSpec((0, 1), (2, 0)), rng, 4)
    np.testing.assert_array_equal(x, [[2, 0]] * 4)


def test_step_guard(rng):
    spec = TransitionSpec.uniform(3)
    model = oracle.ExactScoreModel(random_dist(rng, 3, 1), spec)
    with pytest.raises(ArgumentError):
        samplers.tweedie_probs(model, np.zeros((1, 1), int), 0.01, 0.5, spec, process.GeometricSchedule())
    with pytest.raises(ArgumentError):
        samplers.euler_probs(model, np.zeros((1, 1), int), 0.5, 0.0, spec, process.GeometricSchedule())
