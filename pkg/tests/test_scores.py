import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedd import oracle, process, scores
from sedd.errors import ArgumentError, CapacityError, UndefinedScoreError
from sedd.process import TransitionSpec
from sedd.scores import MeanMlpScore, MlpScore, TabularScore

from conftest import random_dist


def _models(spec, d):
    return [TabularScore(spec, d), MlpScore(spec, d, embed=4, hidden=8, features=5, seed=0),
            MeanMlpScore(spec, d, embed=4, hidden=8, features=5, seed=0)]


def test_fresh_score_models_output_all_ones(kind):
    spec = TransitionSpec(kind, 4)
    x = np.array([[0, spec.n_states - 1, 2]])
    for model in _models(spec, 3)[:2]:
        ev = scores.eval_scores(model, x[0], 0.7)
        np.testing.assert_array_equal(ev.log_scores, 0.0)
        r = ev.full_ratios(x[0])
        np.testing.assert_array_equal(r[ev.live], 1.0)


def test_absorbing_sentinels_at_unmasked_positions():
    spec = TransitionSpec.absorbing(3)
    ev = scores.eval_scores(MlpScore(spec, 2, seed=1), np.array([1, 3]), 0.5)
    assert not ev.live[0].any()
    np.testing.assert_array_equal(ev.live[1], [True, True, True, False])
    np.testing.assert_array_equal(ev.sentinel(np.array([1, 3]))[0], [True, False, True, True])


def test_self_ratio_is_one(kind, rng):
    spec = TransitionSpec(kind, 4)
    model = MlpScore(spec, 2, seed=3)
    model.params = rng.normal(size=model.n_params) * 0.3
    x = rng.integers(0, spec.n_states, size=(10, 2))
    ev, _ = model.forward(x, np.full(10, 1.0))
    r = ev.full_ratios(x)
    np.testing.assert_array_equal(np.take_along_axis(r, x[..., None], axis=-1), 1.0)
    assert np.all(np.isfinite(ev.log_scores))
    assert np.all(r[ev.live] > 0)


def test_forward_is_deterministic(rng):
    spec = TransitionSpec.uniform(5)
    model = MlpScore(spec, 3, seed=0)
    model.params = rng.normal(size=model.n_params)
    x = np.array([1, 4, 0])
    a = scores.eval_scores(model, x, 0.3).log_scores
    b = scores.eval_scores(model, x, 0.3).log_scores
    assert a.tobytes() == b.tobytes()


def test_input_validation():
    spec = TransitionSpec.uniform(3)
    model = MlpScore(spec, 2)
    with pytest.raises(ArgumentError):
        model.forward(np.zeros((1, 3), dtype=int), [1.0])
    with pytest.raises(ArgumentError):
        model.forward(np.array([[0, 3]]), [1.0])
    with pytest.raises(CapacityError):
        TabularScore(spec, 11)


def test_parameter_count_from_hparams():
    spec = TransitionSpec.absorbing(4)
    e, h, k, d = 3, 6, 5, 2
    S = spec.n_states
    want = S * e + h * (d * e + k) + h + h * h + h + d * S * h + d * S + d * S * k
    assert MlpScore(spec, d, e, h, k).n_params == want
    assert TabularScore(spec, d).n_params == S**d * d * S


def test_model_from_hparams_roundtrip():
    spec = TransitionSpec.uniform(4)
    for model in _models(spec, 2):
        clone = scores.model_from_hparams(spec, model.hparams())
        assert type(clone) is type(model)
        assert clone.n_params == model.n_params
    with pytest.raises(ArgumentError):
        scores.model_from_hparams(spec, {"backend": "transformer", "d": 2})


def _random_model(cls, spec, d, rng):
    model = cls(spec, d, embed=3, hidden=5, features=5, seed=2)
    model.params = rng.uniform(-1, 1, size=model.n_params)
    return model


@pytest.mark.parametrize("cls", [MlpScore, MeanMlpScore, TabularScore])
def test_backprop_matches_finite_differences(cls, kind, rng):
    spec = TransitionSpec(kind, 3)
    if cls is TabularScore:
        model = TabularScore(spec, 2, rng.uniform(-1, 1, size=2 * spec.n_states**3))
    else:
        model = _random_model(cls, spec, 2, rng)
    x = rng.integers(0, spec.n_states, size=(6, 2))
    x[0] = spec.n_states - 1
    sb = rng.uniform(0.1, 3, size=6)
    up = rng.normal(size=(6, 2, spec.n_states))

    def f(theta):
        ev, _ = model.with_params(theta).forward(x, sb)
        return float(np.sum(up * ev.log_scores))

    ev, cache = model.forward(x, sb)
    g = model.backward(cache, up)
    fd = oracle.finite_difference_grad(f, model.params, 1e-4)
    assert np.abs(g - fd).max() <= 1e-4 * max(1.0, np.abs(fd).max())


def test_backprop_zero_and_linear(rng):
    spec = TransitionSpec.uniform(4)
    model = _random_model(MlpScore, spec, 2, rng)
    x = np.array([1, 3])
    np.testing.assert_array_equal(scores.backprop_scores(model, x, 0.5, np.zeros((2, 4))), 0.0)
    u1, u2 = rng.normal(size=(2, 2, 4))
    g = scores.backprop_scores(model, x, 0.5, 2 * u1 - u2)
    want = 2 * scores.backprop_scores(model, x, 0.5, u1) - scores.backprop_scores(model, x, 0.5, u2)
    np.testing.assert_allclose(g, want, atol=1e-12)
    with pytest.raises(ArgumentError):
        scores.backprop_scores(model, x, 0.5, np.full((2, 4), np.nan))


def test_tabular_can_hold_exact_scores(kind, rng):
    spec = TransitionSpec(kind, 3)
    pt = oracle.evolve(random_dist(rng, 3, 2).embed(spec), spec, 0.8)
    model = oracle.ExactScoreModel(random_dist(rng, 3, 2), spec)
    X = oracle.all_sequences(spec.n_states, 2)
    ratios = oracle.all_concrete_scores(pt)
    with np.errstate(divide="ignore"):
        tab = TabularScore.from_log_ratios(spec, 2, np.log(ratios))
    ev, _ = tab.forward(X, np.full(len(X), 0.8))
    live = ev.live
    np.testing.assert_allclose(np.exp(ev.log_scores[live]), ratios[live], rtol=1e-12)
    assert model.n_params == 0


@pytest.mark.parametrize("sb", [0.05, 0.8, 4.0])
def test_score_from_exact_posterior_is_exact_score(kind, rng, sb):
    spec = TransitionSpec(kind, 4)
    p0 = random_dist(rng, 4, 1)
    pt = oracle.evolve(p0.embed(spec), spec, sb)
    K = process.kernel_matrix(spec, sb)
    for x in range(spec.n_states):
        if pt.probs[x] <= 0:
            continue
        post = K[x, :4] * p0.probs / pt.probs[x]
        ev = scores.score_from_mean(post[None], spec, sb, np.array([x]))
        want = oracle.exact_concrete_score(pt, [x])
        np.testing.assert_allclose(ev.full_ratios(np.array([x]))[ev.live], want[ev.live], atol=1e-9)


def test_score_from_point_mass_at_zero_noise():
    spec = TransitionSpec.uniform(3)
    x = np.array([1, 2])
    q = np.zeros((2, 3))
    q[0, 1] = q[1, 2] = 1.0
    ev = scores.score_from_mean(q, spec, 0.0, x)
    r = ev.full_ratios(x)
    np.testing.assert_allclose(r, np.eye(3)[x])


def test_score_from_mean_absorbing_unmasked_position_is_sentinel():
    spec = TransitionSpec.absorbing(3)
    x = np.array([0, 3])
    q = np.array([[1.0, 0, 0], [0.2, 0.3, 0.5]])
    ev = scores.score_from_mean(lambda xt, sb: q, spec, 0.4, x)
    assert not ev.live[0].any()
    assert ev.live[1, :3].all()


def test_score_from_mean_undefined():
    spec = TransitionSpec.absorbing(3)
    # a masked-free x_t = 0 cannot come from x0 = 1, but posterior claims it did
    with pytest.raises(UndefinedScoreError):
        scores.score_from_mean(np.array([[0.0, 1.0, 0.0]]), TransitionSpec.uniform(3), 0.0,
                               np.array([0]))
    with pytest.raises(ArgumentError):
        scores.score_from_mean(np.array([[0.5, 0.6, 0.0]]), spec, 0.4, np.array([3]))


@settings(max_examples=25, deadline=None)
@given(sb=st.floats(1e-3, 30), seed=st.integers(0, 999))
def test_noise_features_finite(sb, seed):
    phi = scores.noise_features(np.array([sb]), 7)
    assert phi.shape == (1, 7)
    assert np.all(np.isfinite(phi))


def test_mean_model_posterior_is_distribution(rng):
    spec = TransitionSpec.absorbing(5)
    model = _random_model(MeanMlpScore, spec, 3, rng)
    q, _ = model.posterior(rng.integers(0, 6, size=(4, 3)), np.full(4, 0.7))
    np.testing.assert_allclose(q.sum(axis=-1), 1.0)
    assert q.min() > 0
