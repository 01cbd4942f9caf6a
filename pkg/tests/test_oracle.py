import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from sedd import oracle, process
from sedd.errors import ArgumentError, CapacityError, InstabilityError, UndefinedScoreError
from sedd.oracle import EnumeratedDist
from sedd.process import GeometricSchedule, LogLinearSchedule, TransitionSpec

from conftest import random_dist, specs


@settings(max_examples=30, deadline=None)
@given(seqs=st.lists(st.lists(st.integers(0, 3), min_size=3, max_size=3), min_size=1, max_size=20))
def test_encode_decode_roundtrip(seqs):
    x = np.array(seqs)
    np.testing.assert_array_equal(oracle.decode(oracle.encode(x, 4), 4, 3), x)


def test_encoding_is_most_significant_first():
    assert oracle.encode([1, 0, 0], 3) == 9
    assert oracle.encode([0, 0, 2], 3) == 2


def test_neighbor_table():
    nb = oracle.neighbor_table(3, 2)
    X = oracle.all_sequences(3, 2)
    for x in range(9):
        for i in range(2):
            for v in range(3):
                y = X[x].copy()
                y[i] = v
                assert nb[x, i, v] == oracle.encode(y, 3)


def test_capacity_limits():
    with pytest.raises(CapacityError):
        oracle.all_sequences(2, 21)
    with pytest.raises(CapacityError):
        oracle.dense_expm(np.zeros((4097, 4097)))


def test_invalid_distribution():
    with pytest.raises(ArgumentError):
        EnumeratedDist(1, 3, [0.5, 0.6, -0.1])
    with pytest.raises(ArgumentError):
        EnumeratedDist(1, 3, [0.5, 0.5])


def test_dense_expm_identity_at_zero():
    M = oracle.dense_rate_matrix(TransitionSpec.uniform(4))
    np.testing.assert_array_equal(oracle.dense_expm(M, 0.0), np.eye(4))


@pytest.mark.parametrize("scale", [0.5, 3.0, 40.0])
def test_dense_expm_matches_scipy(rng, scale):
    A = rng.random((6, 6))
    np.fill_diagonal(A, 0)
    A -= np.diag(A.sum(axis=0))
    got = oracle.dense_expm(A, scale)
    np.testing.assert_allclose(got, scipy.linalg.expm(scale * A), atol=1e-10)
    np.testing.assert_allclose(got.sum(axis=0), 1.0, atol=1e-10)


def test_dense_expm_two_state_closed_form():
    spec = TransitionSpec.uniform(2)
    K = oracle.token_kernel(spec, math.log(2))
    np.testing.assert_allclose(K, process.kernel_matrix(spec, math.log(2)), atol=1e-10)


def test_dense_rate_matrix_invariants(kind):
    Q = oracle.dense_rate_matrix(TransitionSpec(kind, 6))
    np.testing.assert_allclose(Q.sum(axis=0), 0.0, atol=1e-15)
    off = Q - np.diag(np.diag(Q))
    assert off.min() >= 0


def test_absorbing_matrix_layout():
    Q = oracle.dense_rate_matrix(TransitionSpec.absorbing(3))
    want = np.array([[-1, 0, 0, 0], [0, -1, 0, 0], [0, 0, -1, 0], [1, 1, 1, 0]], dtype=float)
    np.testing.assert_array_equal(Q, want)


def test_evolve_zero_noise(rng):
    p = random_dist(rng, 3, 2)
    np.testing.assert_allclose(oracle.evolve(p, TransitionSpec.uniform(3), 0.0).probs, p.probs)


def test_evolve_d1_is_dense_expm(rng, kind):
    spec = TransitionSpec(kind, 4)
    p = random_dist(rng, 4, 1).embed(spec)
    want = oracle.dense_expm(oracle.dense_rate_matrix(spec), 0.9) @ p.probs
    np.testing.assert_allclose(oracle.evolve(p, spec, 0.9).probs, want, atol=1e-12)


def test_evolve_matches_kronecker_sum_generator(rng):
    spec = TransitionSpec.uniform(2)
    p = random_dist(rng, 2, 2)
    Q = oracle.dense_rate_matrix(spec)
    G = np.kron(Q, np.eye(2)) + np.kron(np.eye(2), Q)
    want = oracle.dense_expm(G, 0.7) @ p.probs
    np.testing.assert_allclose(oracle.evolve(p, spec, 0.7).probs, want, atol=1e-10)
    np.testing.assert_allclose(oracle.sequence_generator(Q, 2), G)


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from(["uniform", "absorbing"]), s1=st.floats(0, 3), s2=st.floats(0, 3),
       seed=st.integers(0, 1000))
def test_evolve_semigroup(kind, s1, s2, seed):
    spec = TransitionSpec(kind, 3)
    p = random_dist(np.random.default_rng(seed), 3, 2).embed(spec)
    twice = oracle.evolve(oracle.evolve(p, spec, s1), spec, s2)
    once = oracle.evolve(p, spec, s1 + s2)
    assert oracle.tv_distance(twice, once) <= 1e-10


def test_concrete_score_flat_and_hand_value():
    flat = EnumeratedDist(2, 3, np.full(9, 1 / 9))
    np.testing.assert_allclose(oracle.exact_concrete_score(flat, [0, 2]), 1.0)
    p = EnumeratedDist(1, 2, [0.9, 0.1])
    r = oracle.exact_concrete_score(p, [0])
    assert r[0, 1] == pytest.approx(1 / 9)
    assert r[0, 0] == 1.0


def test_concrete_score_undefined():
    with pytest.raises(UndefinedScoreError):
        oracle.exact_concrete_score(EnumeratedDist(1, 2, [1.0, 0.0]), [1])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), x=st.integers(0, 15), i=st.integers(0, 1), v=st.integers(0, 3))
def test_concrete_score_reciprocity(seed, x, i, v):
    p = random_dist(np.random.default_rng(seed), 4, 2)
    xs = oracle.decode(x, 4, 2)
    ys = xs.copy()
    ys[i] = v
    fwd = oracle.exact_concrete_score(p, xs)[i, v]
    back = oracle.exact_concrete_score(p, ys)[i, xs[i]]
    assert fwd * back == pytest.approx(1.0, rel=1e-12)


def test_uniform_scores_flatten_at_large_noise(rng):
    spec = TransitionSpec.uniform(3)
    pt = oracle.evolve(random_dist(rng, 3, 2), spec, 50.0)
    assert oracle.tv_distance(pt.probs, np.full(9, 1 / 9)) <= 1e-6
    np.testing.assert_allclose(oracle.all_concrete_scores(pt), 1.0, atol=1e-4)


def test_metrics():
    p = np.array([0.2, 0.8])
    assert oracle.tv_distance(p, p) == 0
    assert oracle.tv_distance([1, 0], [0, 1]) == 1
    assert oracle.kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert oracle.kl_divergence([0.5, 0.5], [1, 0]) == math.inf
    with pytest.raises(ArgumentError):
        oracle.tv_distance([1, 0], [1, 0, 0])


def test_finite_difference_grad():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    theta = np.array([0.3, -1.2])
    np.testing.assert_allclose(oracle.finite_difference_grad(lambda t: t @ A @ t, theta, 1e-4),
                               2 * A @ theta, atol=1e-10)
    a = 0.2
    g = oracle.finite_difference_grad(lambda s: s[0] - a * math.log(s[0]), np.array([0.7]), 1e-5)
    assert g[0] == pytest.approx(1 - a / 0.7, abs=1e-8)
    f1, f2 = (lambda t: np.sin(t).sum()), (lambda t: (t**3).sum())
    both = oracle.finite_difference_grad(lambda t: f1(t) + f2(t), theta)
    np.testing.assert_allclose(both, oracle.finite_difference_grad(f1, theta)
                               + oracle.finite_difference_grad(f2, theta), atol=1e-9)
    with pytest.raises(ArgumentError):
        oracle.finite_difference_grad(f1, theta, 0.0)


def test_reverse_transition_is_bayes(rng, kind):
    spec = TransitionSpec(kind, 3)
    p = random_dist(rng, 3, 2).embed(spec)
    R = oracle.reverse_transition(p, spec, 0.4)
    K = oracle.sequence_kernel(spec, 2, 0.4)
    now = K @ p.probs
    live = now > 0
    np.testing.assert_allclose(R[:, live].sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(R @ now, p.probs, atol=1e-12)


@pytest.mark.parametrize("schedule", [GeometricSchedule(), LogLinearSchedule()])
def test_exact_reverse_solve_recovers_data(rng, schedule):
    """Exact scores integrated back from the prior land on p_{t_min}, close to the data."""
    spec = TransitionSpec.uniform(3) if schedule.kind == "geometric" else TransitionSpec.absorbing(3)
    p0 = random_dist(rng, 3, 2, alpha=2.0)
    model = oracle.ExactScoreModel(p0, spec)
    got = oracle.exact_reverse_solve(model, spec, schedule, 2, steps=400)
    target = oracle.evolve(p0.embed(spec), spec, float(schedule.sigma_bar(schedule.t_min)))
    assert oracle.tv_distance(got, target) <= 1e-4
    if schedule.kind == "geometric":
        assert oracle.tv_distance(got, p0) <= 1e-3


def test_exact_reverse_solve_converges_with_steps(rng):
    spec = TransitionSpec.uniform(3)
    p0 = random_dist(rng, 3, 2, alpha=2.0)
    model = oracle.ExactScoreModel(p0, spec)
    sched = GeometricSchedule()
    coarse, mid, fine = (oracle.exact_reverse_solve(model, spec, sched, 2, steps=s) for s in (25, 50, 100))
    e1 = oracle.tv_distance(coarse, fine)
    e2 = oracle.tv_distance(mid, fine)
    assert e2 < e1 / 4


def test_exact_reverse_solve_zero_time_returns_prior():
    spec = TransitionSpec.absorbing(2)
    model = oracle.ExactScoreModel(EnumeratedDist(2, 2, np.full(4, 0.25)), spec)
    out = oracle.exact_reverse_solve(model, spec, LogLinearSchedule(), 2, t_start=0.5, t_end=0.5)
    assert out.prob([2, 2]) == 1.0


def test_exact_reverse_solve_flags_instability():
    class Wild:
        spec = TransitionSpec.uniform(2)
        d = 1

        def forward(self, x, sbar):
            from sedd.scores import ScoreEval, structural_live
            live = structural_live(self.spec, x)
            return ScoreEval(np.where(live, 12.0, 0.0), live, sbar), None

    with pytest.raises(InstabilityError):
        oracle.exact_reverse_solve(Wild(), Wild.spec, GeometricSchedule(), 1, steps=3,
                                   p_init=np.array([1.0, 0.0]))


def test_exact_nll():
    p = EnumeratedDist(1, 2, [0.25, 0.75])
    assert oracle.exact_nll(p, [0]) == pytest.approx(math.log(4))
    assert oracle.exact_nll(EnumeratedDist(1, 2, [1.0, 0.0]), [1]) == math.inf
