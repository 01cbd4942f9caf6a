"""Brute-force references over fully enumerated sequence spaces.

Sequences of length ``d`` over ``S`` states are indexed in mixed radix with
the first position most significant, i.e. ``index = sum_i x[i] * S**(d-1-i)``.
Nothing here is fast; everything here is meant to be obviously correct.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce

import numpy as np

from . import process
from .errors import ArgumentError, CapacityError, InstabilityError, UndefinedScoreError
from .process import TransitionSpec

MAX_ENUMERATED = 2**20
MAX_DENSE = 4096
TAYLOR_ORDER = 18


# ------------------------------------------------------------ enumeration


def encode(seqs, n_states: int) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.int64)
    d = seqs.shape[-1]
    radix = n_states ** np.arange(d - 1, -1, -1, dtype=np.int64)
    return seqs @ radix


def decode(idx, n_states: int, d: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64)
    out = np.empty(idx.shape + (d,), dtype=np.int64)
    rem = idx.copy()
    for i in range(d - 1, -1, -1):
        out[..., i] = rem % n_states
        rem //= n_states
    return out


def all_sequences(n_states: int, d: int) -> np.ndarray:
    _check_capacity(n_states, d, MAX_ENUMERATED)
    return decode(np.arange(n_states**d), n_states, d)


def neighbor_table(n_states: int, d: int) -> np.ndarray:
    """``table[x, i, v]`` is the index of sequence ``x`` with position ``i`` set to ``v``."""
    X = all_sequences(n_states, d)
    base = encode(X, n_states)
    weights = n_states ** np.arange(d - 1, -1, -1, dtype=np.int64)
    v = np.arange(n_states)
    return base[:, None, None] + (v[None, None, :] - X[:, :, None]) * weights[None, :, None]


def _check_capacity(n_states: int, d: int, limit: int) -> None:
    if n_states**d > limit:
        raise CapacityError(f"{n_states}^{d} states exceeds the limit of {limit}")


@dataclass
class EnumeratedDist:
    """Probability vector over every sequence in ``{0..n_states-1}^d``."""

    d: int
    n_states: int
    probs: np.ndarray
    clipped_mass: float = 0.0

    def __post_init__(self):
        _check_capacity(self.n_states, self.d, MAX_ENUMERATED)
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (self.n_states**self.d,):
            raise ArgumentError("probability vector has the wrong length")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-10:
            raise ArgumentError("not a probability vector")

    @classmethod
    def from_function(cls, d: int, n_states: int, fn) -> "EnumeratedDist":
        X = all_sequences(n_states, d)
        w = np.array([fn(x) for x in X], dtype=float)
        return cls(d, n_states, w / w.sum())

    @classmethod
    def product(cls, marginals: list[np.ndarray]) -> "EnumeratedDist":
        """Independent positions with the given per-position marginals."""
        probs = reduce(np.kron, [np.asarray(m, dtype=float) for m in marginals])
        return cls(len(marginals), len(marginals[0]), probs)

    def prob(self, seq) -> float:
        return float(self.probs[encode(seq, self.n_states)])

    def tensor(self) -> np.ndarray:
        return self.probs.reshape((self.n_states,) * self.d)

    def marginal(self, i: int) -> np.ndarray:
        axes = tuple(j for j in range(self.d) if j != i)
        return self.tensor().sum(axis=axes)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.probs.size, size=count, p=self.probs)
        return decode(idx, self.n_states, self.d)

    def embed(self, spec: TransitionSpec) -> "EnumeratedDist":
        """Lift a distribution over ``n`` tokens into the absorbing state space."""
        if spec.n_states == self.n_states:
            return self
        if not spec.is_absorbing or self.n_states != spec.n:
            raise ArgumentError("cannot embed into this transition spec")
        t = np.zeros((spec.n_states,) * self.d)
        t[(slice(0, spec.n),) * self.d] = self.tensor()
        return EnumeratedDist(self.d, spec.n_states, t.ravel())


# ------------------------------------------------------------ dense matrices


def dense_rate_matrix(spec: TransitionSpec) -> np.ndarray:
    """Literal single-token generator, built independently of ``process.rate``."""
    n = spec.n
    if spec.kind == process.UNIFORM:
        return spec.scale * (np.ones((n, n)) - n * np.eye(n))
    Q = np.zeros((n + 1, n + 1))
    Q[np.arange(n), np.arange(n)] = -1.0
    Q[n, :n] = 1.0
    return spec.scale * Q


def sequence_generator(Q: np.ndarray, d: int) -> np.ndarray:
    """Kronecker sum ``sum_i I x .. x Q x .. x I`` acting on whole sequences."""
    S = Q.shape[0]
    if S**d > MAX_DENSE:
        raise CapacityError(f"{S}^{d} exceeds dense limit {MAX_DENSE}")
    eye = np.eye(S)
    total = np.zeros((S**d, S**d))
    for i in range(d):
        factors = [Q if j == i else eye for j in range(d)]
        total += reduce(np.kron, factors)
    return total


def dense_expm(M: np.ndarray, sbar: float = 1.0) -> np.ndarray:
    """``exp(sbar * M)`` by scaling and squaring of an order-18 Taylor series.

    The argument is scaled so its 1-norm is at most 1/2 before the series is
    summed; the truncation error is then below 1e-20 relative.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ArgumentError("need a square matrix")
    if M.shape[0] > MAX_DENSE:
        raise CapacityError(f"dimension {M.shape[0]} exceeds {MAX_DENSE}")
    A = sbar * M
    norm = np.abs(A).sum(axis=0).max()
    squarings = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    A = A / 2.0**squarings
    out = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, TAYLOR_ORDER + 1):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


def token_kernel(spec: TransitionSpec, sbar: float) -> np.ndarray:
    return dense_expm(dense_rate_matrix(spec), sbar)


def sequence_kernel(spec: TransitionSpec, d: int, sbar: float) -> np.ndarray:
    """Dense ``P(y | x)`` over whole sequences, as a Kronecker power."""
    _check_capacity(spec.n_states, d, MAX_DENSE)
    K = token_kernel(spec, sbar)
    return reduce(np.kron, [K] * d)


# ------------------------------------------------------------ distributions


def evolve(p0: EnumeratedDist, spec: TransitionSpec, sbar: float) -> EnumeratedDist:
    """Exact forward marginal by applying the token kernel along every axis."""
    if sbar < 0:
        raise ArgumentError("total noise must be nonnegative")
    if p0.n_states != spec.n_states:
        raise ArgumentError("distribution and transition spec disagree on state count")
    K = token_kernel(spec, sbar)
    t = p0.tensor()
    for axis in range(p0.d):
        t = np.moveaxis(np.tensordot(K, t, axes=([1], [axis])), 0, axis)
    probs = np.clip(t.ravel(), 0.0, None)
    return EnumeratedDist(p0.d, p0.n_states, probs / probs.sum())


def exact_concrete_score(p: EnumeratedDist, seq) -> np.ndarray:
    """Hamming-1 ratios ``p(x with x_i -> v) / p(x)`` as a ``d x S`` array."""
    seq = np.asarray(seq, dtype=np.int64)
    px = p.prob(seq)
    if px <= 0:
        raise UndefinedScoreError(f"p(x) = 0 at {seq.tolist()}")
    out = np.empty((p.d, p.n_states))
    for i in range(p.d):
        y = np.repeat(seq[None, :], p.n_states, axis=0)
        y[:, i] = np.arange(p.n_states)
        out[i] = p.probs[encode(y, p.n_states)] / px
    return out


def all_concrete_scores(p: EnumeratedDist) -> np.ndarray:
    """Ratios for every sequence at once, shape ``(N, d, S)``; ``nan`` where ``p(x) = 0``."""
    nb = neighbor_table(p.n_states, p.d)
    with np.errstate(divide="ignore", invalid="ignore"):
        return p.probs[nb] / p.probs[:, None, None]


def reverse_transition(p_prev: EnumeratedDist, spec: TransitionSpec, sbar_delta: float) -> np.ndarray:
    """Exact joint reverse kernel ``R[y, x] = P(x_prev = y | x_now = x)``."""
    K = sequence_kernel(spec, p_prev.d, sbar_delta)
    p_now = K @ p_prev.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        R = K.T * p_prev.probs[:, None] / p_now[None, :]
    R[:, p_now <= 0] = 0.0
    return R


def tv_distance(p, q) -> float:
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    q = np.asarray(getattr(q, "probs", q), dtype=float)
    if p.shape != q.shape:
        raise ArgumentError("dimension mismatch")
    return float(0.5 * np.abs(p - q).sum())


def kl_divergence(p, q) -> float:
    """``KL(p || q)`` with ``0 log 0 = 0``; ``inf`` when ``p`` is not dominated by ``q``."""
    p = np.asarray(getattr(p, "probs", p), dtype=float)
    q = np.asarray(getattr(q, "probs", q), dtype=float)
    if p.shape != q.shape:
        raise ArgumentError("dimension mismatch")
    on = p > 0
    if np.any(q[on] <= 0):
        return math.inf
    return float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on]))))


def finite_difference_grad(f, theta, h: float = 1e-4) -> np.ndarray:
    """Central differences ``(f(theta + h e_i) - f(theta - h e_i)) / 2h`` per coordinate."""
    if h <= 0:
        raise ArgumentError("step must be positive")
    theta = np.array(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta.flat[i]
        theta.flat[i] = orig + h
        fp = f(theta)
        theta.flat[i] = orig - h
        fm = f(theta)
        theta.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


# ------------------------------------------------------------ exact models


class ExactScoreModel:
    """Scores of the true forward process started from ``p0``.

    ``p0`` lives on the full state space of ``spec`` (embed it for absorbing
    specs). Marginals are cached per noise level.
    """

    n_params = 0

    def __init__(self, p0: EnumeratedDist, spec: TransitionSpec):
        self.p0 = p0.embed(spec)
        self.spec = spec
        self.d = p0.d
        self.params = np.zeros(0)
        self._cache: dict[float, np.ndarray] = {}
        self._nb = neighbor_table(spec.n_states, self.d)

    def marginal(self, sbar: float) -> np.ndarray:
        key = float(sbar)
        if key not in self._cache:
            if len(self._cache) > 4096:
                self._cache.clear()
            self._cache[key] = evolve(self.p0, self.spec, key).probs
        return self._cache[key]

    def forward(self, x, sbar):
        from .scores import ScoreEval, structural_live

        x = np.asarray(x, dtype=np.int64)
        sbar = np.broadcast_to(np.asarray(sbar, dtype=float), x.shape[:-1])
        idx = encode(x, self.spec.n_states)
        ratios = np.empty(x.shape + (self.spec.n_states,))
        for key in np.unique(sbar):
            sel = sbar == key
            p = self.marginal(key)
            px = p[idx[sel]]
            if np.any(px <= 0):
                raise UndefinedScoreError("sequence has zero probability under p_t")
            ratios[sel] = p[self._nb[idx[sel]]] / px[:, None, None]
        live = structural_live(self.spec, x) & (ratios > 0)
        with np.errstate(divide="ignore"):
            log_scores = np.where(live, np.log(ratios), 0.0)
        return ScoreEval(log_scores, live, sbar), None

    def backward(self, cache, upstream):
        return np.zeros(0)


def exact_reverse_solve(model, spec: TransitionSpec, schedule, d: int, steps: int = 1000,
                        p_init: np.ndarray | None = None, t_start: float = 1.0,
                        t_end: float | None = None) -> EnumeratedDist:
    """Integrate the model's reverse master equation over every sequence.

    Starts from ``p_init`` (default: the generation prior, all-MASK or flat)
    at ``t_start`` and runs classical RK4 down to ``t_end`` (default
    ``schedule.t_min``). The integration variable is ``log sbar`` on a uniform
    grid, which keeps the stiff small-noise end well resolved.
    """
    S = spec.n_states
    _check_capacity(S, d, MAX_DENSE)
    if steps < 1:
        raise ArgumentError("steps must be positive")
    t_end = schedule.t_min if t_end is None else t_end
    X = all_sequences(S, d)
    N = X.shape[0]
    nb = neighbor_table(S, d).ravel()
    if p_init is None:
        p_init = reduce(np.kron, [process.generation_prior(spec)] * d)
    p = np.asarray(p_init, dtype=float).copy()
    if t_start == t_end:
        return EnumeratedDist(d, S, p)
    weights = process.rate_rows(spec, X)

    def drift(u, p):
        sb = math.exp(u)
        ev, _ = model.forward(X, np.full(N, sb))
        R = np.exp(ev.log_scores) * weights * ev.live
        out = -R.sum(axis=(1, 2)) * p
        out += np.bincount(nb, weights=(R * p[:, None, None]).ravel(), minlength=N)
        return -sb * out

    u0 = math.log(float(schedule.sigma_bar(t_start)))
    u1 = math.log(float(schedule.sigma_bar(t_end)))
    h = (u1 - u0) / steps
    u = u0
    for _ in range(steps):
        k1 = drift(u, p)
        k2 = drift(u + h / 2, p + h / 2 * k1)
        k3 = drift(u + h / 2, p + h / 2 * k2)
        k4 = drift(u + h, p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        u += h
    if p.min() < -1e-8:
        raise InstabilityError(f"reverse solve went negative ({p.min():.3e}); use more steps")
    clipped = float(-p[p < 0].sum()) + 0.0
    p = np.clip(p, 0.0, None)
    out = EnumeratedDist(d, S, p / p.sum())
    out.clipped_mass = clipped
    return out


def exact_nll(p_model: EnumeratedDist, seq) -> float:
    px = p_model.prob(seq)
    return math.inf if px <= 0 else -math.log(px)
