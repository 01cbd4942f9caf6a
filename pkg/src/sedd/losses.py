"""Score entropy and its relatives.

Scalar building blocks (``k_const``, ``se_term``, ``csm_term``) plus the
enumerated objectives used by the oracle tests and the Monte Carlo
estimators used for training and likelihood evaluation. All objectives
consume log-scores; ``s`` is recovered by exponentiation.
"""
from __future__ import annotations

import math

import numpy as np

from . import oracle, process
from .errors import ArgumentError, DomainError
from .oracle import EnumeratedDist
from .process import TransitionSpec


def k_const(a):
    """``K(a) = a (log a - 1)`` with ``K(0) = 0``."""
    a_arr = np.asarray(a, dtype=float)
    if np.any(a_arr < 0):
        raise ArgumentError("K(a) needs a >= 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a_arr > 0, a_arr * (np.log(np.where(a_arr > 0, a_arr, 1.0)) - 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def se_term(s, a, w=1.0):
    """One score-entropy summand ``w (s - a log s + K(a))``."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise DomainError("score entropy is only defined for s > 0")
    a_arr = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.asarray(w) * (s_arr - a_arr * np.log(s_arr) + k_const(a_arr))
    return float(out) if out.ndim == 0 else out


def csm_term(s, a):
    """Squared-error concrete score matching summand."""
    out = 0.5 * (np.asarray(s, dtype=float) - np.asarray(a, dtype=float)) ** 2
    return float(out) if out.ndim == 0 else out


def se_term_grad(s, a, w=1.0):
    return np.asarray(w) * (1.0 - np.asarray(a) / np.asarray(s))


def csm_term_grad(s, a):
    return np.asarray(s) - np.asarray(a)


def _se_log(ls, a, w):
    """Summand and its derivative in the log-score, elementwise."""
    s = np.exp(ls)
    return w * (s - a * ls + k_const(a)), w * (s - a)


def _resolve_weights(weights, spec, X, live):
    if weights is None:
        W = live.astype(float)
    elif isinstance(weights, str) and weights == "rate":
        W = process.rate_rows(spec, X)
    else:
        W = np.asarray(weights, dtype=float)
        if W.shape != live.shape:
            raise ArgumentError(f"weights must have shape {live.shape}")
        if np.any(W < 0):
            raise ArgumentError("weights must be nonnegative")
    off_self = np.ones_like(live)
    np.put_along_axis(off_self, X[..., None], False, axis=-1)
    dead = off_self & ~live
    if np.any(W[dead] != 0):
        raise ArgumentError("nonzero weight on a sentinel score entry")
    return np.where(live, W, 0.0)


def _all_inputs(model, p: EnumeratedDist):
    if p.n_states != model.spec.n_states or p.d != model.d:
        raise ArgumentError("distribution does not match the model's state space")
    return oracle.all_sequences(p.n_states, p.d)


# ------------------------------------------------------------------ enumerated objectives


def score_entropy(model, p: EnumeratedDist, weights=None, sbar: float = 1.0,
                  return_grad: bool = False):
    """Exact score entropy of ``model`` against the true ratios of ``p``."""
    X = _all_inputs(model, p)
    ev, cache = model.forward(X, np.full(X.shape[0], sbar))
    W = _resolve_weights(weights, model.spec, X, ev.live)
    on = p.probs > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(on[:, None, None], oracle.all_concrete_scores(p), 0.0)
    vals, dls = _se_log(ev.log_scores, a, W)
    value = float(np.sum(p.probs[:, None, None] * vals))
    if not return_grad:
        return value
    return value, model.backward(cache, p.probs[:, None, None] * dls)


def implicit_score_entropy(model, p: EnumeratedDist, weights=None, sbar: float = 1.0,
                           return_grad: bool = False):
    """``E_x sum_y [w_xy s(x)_y - w_yx log s(y)_x]`` by enumeration."""
    X = _all_inputs(model, p)
    N, d = X.shape
    ev, cache = model.forward(X, np.full(N, sbar))
    W = _resolve_weights(weights, model.spec, X, ev.live)
    s = np.exp(ev.log_scores)
    first = np.sum(p.probs[:, None, None] * W * s)
    # reverse entries: at x, neighbour y = nb[x, i, v] evaluated toward x_i
    nb = oracle.neighbor_table(p.n_states, d)
    pos = np.broadcast_to(np.arange(d)[None, :, None], nb.shape)
    back = np.broadcast_to(X[:, :, None], nb.shape)
    off_self = np.ones(nb.shape, dtype=bool)
    np.put_along_axis(off_self, X[..., None], False, axis=-1)
    wb = np.where(off_self, W[nb, pos, back], 0.0)
    lb = ev.log_scores[nb, pos, back]
    coef = p.probs[:, None, None] * wb
    value = float(first - np.sum(coef * lb))
    if not return_grad:
        return value
    up = p.probs[:, None, None] * W * s
    np.add.at(up, (nb[off_self], pos[off_self], back[off_self]), -coef[off_self])
    return value, model.backward(cache, up)


def dse_terms(ev, x, x0, spec: TransitionSpec, sbar, W):
    """Per-sample denoising score entropy and its log-score gradient.

    ``x`` are noisy sequences drawn from ``P(. | x0)`` at total noise ``sbar``.
    """
    sbar = np.asarray(sbar, dtype=float)
    cols = process.kernel_columns(spec, sbar[:, None], x0)  # P(y | x0_i), (B, d, S)
    den = np.take_along_axis(cols, x[..., None], axis=-1)
    a = np.where(ev.live, cols / den, 0.0)
    vals, dls = _se_log(ev.log_scores, a, W)
    return vals.sum(axis=(1, 2)), dls


def denoising_score_entropy(model, p0: EnumeratedDist, spec: TransitionSpec, sbar: float,
                            weights=None, samples: int | None = None,
                            rng: np.random.Generator | None = None,
                            return_grad: bool = False, return_stderr: bool = False):
    """Denoising score entropy of ``model`` for data ``p0`` perturbed to noise ``sbar``.

    With ``samples=None`` the expectation over ``(x0, x)`` is enumerated
    exactly. Otherwise it is a Monte Carlo mean over ``samples`` draws.
    ``weights`` is ``None`` (ones), ``"rate"`` (forward rates into ``x``) or
    an array indexed like the enumerated ``(x, i, y)`` score entries.
    """
    p0 = p0.embed(spec)
    if p0.d != model.d:
        raise ArgumentError("dimension mismatch")
    S, d = spec.n_states, p0.d
    if samples is not None:
        if rng is None:
            raise ArgumentError("sampled mode needs an rng")
        x0 = p0.sample(samples, rng)
        x = process.sample_forward(spec, sbar, x0, rng)
        ev, cache = model.forward(x, np.full(samples, sbar))
        W = _sample_weights(weights, spec, x, ev.live, S)
        vals, dls = dse_terms(ev, x, x0, spec, np.full(samples, sbar), W)
        mean = float(vals.mean())
        out = [mean]
        if return_stderr:
            out.append(float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf)
        if return_grad:
            out.append(model.backward(cache, dls / samples))
        return out[0] if len(out) == 1 else tuple(out)

    X = oracle.all_sequences(S, d)
    N = X.shape[0]
    ev, cache = model.forward(X, np.full(N, sbar))
    W = _resolve_weights(weights, spec, X, ev.live)
    K = oracle.token_kernel(spec, sbar)  # K[y, x0]
    support = np.flatnonzero(p0.probs > 0)
    X0 = X[support]
    # P(x | x0) for every (x0, x) pair, per position then product
    tok = K[X[None, :, :], X0[:, None, :]]  # (N0, N, d)
    pxx0 = tok.prod(axis=-1)
    total = 0.0
    up = np.zeros((N, d, S))
    for j, x0 in enumerate(X0):
        reach = pxx0[j] > 0
        cols = K[:, x0].T  # (d, S): P(y | x0_i)
        a = np.where(ev.live[reach], cols[None] / tok[j, reach][..., None], 0.0)
        vals, dls = _se_log(ev.log_scores[reach], a, W[reach])
        wgt = p0.probs[support[j]] * pxx0[j, reach]
        total += float(np.sum(wgt * vals.sum(axis=(1, 2))))
        up[reach] += wgt[:, None, None] * dls
    if return_grad:
        return total, model.backward(cache, up)
    return total


def _sample_weights(weights, spec, x, live, S):
    if weights is None:
        return live.astype(float)
    if isinstance(weights, str) and weights == "rate":
        return np.where(live, process.rate_rows(spec, x), 0.0)
    raise ArgumentError("sampled mode supports weights=None or 'rate'")


# ------------------------------------------------------------------ likelihood bound


def uniform_t(t_min: float):
    """Default time sampler: uniform on ``[t_min, 1]``; returns ``(t, density)``."""
    def draw(rng, size):
        t = t_min + (1.0 - t_min) * rng.random(size)
        return t, np.full(size, 1.0 / (1.0 - t_min))
    return draw


def _corrupt(spec, x0, rng):
    """A state different from ``x0``: MASK, or a uniformly chosen other token."""
    if spec.is_absorbing:
        return np.full_like(x0, spec.mask)
    shift = rng.integers(1, spec.n, size=x0.shape)
    return (x0 + shift) % spec.n


def noised_proposal(spec, sbar, x0, rng, mix: float):
    """Draw ``x_t`` with each position forced to corrupt with probability ``mix``.

    Returns ``(x, weight)`` where ``weight`` is the likelihood ratio of the
    true kernel to the proposal, so ``weight * f(x)`` is unbiased for
    ``E[f(x_t)]``. Rare corruption events at low noise dominate the variance
    of the plain estimator; the mixture makes them common and bounds the
    weight by ``(1 - mix) ** -d``.
    """
    sbar = np.asarray(sbar, dtype=float)
    x = process.sample_forward(spec, sbar, x0, rng)
    forced = rng.random(x0.shape) < mix
    x = np.where(forced, _corrupt(spec, x0, rng), x)
    p = np.take_along_axis(process.kernel_columns(spec, sbar, x0), x[..., None], axis=-1)[..., 0]
    r = np.where(x == x0, 0.0, 1.0 if spec.is_absorbing else 1.0 / (spec.n - 1))
    return x, np.prod(p / ((1.0 - mix) * p + mix * r), axis=-1)


def stratified_t(t_min: float):
    """Uniform on ``[t_min, 1]`` with one draw per equal-width stratum of each batch."""
    def draw(rng, size):
        u = (np.arange(size) + rng.random(size)) / size
        return t_min + (1.0 - t_min) * u, np.full(size, 1.0 / (1.0 - t_min))
    return draw


def dwdse_terms(model, x0, spec: TransitionSpec, schedule, rng: np.random.Generator,
                t_sampler=None, mix: float = 0.0):
    """One-draw DWDSE estimates for a batch of clean sequences ``x0`` of shape ``(B, d)``.

    Returns ``(values, cache, upstream)`` where ``upstream`` is the gradient
    of ``values.sum()`` with respect to the model log-scores. ``mix > 0``
    importance-samples the noised sequence (see :func:`noised_proposal`).
    """
    x0 = np.asarray(x0, dtype=np.int64)
    B = x0.shape[0]
    draw = t_sampler or uniform_t(schedule.t_min)
    t, dens = draw(rng, B)
    sb = schedule.sigma_bar(t)
    if mix > 0:
        x, iw = noised_proposal(spec, sb[:, None], x0, rng, mix)
    else:
        x, iw = process.sample_forward(spec, sb[:, None], x0, rng), 1.0
    ev, cache = model.forward(x, sb)
    W = np.where(ev.live, process.rate_rows(spec, x), 0.0)
    vals, dls = dse_terms(ev, x, x0, spec, sb, W)
    factor = schedule.sigma(t) / dens * iw
    return vals * factor, cache, dls * factor[:, None, None]


def dwdse_samples(model, x0, spec: TransitionSpec, schedule, mc_samples: int,
                  rng: np.random.Generator, t_sampler=None, chunk: int = 4096,
                  mix: float = 0.0) -> np.ndarray:
    """``mc_samples`` independent single-draw estimates of DWDSE for one sequence."""
    if mc_samples < 1:
        raise ArgumentError("mc_samples must be >= 1")
    x0 = np.asarray(x0, dtype=np.int64)
    out = []
    left = mc_samples
    while left > 0:
        b = min(chunk, left)
        vals, _, _ = dwdse_terms(model, np.repeat(x0[None], b, axis=0), spec, schedule, rng,
                                 t_sampler, mix)
        out.append(vals)
        left -= b
    return np.concatenate(out)


def dwdse(model, x0, spec: TransitionSpec, schedule, mc_samples: int = 1000,
          rng: np.random.Generator | None = None, t_sampler=None, mix: float = 0.0) -> float:
    """Monte Carlo estimate of the diffusion-weighted denoising score entropy."""
    rng = np.random.default_rng(0) if rng is None else rng
    return float(dwdse_samples(model, x0, spec, schedule, mc_samples, rng, t_sampler,
                               mix=mix).mean())


def prior_kl(x0, spec: TransitionSpec, schedule, eta: float = 1e-5) -> float:
    """Sum over positions of ``KL(P(. | x0_i) at t=1 || pi)``."""
    x0 = np.asarray(x0, dtype=np.int64)
    sb = float(schedule.sigma_bar(1.0))
    pi = process.stationary(spec, eta)
    cols = process.kernel_columns(spec, sb, x0)
    # rounding can push a near-zero divergence slightly negative
    return max(0.0, float(sum(oracle.kl_divergence(c, pi) for c in cols)))
