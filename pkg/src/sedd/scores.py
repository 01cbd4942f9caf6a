"""Concrete-score models ``s(x, sbar)[i, y] ~ p(x with x_i -> y) / p(x)``.

Every model works on batches: ``forward(x, sbar)`` takes ``x`` of shape
``(B, d)`` and ``sbar`` of shape ``(B,)`` and returns a :class:`ScoreEval`
plus an opaque cache; ``backward(cache, upstream)`` turns a gradient with
respect to the log-scores into a gradient with respect to the flat
parameter vector.

Entries that never carry weight are flagged rather than stored as ``-inf``:
the self entry ``(i, x_i)`` (log-ratio 0) and, for the absorbing process,
every off-self entry at an unmasked position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import process
from .errors import ArgumentError, CapacityError, UndefinedScoreError
from .process import TransitionSpec

TABULAR_LIMIT = 2**16


@dataclass
class ScoreEval:
    log_scores: np.ndarray  # (..., d, S); 0 wherever ``live`` is False
    live: np.ndarray  # (..., d, S) bool
    sigma_bar: np.ndarray | float

    def full_ratios(self, x) -> np.ndarray:
        """Ratios with the self entry set to 1 and sentinel entries to 0."""
        x = np.asarray(x)
        r = np.where(self.live, np.exp(self.log_scores), 0.0)
        np.put_along_axis(r, x[..., None], 1.0, axis=-1)
        return r

    def sentinel(self, x) -> np.ndarray:
        x = np.asarray(x)
        s = ~self.live
        np.put_along_axis(s, x[..., None], False, axis=-1)
        return s


def structural_live(spec: TransitionSpec, x) -> np.ndarray:
    """Entries that may carry a finite score: off-self, and at MASK positions only when absorbing."""
    x = np.asarray(x)
    live = np.ones(x.shape + (spec.n_states,), dtype=bool)
    np.put_along_axis(live, x[..., None], False, axis=-1)
    if spec.is_absorbing:
        live &= (x == spec.mask)[..., None]
    return live


def _check_input(model, x, sbar):
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 2 or x.shape[1] != model.d:
        raise ArgumentError(f"expected sequences of shape (B, {model.d}), got {x.shape}")
    if np.any(x < 0) or np.any(x >= model.spec.n_states):
        raise ArgumentError("token id out of range")
    sbar = np.broadcast_to(np.asarray(sbar, dtype=float), x.shape[:1]).copy()
    return x, sbar


class ScoreModel:
    """Interface shared by the trainable backends."""

    spec: TransitionSpec
    d: int
    params: np.ndarray

    @property
    def n_params(self) -> int:
        return self.params.size

    def with_params(self, params: np.ndarray) -> "ScoreModel":
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = np.array(params, dtype=float)
        return clone

    def hparams(self) -> dict:
        raise NotImplementedError


def eval_scores(model, seq, sbar: float) -> ScoreEval:
    """Evaluate one sequence; returns per-position ``d x S`` log-scores."""
    seq = np.asarray(seq)
    if seq.ndim != 1:
        raise ArgumentError("expected a single sequence")
    ev, _ = model.forward(seq[None, :], np.array([sbar]))
    return ScoreEval(ev.log_scores[0], ev.live[0], float(sbar))


def backprop_scores(model, seq, sbar: float, upstream) -> np.ndarray:
    """Parameter gradient of ``sum(upstream * log_scores)`` for one sequence."""
    upstream = np.asarray(upstream, dtype=float)
    if not np.all(np.isfinite(upstream)):
        raise ArgumentError("upstream gradient must be finite")
    seq = np.asarray(seq)
    _, cache = model.forward(seq[None, :], np.array([sbar]))
    return model.backward(cache, upstream[None])


# ------------------------------------------------------------------ tabular


class TabularScore(ScoreModel):
    """One free log-score per (sequence, position, token); ignores the noise level."""

    def __init__(self, spec: TransitionSpec, d: int, params: np.ndarray | None = None):
        N = spec.n_states**d
        if N > TABULAR_LIMIT:
            raise CapacityError(f"tabular model needs {N} rows, limit {TABULAR_LIMIT}")
        self.spec, self.d = spec, d
        self.shape = (N, d, spec.n_states)
        size = int(np.prod(self.shape))
        self.params = np.zeros(size) if params is None else np.array(params, dtype=float)
        if self.params.size != size:
            raise ArgumentError("parameter vector has the wrong size")

    @classmethod
    def from_log_ratios(cls, spec, d, table):
        return cls(spec, d, np.nan_to_num(np.asarray(table, dtype=float), neginf=0.0).ravel())

    def hparams(self) -> dict:
        return {"backend": "tabular", "d": self.d}

    def forward(self, x, sbar):
        from .oracle import encode

        x, sbar = _check_input(self, x, sbar)
        idx = encode(x, self.spec.n_states)
        live = structural_live(self.spec, x)
        ls = np.where(live, self.params.reshape(self.shape)[idx], 0.0)
        return ScoreEval(ls, live, sbar), (idx, live)

    def backward(self, cache, upstream):
        idx, live = cache
        grad = np.zeros(self.shape)
        np.add.at(grad, idx, np.where(live, upstream, 0.0))
        return grad.ravel()


# ------------------------------------------------------------------ MLP


def noise_features(sbar, k: int) -> np.ndarray:
    """Fixed features of the total noise level, shape ``(B, k)``.

    Columns: ``log sbar / 4``, ``sbar / 8``, ``log(1 - exp(-sbar)) / 4``, then
    ``sin, cos`` pairs of ``j * log(sbar) / 2`` for ``j = 1, 2, ...``.
    """
    if k < 3:
        raise ArgumentError("need at least 3 noise features")
    sb = np.maximum(np.asarray(sbar, dtype=float), 1e-12)
    L = np.log(sb)
    cols = [L / 4, sb / 8, np.log(-np.expm1(-sb)) / 4]
    j = 1
    while len(cols) < k:
        cols.append(np.sin(j * L / 2))
        if len(cols) < k:
            cols.append(np.cos(j * L / 2))
        j += 1
    return np.stack(cols, axis=-1)


class _Mlp:
    """Two tanh layers over concatenated token embeddings and noise features.

    Flat parameter layout, row-major, in this order::

        E  (S, e)          token embeddings
        W1 (h, d*e + k)    b1 (h,)
        W2 (h, h)          b2 (h,)
        W3 (out, h)        b3 (out,)
        V  (out, k)        linear skip from the noise features
    """

    def _build(self, spec, d, embed, hidden, features, out_dim, seed):
        self.spec, self.d = spec, d
        self.embed, self.hidden, self.features, self.seed = embed, hidden, features, seed
        S = spec.n_states
        shapes = [("E", (S, embed)), ("W1", (hidden, d * embed + features)), ("b1", (hidden,)),
                  ("W2", (hidden, hidden)), ("b2", (hidden,)), ("W3", (out_dim, hidden)),
                  ("b3", (out_dim,)), ("V", (out_dim, features))]
        self.layout, off = {}, 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self.layout[name] = (off, shape)
            off += size
        rng = np.random.default_rng(seed)
        self.params = np.zeros(off)
        p = self._views(self.params)
        p["E"][...] = rng.normal(size=p["E"].shape)
        p["W1"][...] = rng.normal(size=p["W1"].shape) / np.sqrt(d * embed + features)
        p["W2"][...] = rng.normal(size=p["W2"].shape) / np.sqrt(hidden)

    def _views(self, flat):
        return {k: flat[o:o + int(np.prod(s))].reshape(s) for k, (o, s) in self.layout.items()}

    def _trunk(self, x, sbar):
        p = self._views(self.params)
        B = x.shape[0]
        phi = noise_features(sbar, self.features)
        z0 = np.concatenate([p["E"][x].reshape(B, -1), phi], axis=1)
        a1 = np.tanh(z0 @ p["W1"].T + p["b1"])
        a2 = np.tanh(a1 @ p["W2"].T + p["b2"])
        out = a2 @ p["W3"].T + p["b3"] + phi @ p["V"].T
        return out, (x, phi, z0, a1, a2)

    def _trunk_backward(self, cache, dout):
        x, phi, z0, a1, a2 = cache
        p = self._views(self.params)
        grad = np.zeros_like(self.params)
        g = self._views(grad)
        g["W3"][...] = dout.T @ a2
        g["b3"][...] = dout.sum(axis=0)
        g["V"][...] = dout.T @ phi
        dz2 = (dout @ p["W3"]) * (1.0 - a2**2)
        g["W2"][...] = dz2.T @ a1
        g["b2"][...] = dz2.sum(axis=0)
        dz1 = (dz2 @ p["W2"]) * (1.0 - a1**2)
        g["W1"][...] = dz1.T @ z0
        g["b1"][...] = dz1.sum(axis=0)
        demb = (dz1 @ p["W1"])[:, : self.d * self.embed].reshape(x.shape[0], self.d, self.embed)
        np.add.at(g["E"], x, demb)
        return grad


class MlpScore(_Mlp, ScoreModel):
    """Direct log-score output, one head row per (position, token)."""

    def __init__(self, spec: TransitionSpec, d: int, embed: int = 16, hidden: int = 64,
                 features: int = 7, seed: int = 0):
        self._build(spec, d, embed, hidden, features, d * spec.n_states, seed)

    def hparams(self) -> dict:
        return {"backend": "mlp", "d": self.d, "embed": self.embed, "hidden": self.hidden,
                "features": self.features, "seed": self.seed}

    def forward(self, x, sbar):
        x, sbar = _check_input(self, x, sbar)
        out, cache = self._trunk(x, sbar)
        live = structural_live(self.spec, x)
        ls = np.where(live, out.reshape(x.shape[0], self.d, -1), 0.0)
        return ScoreEval(ls, live, sbar), (cache, live)

    def backward(self, cache, upstream):
        trunk_cache, live = cache
        dout = np.where(live, upstream, 0.0).reshape(upstream.shape[0], -1)
        return self._trunk_backward(trunk_cache, dout)


# ------------------------------------------------------------------ mean parameterization


def _score_from_probs(q, spec: TransitionSpec, sbar, x):
    """Scores implied by per-position clean-token posteriors ``q`` of shape ``(B, d, n)``."""
    q = np.asarray(q, dtype=float)
    x = np.asarray(x, dtype=np.int64)
    sbar = np.broadcast_to(np.asarray(sbar, dtype=float), x.shape[:1])
    if np.any(sbar < 0):
        raise ArgumentError("total noise must be nonnegative")
    n = spec.n
    # K[b, x0, y] = P(y | x0)
    K = process.kernel_columns(spec, sbar[:, None], np.arange(n)[None, :])
    den = np.take_along_axis(K[:, None, :, :], x[:, :, None, None], axis=-1)[..., 0]
    structural = structural_live(spec, x)
    rows = structural.any(axis=-1)
    if spec.is_absorbing:
        bad = rows[..., None] & (q > 0) & (den <= 0)
    else:
        bad = (q > 0) & (den <= 0)
    if np.any(bad):
        raise UndefinedScoreError("P(x_t | x_0) = 0 for a clean token with posterior mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(den > 0, q / den, 0.0)
    s = np.einsum("bix,bxy->biy", w, K)
    live = structural & (s > 0)
    with np.errstate(divide="ignore"):
        ls = np.where(live, np.log(np.where(live, s, 1.0)), 0.0)
    return ScoreEval(ls, live, sbar), (q, K, den, s, live)


def score_from_mean(mean, spec: TransitionSpec, sbar, x_t) -> ScoreEval:
    """Concrete score of ``x_t`` from a clean-token posterior.

    ``mean`` is either an array of per-position posteriors over the ``n``
    clean tokens or a callable ``mean(x_t, sbar)`` returning one. Accepts a
    single sequence or a batch.
    """
    x = np.asarray(x_t, dtype=np.int64)
    single = x.ndim == 1
    q = mean(x_t, sbar) if callable(mean) else mean
    q = np.asarray(q, dtype=float)
    if single:
        x, q = x[None], q[None]
    if np.any(q < -1e-12) or np.any(np.abs(q.sum(axis=-1) - 1) > 1e-9):
        raise ArgumentError("mean model must output per-position distributions")
    ev, _ = _score_from_probs(q, spec, sbar, x)
    if single:
        return ScoreEval(ev.log_scores[0], ev.live[0], float(np.asarray(sbar).ravel()[0]))
    return ev


class MeanMlpScore(_Mlp, ScoreModel):
    """Mean-parameterized model: predicts ``p(x_0^i | x_t)`` and converts it to scores."""

    def __init__(self, spec: TransitionSpec, d: int, embed: int = 16, hidden: int = 64,
                 features: int = 7, seed: int = 0):
        self._build(spec, d, embed, hidden, features, d * spec.n, seed)

    def hparams(self) -> dict:
        return {"backend": "mean_mlp", "d": self.d, "embed": self.embed, "hidden": self.hidden,
                "features": self.features, "seed": self.seed}

    def posterior(self, x, sbar):
        x, sbar = _check_input(self, x, sbar)
        logits, cache = self._trunk(x, sbar)
        logits = logits.reshape(x.shape[0], self.d, self.spec.n)
        logits = logits - logits.max(axis=-1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=-1, keepdims=True)
        return q, cache

    def forward(self, x, sbar):
        x, sbar = _check_input(self, x, sbar)
        q, trunk_cache = self.posterior(x, sbar)
        ev, aux = _score_from_probs(q, self.spec, sbar, x)
        return ev, (trunk_cache, aux)

    def backward(self, cache, upstream):
        trunk_cache, (q, K, den, s, live) = cache
        G = np.where(live, upstream, 0.0)
        g = np.where(live, G / np.where(live, s, 1.0), 0.0)
        Kg = np.einsum("bxy,biy->bix", K, g)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(den > 0, Kg / den, 0.0)
        dlogits = q * ratio - q * G.sum(axis=-1, keepdims=True)
        return self._trunk_backward(trunk_cache, dlogits.reshape(dlogits.shape[0], -1))


def model_from_hparams(spec: TransitionSpec, hp: dict) -> ScoreModel:
    hp = dict(hp)
    backend = hp.pop("backend")
    if backend == "tabular":
        return TabularScore(spec, hp["d"])
    if backend == "mlp":
        return MlpScore(spec, **hp)
    if backend == "mean_mlp":
        return MeanMlpScore(spec, **hp)
    raise ArgumentError(f"unknown model backend {backend!r}")
