"""Reverse-process simulation with learned concrete scores.

Two tau-leaping updates are provided: the Euler update built from the
reverse rates, and the Tweedie update, which denoises each position with the
closed-form inverse kernel. Both return per-position distributions so the
exact step law can be inspected; the ``*_step`` wrappers then draw from it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import process
from .errors import ArgumentError, ConfigError, SamplerError
from .process import TransitionSpec

METHODS = ("euler", "tweedie", "exact-tweedie")
GRIDS = ("uniform", "geometric")


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "tweedie"
    steps: int = 128
    grid: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown sampler method {self.method!r}")
        if int(self.steps) < 1:
            raise ConfigError("sampler needs at least one step")
        if self.grid not in GRIDS:
            raise ConfigError(f"unknown time grid {self.grid!r}")


@dataclass(frozen=True)
class PromptSpec:
    """Filled positions and the tokens clamped there."""

    positions: tuple[int, ...] = ()
    tokens: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.positions) != len(self.tokens):
            raise ArgumentError("positions and tokens differ in length")
        if len(set(self.positions)) != len(self.positions):
            raise ArgumentError(f"prompt positions collide: {self.positions}")

    @classmethod
    def parse(cls, text: str) -> "PromptSpec":
        """Parse ``"pos:tok,pos:tok"``."""
        pos, tok = [], []
        for item in filter(None, (s.strip() for s in text.split(","))):
            try:
                a, b = item.split(":")
                pos.append(int(a))
                tok.append(int(b))
            except ValueError:
                raise ArgumentError(f"bad prompt item {item!r}") from None
        return cls(tuple(pos), tuple(tok))

    @classmethod
    def from_dict(cls, d: dict) -> "PromptSpec":
        items = sorted((int(k), int(v)) for k, v in d.items())
        return cls(tuple(p for p, _ in items), tuple(t for _, t in items))

    def validate(self, spec: TransitionSpec, d: int) -> None:
        for p, t in zip(self.positions, self.tokens):
            if not 0 <= p < d:
                raise ArgumentError(f"prompt position {p} out of range for length {d}")
            if not 0 <= t < spec.n:
                raise ArgumentError(f"prompt token {t} is not a real token")

    def project(self, x: np.ndarray) -> np.ndarray:
        if self.positions:
            x[:, list(self.positions)] = np.asarray(self.tokens)
        return x


@dataclass
class SampleStats:
    clipped_mass: float = 0.0
    steps: int = 0


def time_grid(schedule, config: SamplerConfig) -> np.ndarray:
    """Decreasing times from 1 to ``t_min`` with ``steps + 1`` points."""
    if config.grid == "uniform":
        return np.linspace(1.0, schedule.t_min, config.steps + 1)
    sb = np.geomspace(float(schedule.sigma_bar(1.0)), float(schedule.sigma_bar(schedule.t_min)),
                      config.steps + 1)
    ts = np.clip(schedule.t_of(sb), schedule.t_min, 1.0)
    ts[0], ts[-1] = 1.0, schedule.t_min
    return ts


def _check_step(t, dt, schedule):
    if dt <= 0:
        raise ArgumentError("step size must be positive")
    if t - dt < schedule.t_min - 1e-12:
        raise ArgumentError("step would pass below t_min")


def euler_probs(model, x, t: float, dt: float, spec: TransitionSpec, schedule):
    """Per-position Euler tau-leaping law, shape ``(B, d, S)``, and the clipped mass."""
    _check_step(t, dt, schedule)
    x = np.asarray(x, dtype=np.int64)
    sb = float(schedule.sigma_bar(t))
    ev, _ = model.forward(x, np.full(x.shape[0], sb))
    rates = dt * float(schedule.sigma(t)) * process.rate_rows(spec, x)
    off = np.where(ev.live, rates * np.exp(ev.log_scores), 0.0)
    stay = 1.0 - off.sum(axis=-1)
    probs = off
    np.put_along_axis(probs, x[..., None], stay[..., None], axis=-1)
    clipped = float(-np.minimum(probs, 0.0).sum())
    return _normalize(np.maximum(probs, 0.0)), clipped


def tweedie_probs(model, x, t: float, dt: float, spec: TransitionSpec, schedule):
    """Per-position Tweedie tau-leaping law.

    Each position is denoised by the inverse kernel over the accumulated
    noise ``sbar(t) - sbar(t - dt)`` and reweighted by the forward
    probability of landing back on ``x_t``.
    """
    _check_step(t, dt, schedule)
    x = np.asarray(x, dtype=np.int64)
    sb = float(schedule.sigma_bar(t))
    dsb = sb - float(schedule.sigma_bar(t - dt))
    ev, _ = model.forward(x, np.full(x.shape[0], sb))
    r = ev.full_ratios(x)
    probs = process.apply_kernel(spec, -dsb, r) * process.kernel_rows(spec, dsb, x)
    clipped = float(-np.minimum(probs, 0.0).sum())
    return _normalize(np.maximum(probs, 0.0)), clipped


def _normalize(probs):
    z = probs.sum(axis=-1, keepdims=True)
    if np.any(z <= 0) or not np.all(np.isfinite(z)):
        bad = np.argwhere(~(z[..., 0] > 0))
        raise SamplerError(f"degenerate step distribution at (chain, position) {bad[:5].tolist()}")
    return probs / z


def categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``probs`` (last axis)."""
    u = rng.random(probs.shape[:-1] + (1,))
    cdf = np.cumsum(probs, axis=-1)
    idx = (u * cdf[..., -1:] < cdf).argmax(axis=-1)
    return idx


def euler_step(model, x, t, dt, spec, schedule, rng):
    probs, _ = euler_probs(model, x, t, dt, spec, schedule)
    return categorical(probs, rng)


def tweedie_step(model, x, t, dt, spec, schedule, rng):
    probs, _ = tweedie_probs(model, x, t, dt, spec, schedule)
    return categorical(probs, rng)


def exact_tweedie_denoise(ratios, spec: TransitionSpec, sbar: float, x_t: int) -> np.ndarray:
    """Exact reverse law ``P(x_{t-eps} = . | x_t)`` from the full ratio vector ``p_t(y) / p_t(x_t)``."""
    ratios = np.asarray(ratios, dtype=float)
    if sbar < 0:
        raise ArgumentError("total noise must be nonnegative")
    if spec.is_absorbing and x_t != spec.mask:
        # an unmasked token never changes; its ratios are sentinels
        return np.eye(spec.n_states)[x_t]
    denoised = process.apply_kernel(spec, -sbar, ratios)
    if denoised.min() < -1e-9 * max(1.0, np.abs(denoised).max()):
        raise ArgumentError("ratios are inconsistent with any distribution at this noise level")
    probs = np.maximum(denoised, 0.0) * process.kernel_rows(spec, sbar, x_t)
    return probs / probs.sum()


def _exact_tweedie_probs(model, x, t, dt, spec, schedule):
    if x.shape[1] != 1:
        raise ConfigError("exact-tweedie needs the full ratio vector, available only for d = 1")
    _check_step(t, dt, schedule)
    sb = float(schedule.sigma_bar(t))
    dsb = sb - float(schedule.sigma_bar(t - dt))
    ev, _ = model.forward(x, np.full(x.shape[0], sb))
    r = ev.full_ratios(x)[:, 0]
    out = np.stack([exact_tweedie_denoise(r[b], spec, dsb, int(x[b, 0])) for b in range(len(x))])
    return out[:, None, :], 0.0


_STEP_PROBS = {"euler": euler_probs, "tweedie": tweedie_probs, "exact-tweedie": _exact_tweedie_probs}


def final_step_probs(model, x, spec: TransitionSpec, schedule) -> np.ndarray:
    """Law used at ``t_min`` for positions still masked: scores over real tokens."""
    sb = float(schedule.sigma_bar(schedule.t_min))
    ev, _ = model.forward(x, np.full(x.shape[0], sb))
    r = ev.full_ratios(x)[..., : spec.n]
    return _normalize(r)


def _run(model, spec, schedule, config, d, rng, num_samples, prompt, stats):
    x = _initial(spec, d, num_samples, rng)
    prompt.project(x)
    ts = time_grid(schedule, config)
    step_probs = _STEP_PROBS[config.method]
    for k in range(config.steps):
        probs, clipped = step_probs(model, x, ts[k], ts[k] - ts[k + 1], spec, schedule)
        x = prompt.project(categorical(probs, rng))
        if stats is not None:
            stats.clipped_mass += clipped
            stats.steps += 1
    if spec.is_absorbing:
        masked = x == spec.mask
        if masked.any():
            probs = final_step_probs(model, x, spec, schedule)
            x = np.where(masked, categorical(probs, rng), x)
    return prompt.project(x)


def _initial(spec, d, num_samples, rng):
    if spec.is_absorbing:
        return np.full((num_samples, d), spec.mask, dtype=np.int64)
    return rng.integers(0, spec.n, size=(num_samples, d))


def sample(model, spec: TransitionSpec, schedule, config: SamplerConfig, d: int,
           rng: np.random.Generator, num_samples: int = 1,
           stats: SampleStats | None = None) -> np.ndarray:
    """Draw ``num_samples`` sequences by simulating the reverse process from the prior."""
    return _run(model, spec, schedule, config, d, rng, num_samples, PromptSpec(), stats)


def infill(model, spec: TransitionSpec, schedule, config: SamplerConfig, d: int,
           prompt: PromptSpec, rng: np.random.Generator, num_samples: int = 1,
           stats: SampleStats | None = None) -> np.ndarray:
    """Sample the unfilled positions, clamping prompt positions after every step."""
    prompt.validate(spec, d)
    if len(prompt.positions) == d:
        return prompt.project(np.zeros((num_samples, d), dtype=np.int64))
    return _run(model, spec, schedule, config, d, rng, num_samples, prompt, stats)
