"""Structured rate matrices, noise schedules and closed-form forward kernels.

Conventions used throughout the package:

* ``Q[dest, src]`` is the jump rate from ``src`` to ``dest``; columns sum to 0.
* The absorbing process has ``n + 1`` states and MASK is the last index ``n``.
* The forward kernel at total noise ``sbar`` is ``exp(sbar * Q)``; entry
  ``[dest, src]`` is ``P(x_t = dest | x_0 = src)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

UNIFORM = "uniform"
ABSORBING = "absorbing"


@dataclass(frozen=True)
class TransitionSpec:
    """Uniform or absorbing generator over single tokens.

    ``scale`` multiplies the base matrix. It defaults to ``1/n`` for the
    uniform matrix and ``1`` for the absorbing one.
    """

    kind: str
    n: int
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in (UNIFORM, ABSORBING):
            raise ArgumentError(f"unknown transition kind {self.kind!r}")
        if int(self.n) < 1 or (self.kind == UNIFORM and self.n < 2):
            raise ArgumentError(f"invalid token count {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.scale is None:
            object.__setattr__(self, "scale", 1.0 / self.n if self.kind == UNIFORM else 1.0)
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ArgumentError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def uniform(cls, n: int, scale: float | None = None) -> "TransitionSpec":
        return cls(UNIFORM, n, scale)

    @classmethod
    def absorbing(cls, n: int, scale: float = 1.0) -> "TransitionSpec":
        return cls(ABSORBING, n, scale)

    @property
    def n_states(self) -> int:
        return self.n + 1 if self.kind == ABSORBING else self.n

    @property
    def mask(self) -> int | None:
        return self.n if self.kind == ABSORBING else None

    @property
    def is_absorbing(self) -> bool:
        return self.kind == ABSORBING

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionSpec":
        return cls(d["kind"], int(d["n"]), d.get("scale"))


def _check_state(spec: TransitionSpec, x) -> None:
    x = np.asarray(x)
    if np.any(x < 0) or np.any(x >= spec.n_states):
        raise ArgumentError(f"state index out of range for {spec.n_states} states: {x}")


def rate(spec: TransitionSpec, dest: int, src: int) -> float:
    """Entry ``Q[dest, src]`` without building the matrix."""
    _check_state(spec, dest)
    _check_state(spec, src)
    if spec.kind == UNIFORM:
        if dest == src:
            return spec.scale * (1 - spec.n)
        return spec.scale
    if src == spec.mask:
        return 0.0
    if dest == src:
        return -spec.scale
    return spec.scale if dest == spec.mask else 0.0


def rate_rows(spec: TransitionSpec, dest: np.ndarray) -> np.ndarray:
    """Rows ``Q[dest, :]`` with the diagonal entry zeroed, shape ``dest.shape + (S,)``.

    These are the forward rates *into* ``dest``; they weight the
    concrete-score terms of a state sitting at ``dest``.
    """
    dest = np.asarray(dest)
    S = spec.n_states
    if spec.kind == UNIFORM:
        out = np.full(dest.shape + (S,), spec.scale)
    else:
        out = np.zeros(dest.shape + (S,))
        is_mask = dest == spec.mask
        out[is_mask, : spec.n] = spec.scale
    np.put_along_axis(out, dest[..., None], 0.0, axis=-1)
    return out


def _stay(spec: TransitionSpec, sbar):
    """Decay factor of the non-stationary eigen-component."""
    sbar = np.asarray(sbar, dtype=float)
    if spec.kind == UNIFORM:
        return np.exp(-sbar * spec.scale * spec.n)
    return np.exp(-sbar * spec.scale)


def _check_sbar(sbar) -> None:
    if np.any(np.asarray(sbar) < 0):
        raise ArgumentError(f"total noise must be nonnegative, got {sbar}")


def kernel_columns(spec: TransitionSpec, sbar, src) -> np.ndarray:
    """``P(. | src)`` at total noise ``sbar``; broadcasts ``sbar`` against ``src``.

    Negative ``sbar`` is accepted here: it gives the columns of the inverse
    kernel ``exp(-|sbar| Q)`` used by the Tweedie denoiser.
    """
    a, src = np.broadcast_arrays(_stay(spec, sbar), np.asarray(src))
    idx = src[..., None]
    if spec.kind == UNIFORM:
        out = np.repeat(((1.0 - a) / spec.n)[..., None], spec.n, axis=-1)
        np.put_along_axis(out, idx, ((1.0 - a) / spec.n + a)[..., None], axis=-1)
        return out
    is_mask = src == spec.mask
    out = np.zeros(src.shape + (spec.n_states,))
    np.put_along_axis(out, idx, a[..., None], axis=-1)
    out[..., spec.mask] = np.where(is_mask, 1.0, 1.0 - a)
    return out


def kernel_rows(spec: TransitionSpec, sbar, dest) -> np.ndarray:
    """``P(dest | .)`` as a vector over source states."""
    a, dest = np.broadcast_arrays(_stay(spec, sbar), np.asarray(dest))
    idx = dest[..., None]
    if spec.kind == UNIFORM:
        # the uniform kernel is symmetric
        return kernel_columns(spec, sbar, dest)
    is_mask = dest == spec.mask
    out = np.zeros(dest.shape + (spec.n_states,))
    out[..., : spec.n] = np.where(is_mask, 1.0 - a, 0.0)[..., None]
    np.put_along_axis(out, idx, np.where(is_mask, 1.0, a)[..., None], axis=-1)
    return out


def kernel_matrix(spec: TransitionSpec, sbar: float) -> np.ndarray:
    """Closed-form ``exp(sbar * Q)`` as a dense ``S x S`` matrix (column stochastic)."""
    S = spec.n_states
    return kernel_columns(spec, np.full(S, float(sbar)), np.arange(S)).T.copy()


def apply_kernel(spec: TransitionSpec, tau, v: np.ndarray) -> np.ndarray:
    """Compute ``exp(tau * Q) @ v`` along the last axis of ``v`` without densifying.

    ``tau`` may be negative and broadcasts against ``v.shape[:-1]``.
    """
    v = np.asarray(v, dtype=float)
    a = _stay(spec, tau)[..., None]
    if spec.kind == UNIFORM:
        return a * v + (1.0 - a) * v.mean(axis=-1, keepdims=True)
    out = a * v
    out[..., spec.mask] = (1.0 - a[..., 0]) * v[..., : spec.n].sum(axis=-1) + v[..., spec.mask]
    return out


def transition_prob(spec: TransitionSpec, sbar: float, dest: int, src: int) -> float:
    """``P(x_t = dest | x_0 = src)`` at total noise ``sbar``."""
    _check_sbar(sbar)
    _check_state(spec, dest)
    _check_state(spec, src)
    return float(kernel_columns(spec, sbar, src)[dest])


def stationary(spec: TransitionSpec, eta: float = 1e-5) -> np.ndarray:
    """Limiting distribution; absorbing leaks ``eta`` uniformly onto non-MASK states."""
    if spec.kind == UNIFORM:
        return np.full(spec.n, 1.0 / spec.n)
    if not 0 <= eta < 1:
        raise ArgumentError(f"leakage must lie in [0, 1), got {eta}")
    pi = np.full(spec.n_states, eta / spec.n)
    pi[spec.mask] = 1.0 - eta
    return pi


def generation_prior(spec: TransitionSpec) -> np.ndarray:
    """Prior used to start sampling: flat, or all mass on MASK."""
    return stationary(spec, eta=0.0)


def sample_forward(spec: TransitionSpec, sbar, src, rng: np.random.Generator):
    """Draw ``x_t ~ P(. | src)``; vectorized over ``src`` with ``sbar`` broadcast."""
    _check_sbar(sbar)
    src_arr = np.asarray(src)
    _check_state(spec, src_arr)
    a = np.broadcast_to(_stay(spec, sbar), src_arr.shape)
    u = rng.random(src_arr.shape)
    keep = u < a
    if spec.kind == UNIFORM:
        jump = rng.integers(0, spec.n, size=src_arr.shape)
    else:
        jump = np.full(src_arr.shape, spec.mask)
    out = np.where(keep, src_arr, jump)
    return out if out.ndim else int(out)


# ---------------------------------------------------------------- schedules


@dataclass(frozen=True)
class GeometricSchedule:
    """``sbar(t) = sigma_min**(1-t) * sigma_max**t``."""

    sigma_min: float = 1e-4
    sigma_max: float = 20.0
    t_min: float = 1e-3
    kind: str = field(default="geometric", init=False)

    def __post_init__(self):
        if not (0 < self.sigma_min < self.sigma_max):
            raise ArgumentError("need 0 < sigma_min < sigma_max")
        if not (0 < self.t_min < 1):
            raise ArgumentError("t_min must lie in (0, 1)")

    @property
    def _log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def sigma_bar(self, t):
        t = _check_t(t)
        return self.sigma_min * np.exp(t * self._log_ratio)

    def sigma(self, t):
        return self.sigma_bar(t) * self._log_ratio

    def t_of(self, sbar):
        return np.log(np.asarray(sbar, dtype=float) / self.sigma_min) / self._log_ratio

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma_min": self.sigma_min,
                "sigma_max": self.sigma_max, "t_min": self.t_min}


@dataclass(frozen=True)
class LogLinearSchedule:
    """``sbar(t) = -log(1 - (1 - eps) t)``."""

    eps: float = 1e-3
    t_min: float = 1e-3
    kind: str = field(default="loglinear", init=False)

    def __post_init__(self):
        if not (0 < self.eps < 1):
            raise ArgumentError("eps must lie in (0, 1)")
        if not (0 < self.t_min < 1):
            raise ArgumentError("t_min must lie in (0, 1)")

    def sigma_bar(self, t):
        t = _check_t(t)
        return -np.log1p(-(1.0 - self.eps) * t)

    def sigma(self, t):
        t = _check_t(t)
        return (1.0 - self.eps) / (1.0 - (1.0 - self.eps) * t)

    def t_of(self, sbar):
        return -np.expm1(-np.asarray(sbar, dtype=float)) / (1.0 - self.eps)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eps": self.eps, "t_min": self.t_min}


NoiseSchedule = GeometricSchedule | LogLinearSchedule


def _check_t(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(~np.isfinite(arr)):
        raise ArgumentError(f"time must lie in [0, 1], got {t}")
    return arr


def sigma_bar(schedule: NoiseSchedule, t):
    """Total noise accumulated by time ``t``."""
    out = schedule.sigma_bar(t)
    return float(out) if np.ndim(out) == 0 else out


def sigma(schedule: NoiseSchedule, t):
    """Noise rate ``d sbar / dt``."""
    out = schedule.sigma(t)
    return float(out) if np.ndim(out) == 0 else out


def schedule_from_dict(d: dict) -> NoiseSchedule:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "geometric":
        return GeometricSchedule(**d)
    if kind == "loglinear":
        return LogLinearSchedule(**d)
    raise ArgumentError(f"unknown schedule kind {kind!r}")
