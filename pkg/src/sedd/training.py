"""Adam training loop with EMA and a checksummed checkpoint format.

Checkpoint file layout (all integers little-endian)::

    b"SEDD"                       magic
    u8                            format version (currently 1)
    u32                           header length H
    H bytes                       canonical JSON header, UTF-8
    4 * P bytes                   raw parameters, float32
    4 * P bytes                   EMA parameters, float32
    u32                           CRC-32 of every preceding byte

The header carries the run configuration, model hyperparameters, parameter
count ``P``, step count and the generator state.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import losses, process
from .errors import (ArgumentError, CheckpointError, ChecksumError, ConfigError,
                     NumericalAbort, TruncatedError, VersionError)

MAGIC = b"SEDD"
FORMAT_VERSION = 1
LOSSES = ("dwdse", "dse")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 3e-4
    warmup_steps: int = 2000
    grad_clip: float = 1.0
    total_steps: int = 1000
    ema_decay: float = 0.9999
    seed: int = 0
    loss: str = "dwdse"
    sigma_bar: float = 1.0  # noise level for the fixed-noise ``dse`` loss
    exact: bool = False  # ``dse`` only: enumerate the expectation instead of sampling
    lr_decay: str = "constant"  # "cosine" or "linear" to zero at total_steps
    t_min: float | None = None  # overrides the schedule's t_min when set
    eval_every: int = 0
    eval_mc_samples: int = 64
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.lr_decay not in ("constant", "cosine", "linear"):
            raise ConfigError(f"unknown lr decay {self.lr_decay!r}")
        for name in ("batch_size", "lr", "grad_clip", "sigma_bar"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("step counts must be nonnegative")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)  # JSON-native, so a reloaded header compares equal
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


@dataclass
class Checkpoint:
    config: dict
    hparams: dict
    params: np.ndarray
    ema: np.ndarray
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype="<f4")
        self.ema = np.asarray(self.ema, dtype="<f4")
        if self.params.shape != self.ema.shape:
            raise ArgumentError("raw and EMA parameter vectors differ in length")


def ema_update(ema: np.ndarray, params: np.ndarray, decay: float) -> np.ndarray:
    """``decay * ema + (1 - decay) * params``."""
    ema = np.asarray(ema, dtype=float)
    params = np.asarray(params, dtype=float)
    if ema.shape != params.shape:
        raise ArgumentError("EMA and parameter vectors differ in length")
    return decay * ema + (1.0 - decay) * params


def clip_grad(grad: np.ndarray, max_norm: float):
    """Rescale to global norm at most ``max_norm``; returns ``(grad, norm_before)``."""
    norm = float(np.sqrt(np.sum(grad * grad)))
    if norm > max_norm:
        grad = grad * (max_norm / norm)
    return grad, norm


class Adam:
    def __init__(self, size: int, betas=(0.9, 0.999), eps: float = 1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    lr = cfg.lr * min(1.0, (step + 1) / cfg.warmup_steps) if cfg.warmup_steps else cfg.lr
    if cfg.lr_decay == "cosine" and cfg.total_steps > 0:
        lr *= 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))
    elif cfg.lr_decay == "linear" and cfg.total_steps > 0:
        lr *= 1.0 - step / cfg.total_steps
    return lr


def _batch_loss(model, x0, spec, schedule, cfg: TrainConfig, rng, truth):
    B = x0.shape[0]
    if cfg.loss == "dwdse":
        vals, cache, up = losses.dwdse_terms(model, x0, spec, schedule, rng)
        return float(vals.mean()), model.backward(cache, up / B)
    if cfg.exact:
        if truth is None:
            raise ConfigError("exact dse training needs an enumerable ground truth")
        return losses.denoising_score_entropy(model, truth, spec, cfg.sigma_bar, return_grad=True)
    sb = np.full(B, cfg.sigma_bar)
    x = process.sample_forward(spec, cfg.sigma_bar, x0, rng)
    ev, cache = model.forward(x, sb)
    vals, dls = losses.dse_terms(ev, x, x0, spec, sb, ev.live.astype(float))
    return float(vals.mean()), model.backward(cache, dls / B)


def train(cfg: TrainConfig, corpus, model, spec, schedule, truth=None, val_corpus=None,
          on_metrics=None, run_config: dict | None = None) -> Checkpoint:
    """Optimize ``model`` in place on ``corpus`` and return the final checkpoint.

    ``corpus`` is a :class:`~sedd.corpus.Corpus` or an ``(N, d)`` token array.
    ``truth`` is an enumerated clean distribution, needed only for exact DSE.
    ``on_metrics`` receives one dict per step (and per validation pass).
    """
    data = np.asarray(getattr(corpus, "sequences", corpus), dtype=np.int64)
    if data.size == 0:
        raise ArgumentError("training corpus is empty")
    if cfg.t_min is not None:
        schedule = dataclasses.replace(schedule, t_min=cfg.t_min)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.n_params, cfg.betas)
    ema = model.params.copy()
    start = time.perf_counter()
    for step in range(cfg.total_steps):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        x0 = data[idx]
        with np.errstate(over="ignore", invalid="ignore"):  # caught just below
            loss, grad = _batch_loss(model, x0, spec, schedule, cfg, rng, truth)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            digest = hashlib.sha1(x0.tobytes()).hexdigest()[:12]
            raise NumericalAbort(f"non-finite loss at step {step} (batch {digest})")
        grad, norm = clip_grad(grad, cfg.grad_clip)
        lr = learning_rate(cfg, step)
        model.params = opt.step(model.params, grad, lr)
        ema = ema_update(ema, model.params, cfg.ema_decay)
        if on_metrics is not None:
            on_metrics({"step": step, "loss": loss, "grad_norm": norm, "lr": lr,
                        "wall_time": time.perf_counter() - start})
            if cfg.eval_every and val_corpus is not None and (step + 1) % cfg.eval_every == 0:
                on_metrics(_validate(model, ema, val_corpus, spec, schedule, cfg, step))
    config = dict(run_config or {})
    config["train"] = cfg.to_dict()
    config["process"] = {**config.get("process", {}), **spec.to_dict()}
    config["schedule"] = schedule.to_dict()
    return Checkpoint(config=config, hparams=model.hparams(), params=model.params, ema=ema,
                      step=cfg.total_steps, rng_state=rng.bit_generator.state)


def _validate(model, ema, val_corpus, spec, schedule, cfg, step):
    from .likelihood import corpus_eval

    seqs = np.asarray(getattr(val_corpus, "sequences", val_corpus))[:32]
    rng = np.random.default_rng([cfg.seed, step])
    raw = corpus_eval(model, seqs, spec, schedule, cfg.eval_mc_samples, rng)
    rng = np.random.default_rng([cfg.seed, step])
    avg = corpus_eval(model.with_params(ema), seqs, spec, schedule, cfg.eval_mc_samples, rng)
    return {"step": step, "val_bound_raw": raw.mean_bound, "val_bound_ema": avg.mean_bound}


# ------------------------------------------------------------------ checkpoint io


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = _canonical({"config": ckpt.config, "hparams": ckpt.hparams,
                         "n_params": int(ckpt.params.size), "step": int(ckpt.step),
                         "rng_state": ckpt.rng_state})
    body = (MAGIC + struct.pack("<BI", ckpt.version, len(header)) + header
            + ckpt.params.astype("<f4").tobytes() + ckpt.ema.astype("<f4").tobytes())
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 9:
        raise TruncatedError("file too short to be a checkpoint")
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic bytes; not a checkpoint file")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    header = None
    try:
        header = json.loads(data[9:9 + hlen].decode())
        expected = 9 + hlen + 8 * int(header["n_params"]) + 4
    except (UnicodeDecodeError, ValueError, KeyError, TypeError):
        expected = None
    crc_ok = len(data) >= 13 and struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if not crc_ok or expected is None or len(data) != expected:
        if expected is not None and len(data) < expected:
            raise TruncatedError(f"checkpoint truncated: {len(data)} of {expected} bytes")
        raise ChecksumError("checkpoint checksum mismatch")
    P = int(header["n_params"])
    off = 9 + hlen
    params = np.frombuffer(data, dtype="<f4", count=P, offset=off).copy()
    ema = np.frombuffer(data, dtype="<f4", count=P, offset=off + 4 * P).copy()
    return Checkpoint(config=header["config"], hparams=header["hparams"], params=params, ema=ema,
                      step=header["step"], rng_state=header["rng_state"], version=version)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read())


def restore(ckpt: Checkpoint, use_ema: bool = True):
    """Rebuild ``(model, spec, schedule)`` from a checkpoint."""
    from .scores import model_from_hparams

    spec = process.TransitionSpec.from_dict(ckpt.config["process"])
    schedule = process.schedule_from_dict(ckpt.config["schedule"])
    model = model_from_hparams(spec, ckpt.hparams)
    model.params = np.asarray(ckpt.ema if use_ema else ckpt.params, dtype=float)
    return model, spec, schedule
