"""Training loop for the radiance cache.

Every step draws N surface points and outgoing directions, M incident
directions per point, evaluates the configured residual loss and takes one
Adam step. Random numbers come from streams keyed by ``(seed, step,
purpose)`` so the sampled points and directions do not depend on the
estimator. The batch is processed in fixed-size chunks whose gradients are
summed in chunk order, which makes results independent of ``workers``.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators as est
from .cache.adam import AdamState, adam_step
from .cache.network import CacheParams, EncodingConfig, default_topology, init_params
from .errors import ConfigurationError, DivergenceError
from .rng import Purpose, stream
from .transport.sampling import STRATEGIES, UNIFORM, SurfacePoint, sample_direction, sample_surface
from .transport.scene import Scene

log = logging.getLogger(__name__)

ESTIMATORS = ("nr", "sg", "db", "wdb", "generic")


@dataclass
class TrainConfig:
    N: int = 1024
    M: int = 16
    lr: float = 5e-4
    eps: float = est.DEFAULT_EPS
    estimator: str = "sg"
    w: float = 1.0
    generic_kind: str = "mae"
    generic_mode: str = "semi"
    huber_delta: float = 1.0
    total_steps: int = 4000
    decay_interval: int | None = None  # None: a third of total_steps
    seed: int = 0
    strategy: str = UNIFORM
    db_split: str = "total"  # "total": M/2 per buffer; "per-buffer": M per buffer
    width: int = 128
    layers: int = 4
    frequencies: int = 6
    chunk: int = 256
    workers: int = 1

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ConfigurationError("N and M must be >= 1")
        if not self.lr > 0.0:
            raise ConfigurationError("learning rate must be positive")
        if not self.eps > 0.0:
            raise ConfigurationError("eps must be positive")
        if self.estimator not in ESTIMATORS:
            raise ConfigurationError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        if self.estimator == "wdb" and not self.w >= 0.0:
            raise ConfigurationError("wdb weight must be non-negative")
        if self.estimator == "generic":
            if self.generic_kind not in est.GENERIC_KINDS:
                raise ConfigurationError(f"unknown generic loss {self.generic_kind!r}")
            if self.generic_mode not in ("semi", "full"):
                raise ConfigurationError(f"unknown generic mode {self.generic_mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown direction strategy {self.strategy!r}")
        if self.db_split not in ("total", "per-buffer"):
            raise ConfigurationError("db_split must be 'total' or 'per-buffer'")
        if self.dual and self.db_split == "total" and self.M % 2:
            raise ConfigurationError("dual-buffer estimators need an even M when splitting the total")
        if self.total_steps < 0:
            raise ConfigurationError("total_steps must be >= 0")
        if self.decay_interval is not None and self.decay_interval <= 0:
            raise ConfigurationError("decay_interval must be positive")
        if self.chunk < 1 or self.workers < 1:
            raise ConfigurationError("chunk and workers must be >= 1")

    @property
    def dual(self) -> bool:
        return self.estimator in ("db", "wdb")

    @property
    def label(self) -> str:
        if self.estimator == "wdb":
            return f"wdb(w={self.w:g})"
        if self.estimator == "generic":
            return f"{self.generic_kind}-{self.generic_mode}"
        return self.estimator

    @property
    def effective_decay(self) -> int:
        if self.decay_interval is not None:
            return self.decay_interval
        return max(1, -(-self.total_steps // 3))

    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.frequencies)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


def learning_rate(config: TrainConfig, step: int) -> float:
    """``lr / 3^floor(step / decay_interval)``."""
    return config.lr / 3.0 ** (step // config.effective_decay)


@dataclass
class TrainState:
    params: CacheParams
    adam: AdamState
    step: int = 0

    @classmethod
    def initial(cls, config: TrainConfig) -> "TrainState":
        enc = config.encoding()
        params = init_params(default_topology(enc, config.width, config.layers), enc, config.seed)
        return cls(params, AdamState.zeros(params.theta.size), 0)


@dataclass
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    lr: float
    wall_ms: float


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    images: list[dict] = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "loss", "grad_norm", "lr", "wall_ms"])
            for r in self.records:
                wr.writerow([r.step, repr(r.loss), repr(r.grad_norm), repr(r.lr), f"{r.wall_ms:.3f}"])


@dataclass
class BatchSamples:
    x: SurfacePoint
    w: np.ndarray
    directions: list  # one (N, K_b, 3) array per buffer
    pdfs: list
    rejected: int


@dataclass
class BatchGradient:
    loss: float
    grad_lhs: np.ndarray
    grad_rhs: np.ndarray | None
    samples: BatchSamples
    per_sample: np.ndarray

    @property
    def grad(self) -> np.ndarray:
        return self.grad_lhs if self.grad_rhs is None else self.grad_lhs + self.grad_rhs


def draw_batch(scene: Scene, config: TrainConfig, step: int) -> BatchSamples:
    s = config.seed
    x = sample_surface(scene, stream(s, step, Purpose.SURFACE), config.N)
    w = sample_direction(x.normal, UNIFORM, stream(s, step, Purpose.OUTGOING)).direction
    if config.dual and config.db_split == "per-buffer":
        counts = (config.M, config.M)
    else:
        counts = ((config.M + 1) // 2, config.M // 2)
    dirs, pdfs, rejected = [], [], 0
    for b, k in enumerate(counts):
        if k == 0:
            continue
        d, p, r = est.draw_directions(x.normal, k, config.strategy, stream(s, step, Purpose.INCIDENT, b))
        dirs.append(d)
        pdfs.append(p)
        rejected += r
    return BatchSamples(x, w, dirs, pdfs, rejected)


def _chunk_gradient(scene, params, config: TrainConfig, samples: BatchSamples, sl: slice):
    x = samples.x.take(sl)
    w = samples.w[sl]
    scale = 1.0 / config.N
    kind = config.estimator
    lhs = est.evaluate_lhs(params, scene, x, w, requires_grad=True)
    if config.dual:
        need = kind == "db" or config.w != 0.0
        X = est.rhs_from_directions(scene, params, x, w, samples.directions[0][sl], samples.pdfs[0][sl],
                                    requires_grad=need, stream_id=0)
        Y = est.rhs_from_directions(scene, params, x, w, samples.directions[1][sl], samples.pdfs[1][sl],
                                    requires_grad=need, stream_id=1)
        if kind == "db":
            return est.loss_grad_db(lhs, X, Y, config.eps, scale)
        return est.loss_grad_wdb(lhs, X, Y, config.w, config.eps, scale)
    d = np.concatenate([a[sl] for a in samples.directions], axis=1)
    p = np.concatenate([a[sl] for a in samples.pdfs], axis=1)
    need = kind == "nr" or (kind == "generic" and config.generic_mode == "full")
    R = est.rhs_from_directions(scene, params, x, w, d, p, requires_grad=need)
    if kind == "nr":
        return est.loss_grad_nr(lhs, R, config.eps, scale)
    if kind == "sg":
        return est.loss_grad_sg(lhs, R, config.eps, scale)
    return est.loss_grad_generic(config.generic_kind, config.generic_mode, lhs, R, config.eps,
                                 config.huber_delta, scale)


def batch_gradient(scene: Scene, params: CacheParams, config: TrainConfig, step: int) -> BatchGradient:
    samples = draw_batch(scene, config, step)
    bounds = [slice(a, min(a + config.chunk, config.N)) for a in range(0, config.N, config.chunk)]
    work = lambda sl: _chunk_gradient(scene, params, config, samples, sl)  # noqa: E731
    if config.workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(config.workers) as ex:
            parts = list(ex.map(work, bounds))
    else:
        parts = [work(sl) for sl in bounds]
    loss = 0.0
    g_lhs = None
    g_rhs = None
    for part in parts:
        loss += part.loss
        g_lhs = part.grad_lhs if g_lhs is None else g_lhs + part.grad_lhs
        if part.grad_rhs is not None:
            g_rhs = part.grad_rhs if g_rhs is None else g_rhs + part.grad_rhs
    per_sample = np.concatenate([p.per_sample for p in parts])
    return BatchGradient(loss, g_lhs, g_rhs, samples, per_sample)


def train_step(scene: Scene, state: TrainState, config: TrainConfig):
    """One optimizer step. Returns ``(new_state, StepRecord)``."""
    t0 = time.perf_counter()
    step = state.step
    bg = batch_gradient(scene, state.params, config, step)
    grad = bg.grad
    if not np.isfinite(bg.loss) or not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(bg.per_sample))
        bundle = {"step": step, "seed": config.seed, "config": dataclasses.asdict(config),
                  "loss": bg.loss,
                  "offending_sample": int(bad[0]) if bad.size else None,
                  "position": bg.samples.x.position[bad[0]].tolist() if bad.size else None}
        raise DivergenceError(f"non-finite loss/gradient at step {step} (seed {config.seed})", bundle)
    lr = learning_rate(config, step)
    theta, adam = adam_step(state.params.theta, grad, state.adam, lr)
    params = CacheParams(theta, state.params.topology, state.params.encoding)
    rec = StepRecord(step, bg.loss, float(np.linalg.norm(grad)), lr, (time.perf_counter() - t0) * 1e3)
    return TrainState(params, adam, step + 1), rec


def train_run(scene: Scene, config: TrainConfig, state: TrainState | None = None, callback=None,
              log_every: int = 0):
    """Run ``config.total_steps`` steps. ``callback(state, log)`` fires after every step."""
    state = state or TrainState.initial(config)
    tlog = TrainLog()
    for _ in range(config.total_steps):
        state, rec = train_step(scene, state, config)
        tlog.records.append(rec)
        if log_every and rec.step % log_every == 0:
            log.info("%s step %d loss %.5g |g| %.3g lr %.3g", config.label, rec.step, rec.loss,
                     rec.grad_norm, rec.lr)
        if callback is not None:
            callback(state, tlog)
    return state, tlog
