"""Adam with cosine annealing and the desk-scale training loop."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np

from . import tensor as T
from .data import ImagePair, augment, center_crop
from .errors import ConfigurationError, OptimizerError, TrainingDiverged, UsageError
from .losses import FeatureExtractor, LossWeights, loss_terms
from .metrics import psnr
from .model import ModelParams, StripformerConfig, forward, init_params, save_params

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "l_char", "l_edge", "l_con", "total", "psnr_val")


@dataclass(frozen=True)
class Schedule:
    lr_init: float = 1e-4
    lr_final: float = 1e-7
    total_steps: int = 1000

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigurationError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 < self.lr_final <= self.lr_init:
            raise ConfigurationError("need 0 < lr_final <= lr_init")


def cosine_lr(step, schedule: Schedule):
    """lr_final + (lr_init - lr_final) * (1 + cos(pi * step / total)) / 2."""
    if not 0 <= step <= schedule.total_steps:
        raise UsageError(f"step {step} outside [0, {schedule.total_steps}]")
    w = 0.5 * (1.0 + math.cos(math.pi * step / schedule.total_steps))
    return schedule.lr_final + (schedule.lr_init - schedule.lr_final) * w


@dataclass
class OptimState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, T.Tensor], state: OptimState, lr, grads=None):
    """Bias-corrected Adam update, in place, using ``grads`` or each parameter's ``.grad``."""
    resolved = {}
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise OptimizerError(f"no gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise OptimizerError(f"gradient for {name!r} has shape {g.shape}, expected {p.shape}")
        resolved[name] = g
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = resolved[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= (lr * update).astype(p.dtype)


# ------------------------------------------------------------------- loop
@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    batch_size: int = 2
    crop: Optional[int] = 64
    lr_init: float = 1e-4
    lr_final: float = 1e-7
    seed: int = 0
    augment: bool = True
    eval_every: int = 20
    dtype: str = "float32"
    psi_seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigurationError("steps, batch_size and eval_every must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def schedule(self):
        return Schedule(self.lr_init, self.lr_final, self.steps)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: ModelParams
    log: List[dict]


def _batch(dataset, rng, cfg: TrainConfig):
    idx = rng.integers(0, len(dataset), size=cfg.batch_size)
    xs, ss = [], []
    for i in idx:
        pair = dataset[int(i)]
        if cfg.augment:
            pair = augment(pair, rng, crop=cfg.crop)
        elif cfg.crop is not None and min(pair.shape[-2:]) > cfg.crop:
            pair = ImagePair(center_crop(pair.blurred, cfg.crop), center_crop(pair.sharp, cfg.crop),
                             pair.provenance)
        xs.append(pair.blurred)
        ss.append(pair.sharp)
    return np.stack(xs), np.stack(ss)


def evaluate_psnr(params, pair: ImagePair, dtype=np.float32):
    """PSNR(model(X), S) on one pair, cropped to a multiple of 4."""
    h, w = pair.shape[-2:]
    x = pair.blurred[:, : h - h % 4, : w - w % 4]
    s = pair.sharp[:, : h - h % 4, : w - w % 4]
    with T.no_grad():
        r = forward(T.Tensor(x[None], dtype=dtype), params)
    return float(psnr(np.clip(r.data[0], 0.0, 1.0), s))


def write_log(path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow(["" if row[c] is None else (row[c] if c == "step" else repr(float(row[c])))
                             for c in LOG_COLUMNS])


def train_loop(dataset, model_config: StripformerConfig = None, config: TrainConfig = None,
               loss_weights: LossWeights = None, params: ModelParams = None, psi=None,
               checkpoint_path=None, log_path=None):
    """Train on ``dataset`` (a non-empty list of :class:`ImagePair`).

    Each log row holds the learning rate and loss terms of that step's batch;
    ``psnr_val`` (PSNR on ``dataset[0]`` after the update) is filled every
    ``eval_every`` steps and on the final step. The checkpoint, if requested,
    is written at the end. A non-finite loss writes the last-good parameters
    to ``checkpoint_path`` and raises :class:`TrainingDiverged`.
    """
    if not dataset:
        raise ConfigurationError("training dataset is empty")
    config = TrainConfig() if config is None else config
    loss_weights = LossWeights() if loss_weights is None else loss_weights
    dtype = np.dtype(config.dtype)
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        model_config = StripformerConfig() if model_config is None else model_config
        params = init_params(model_config, seed=int(seeds[0].generate_state(1)[0]), dtype=dtype)
    params.set_requires_grad(True)
    if psi is None and loss_weights.lambda2 > 0:
        psi = FeatureExtractor(seed=config.psi_seed, dtype=dtype)
    rng = np.random.default_rng(seeds[1])
    schedule = config.schedule()
    state = OptimState()
    log = []

    for step in range(config.steps):
        lr = cosine_lr(step, schedule)
        xb, sb = _batch(dataset, rng, config)
        x, s = T.Tensor(xb, dtype=dtype), T.Tensor(sb, dtype=dtype)
        r = forward(x, params)
        total, parts = loss_terms(x, r, s, loss_weights, psi)
        total_value = float(total.data)
        if not math.isfinite(total_value):
            if checkpoint_path is not None:
                save_params(checkpoint_path, params)
            raise TrainingDiverged(f"non-finite loss at step {step}", step=step,
                                   checkpoint=checkpoint_path)
        params.zero_grad()
        total.backward()
        adam_step(params, state, lr)
        row = dict(step=step, lr=lr, total=total_value, psnr_val=None, **parts)
        if (step + 1) % config.eval_every == 0 or step == config.steps - 1:
            row["psnr_val"] = evaluate_psnr(params, dataset[0], dtype)
        log.append(row)
        logger.debug("step %d lr %.3g total %.5f", step, lr, total_value)

    params.zero_grad()
    if checkpoint_path is not None:
        save_params(checkpoint_path, params)
    if log_path is not None:
        write_log(log_path, log)
    return TrainResult(params, log)
