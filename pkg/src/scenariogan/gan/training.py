"""WGAN-GP training with two time-scale learning rates.

The critic minimizes::

    mean(D(fake)) - mean(D(real)) + lam * mean((||grad_xhat D(xhat)||_2 - 1)^2)
    xhat = eps * real + (1 - eps) * fake,  eps ~ U[0, 1] per batch item

and the generator minimizes ``-mean(D(G(z)))``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..datapipe import ScalerParams, WindowSet
from ..numcore import tensor as T
from ..numcore.optim import Optimizer
from ..numcore.tensor import Tensor, gradient_of, no_grad
from .models import Critic, CriticSpec, Generator, GeneratorSpec

log = logging.getLogger(__name__)

HISTORY_KEYS = ("critic_loss", "gradient_penalty", "wasserstein_gap", "generator_loss")


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, snapshot: dict):
        self.iteration = iteration
        self.snapshot = snapshot
        super().__init__(f"non-finite loss at generator iteration {iteration}: {snapshot}")


@dataclass
class TrainConfig:
    batch_size: int = 64
    gp_lambda: float = 10.0
    n_critic: int = 5
    lr_critic: float = 4e-4
    lr_generator: float = 1e-4
    ttur: bool = True
    optimizer: str = "adabelief"
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 2000
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.gp_lambda <= 0:
            raise ValueError("gp_lambda must be > 0")
        if self.n_critic < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("n_critic and batch_size must be >= 1, iterations >= 0")
        if self.optimizer.lower() not in ("adam", "adabelief"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.ttur and not self.lr_critic > self.lr_generator:
            raise ValueError("TTUR needs lr_critic > lr_generator")

    def learning_rates(self) -> tuple[float, float]:
        """(critic, generator); without TTUR both run at the generator rate."""
        if self.ttur:
            return self.lr_critic, self.lr_generator
        return self.lr_generator, self.lr_generator

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GanModel:
    generator: Generator
    critic: Critic
    gen_spec: GeneratorSpec
    critic_spec: CriticSpec
    config: TrainConfig
    opt_g: Optimizer
    opt_c: Optimizer
    rng: np.random.Generator
    sensors: list[str]
    scaler: ScalerParams | None = None
    iteration: int = 0
    history: dict[str, list[float]] = field(default_factory=lambda: {k: [] for k in HISTORY_KEYS})

    def parameter_counts(self) -> dict[str, int]:
        g, c = self.generator.n_params(), self.critic.n_params()
        return {"generator": g, "critic": c, "ratio": c / g}


def build_model(gen_spec: GeneratorSpec, critic_spec: CriticSpec, config: TrainConfig,
                sensors: list[str], scaler: ScalerParams | None = None) -> GanModel:
    """Initialise both networks and their optimizers from ``config.seed``."""
    if gen_spec.n_sensors != len(sensors) or critic_spec.n_sensors != len(sensors):
        raise ValueError("spec n_sensors must equal the number of sensors")
    g_seed, c_seed, t_seed = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(t_seed)
    generator = Generator(gen_spec, g_seed, dropout_rng=rng)
    critic = Critic(critic_spec, c_seed)
    lr_c, lr_g = config.learning_rates()
    opt_g = Optimizer(generator.parameters(), config.optimizer, lr_g, config.beta1, config.beta2)
    opt_c = Optimizer(critic.parameters(), config.optimizer, lr_c, config.beta1, config.beta2)
    return GanModel(generator, critic, gen_spec, critic_spec, config, opt_g, opt_c, rng, list(sensors), scaler)


def interpolate(real, fake, rng: np.random.Generator | None = None, eps=None) -> Tensor:
    """Per-item convex combination ``eps * real + (1 - eps) * fake``."""
    real, fake = np.asarray(T.as_tensor(real).data), np.asarray(T.as_tensor(fake).data)
    if real.shape != fake.shape:
        raise ValueError(f"interpolate: shape mismatch {real.shape} vs {fake.shape}")
    if eps is None:
        eps = rng.uniform(0.0, 1.0, size=len(real))
    eps = np.asarray(eps, dtype=np.float64).reshape((len(real),) + (1,) * (real.ndim - 1))
    return Tensor(eps * real + (1.0 - eps) * fake, requires_grad=True)


@dataclass
class CriticLoss:
    loss: Tensor
    penalty: float  # mean squared deviation of the gradient norm from 1 (before lambda)
    gap: float  # mean(D(fake)) - mean(D(real))
    grad_norms: np.ndarray


def gradient_penalty(critic: Callable, xhat: Tensor, sensor_ids) -> tuple[Tensor, np.ndarray]:
    scores = critic(xhat, sensor_ids)
    grads = gradient_of(T.tsum(scores), xhat, create_graph=True)
    norms = T.l2norm(T.reshape(grads, (xhat.shape[0], -1)), axis=1)
    return T.mean(T.square(T.sub(norms, 1.0))), norms.data.copy()


def critic_loss(critic: Callable, real, fake, sensor_ids, gp_lambda: float,
                rng: np.random.Generator | None = None, eps=None) -> CriticLoss:
    """Loss minimized by the critic, with the penalty term reported separately.

    Real and fake batches are scored in separate calls. The gradient norm of
    each interpolate is taken over its whole input block.
    """
    real, fake = T.as_tensor(real), T.as_tensor(fake)
    xhat = interpolate(real, fake, rng, eps)
    penalty, norms = gradient_penalty(critic, xhat, sensor_ids)
    gap = T.sub(T.mean(critic(fake, sensor_ids)), T.mean(critic(real, sensor_ids)))
    loss = T.add(gap, T.mul(penalty, gp_lambda))
    return CriticLoss(loss, penalty.item(), gap.item(), norms)


def generator_loss(fake_scores) -> Tensor:
    return T.neg(T.mean(T.as_tensor(fake_scores)))


def _sample(windows: WindowSet, batch: int, rng: np.random.Generator):
    idx = rng.integers(0, len(windows), size=batch)
    return windows.inputs[idx], windows.targets[idx], windows.sensor_ids[idx]


def _join(history, nxt) -> np.ndarray:
    return np.concatenate([history, nxt[:, None, :]], axis=1)


def _check_finite(model: GanModel, values: dict) -> None:
    if not all(math.isfinite(v) for v in values.values()):
        raise TrainingDiverged(model.iteration + 1, dict(values))


def train_iteration(model: GanModel, windows: WindowSet) -> dict[str, float]:
    """n_critic critic updates followed by one generator update."""
    cfg, rng = model.config, model.rng
    G, C = model.generator, model.critic
    G.train()
    noise_dim = model.gen_spec.noise_dim
    losses, penalties, gaps = [], [], []
    for _ in range(cfg.n_critic):
        hist, target, ids = _sample(windows, cfg.batch_size, rng)
        z = rng.standard_normal((cfg.batch_size, noise_dim))
        with no_grad():
            fake_next = G(hist, ids, z).data
        out = critic_loss(C, _join(hist, target), _join(hist, fake_next), ids, cfg.gp_lambda, rng)
        _check_finite(model, {"critic_loss": out.loss.item(), "gradient_penalty": out.penalty})
        model.opt_c.zero_grad()
        out.loss.backward()
        model.opt_c.step()
        losses.append(out.loss.item())
        penalties.append(out.penalty)
        gaps.append(out.gap)

    hist, _, ids = _sample(windows, cfg.batch_size, rng)
    z = rng.standard_normal((cfg.batch_size, noise_dim))
    critic_params = C.parameters()
    for p in critic_params:
        p.requires_grad = False
    try:
        fake_next = G(hist, ids, z)
        seq = T.concat([Tensor(hist), T.reshape(fake_next, (cfg.batch_size, 1, model.gen_spec.n_vars))], axis=1)
        g_loss = generator_loss(C(seq, ids))
        _check_finite(model, {"generator_loss": g_loss.item()})
        model.opt_g.zero_grad()
        g_loss.backward()
        model.opt_g.step()
    finally:
        for p in critic_params:
            p.requires_grad = True
    return {
        "critic_loss": float(np.mean(losses)),
        "gradient_penalty": float(np.mean(penalties)),
        "wasserstein_gap": float(np.mean(gaps)),
        "generator_loss": g_loss.item(),
    }


def train(model: GanModel, windows: WindowSet, iterations: int | None = None,
          checkpoint_path=None, progress: Callable[[int, dict], None] | None = None,
          progress_every: int = 100) -> GanModel:
    """Run generator iterations on scaled training windows; mutates and returns ``model``."""
    iterations = model.config.iterations if iterations is None else iterations
    if iterations and len(windows) == 0:
        raise ValueError("no training windows")
    every = model.config.checkpoint_every
    for _ in range(iterations):
        stats = train_iteration(model, windows)
        model.iteration += 1
        for k in HISTORY_KEYS:
            model.history[k].append(stats[k])
        if progress is not None and (model.iteration % progress_every == 0 or model.iteration == 1):
            progress(model.iteration, stats)
        if checkpoint_path is not None and every and model.iteration % every == 0:
            from .checkpoint import save

            save(model, checkpoint_path)
    model.generator.eval()
    return model
