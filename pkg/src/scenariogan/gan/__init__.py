"""Conditional WGAN-GP: networks, training loop and checkpoints."""

from .models import Critic, CriticSpec, Generator, GeneratorSpec, build_critic, build_generator
from .training import (
    GanModel,
    TrainConfig,
    TrainingDiverged,
    build_model,
    critic_loss,
    generator_loss,
    interpolate,
    train,
)

__all__ = [
    "Critic", "CriticSpec", "Generator", "GeneratorSpec", "build_critic", "build_generator",
    "GanModel", "TrainConfig", "TrainingDiverged", "build_model", "critic_loss", "generator_loss",
    "interpolate", "train",
]
