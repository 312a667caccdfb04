"""Envelope multi-objective Q-learning: network, replay, updates, checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .envelope import (Batch, TrainingError, Transition, envelope_target, sample_preference,
                       scalar_preference, td_step)
from .network import Adam, QNetwork
from .replay import ReplayBuffer
