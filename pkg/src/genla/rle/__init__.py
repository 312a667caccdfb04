"""Distributed actor-learner training: actors, data engine, learner, snapshots."""

from .actor import Actor, ExperienceBatch, run_actor, scenario_stream
from .drift import DriftMonitor, DriftReport, ReferenceStats, drift_check
from .engine import TrainConfig, TrainResult, actor_throughput, train
from .ingestion import DataEngine, Decimator, IngestionPolicy, TokenBucket, epsilon_ladder
from .learner import Learner, LearnerConfig, learner_loop
from .snapshot import ModelSnapshot, ModelStore, SchemaMismatch
