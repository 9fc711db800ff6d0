"""Peer-to-peer agent routing: query gating, gossip registry, belief-based
scheduling, game-theoretic checks and a discrete-event network simulator."""

from .errors import PPAIError
from .qagate import FeatureHashEncoder, QAGate, encode, mask, score, train_gate
from .registry import CapabilityRecord, Flag, GossipNetwork, RegistryView
from .scheduler import Belief, Observation, SchedulerParams, TypeGrid, route, update_belief
from .simnet import SimConfig, run

__version__ = "0.1.0"

__all__ = [
    "PPAIError", "FeatureHashEncoder", "QAGate", "encode", "mask", "score", "train_gate",
    "CapabilityRecord", "Flag", "GossipNetwork", "RegistryView",
    "Belief", "Observation", "SchedulerParams", "TypeGrid", "route", "update_belief",
    "SimConfig", "run",
]
