"""gridlander: multimodal landing-marker detection and a grid-world DQN
landing agent, built on hand-rolled numpy kernels."""

from .env import Action, EnvConfig, LanderState, LandingEnv, Terminal
from .dqn import QNetwork, TrainConfig, evaluate, train
from .losses import BBox, ciou_loss, diou_loss, focal_loss, giou_loss, iou
from .vital import Detection, MultimodalImage, VitalConfig, detect, init_weights

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BBox",
    "Detection",
    "EnvConfig",
    "LanderState",
    "LandingEnv",
    "MultimodalImage",
    "QNetwork",
    "Terminal",
    "TrainConfig",
    "VitalConfig",
    "ciou_loss",
    "detect",
    "diou_loss",
    "evaluate",
    "focal_loss",
    "giou_loss",
    "init_weights",
    "iou",
    "train",
]
