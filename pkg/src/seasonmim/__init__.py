"""Season-aware multimodal masked image modeling at desk scale."""

from .autodiff import Tape, Tensor, backward
from .config import RunConfig, StrategyKind, desk_preset, paper_preset
from .model import SceneView, SeasonalMAE
from .pretrain import ScenePool, run_progressive

__all__ = [
    "Tape", "Tensor", "backward",
    "RunConfig", "StrategyKind", "desk_preset", "paper_preset",
    "SceneView", "SeasonalMAE", "ScenePool", "run_progressive",
]

__version__ = "0.1.0"
