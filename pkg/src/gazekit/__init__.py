"""gazekit: gaze estimation with masked feature disentanglement and cascaded
channel/spatial + Gaussian-kernel non-local attention, on a from-scratch
reverse-mode autodiff tensor core, trainable end-to-end on a built-in
synthetic gaze dataset."""

from .config import ModelConfig, TrainConfig, tiny_model_config
from .losses import GazeAngles, LossReport, angles_to_vector, angular_error_deg
from .model import GazeNet
from .synth import GazeSample, SceneGeometry, dataset_generate, render_scene
from .tensor import Tape, Tensor, backward, finite_diff_check
from .train import AdamW, evaluate, multistep_lr, train_loop

__all__ = [
    "AdamW",
    "GazeAngles",
    "GazeNet",
    "GazeSample",
    "LossReport",
    "ModelConfig",
    "SceneGeometry",
    "Tape",
    "Tensor",
    "TrainConfig",
    "angles_to_vector",
    "angular_error_deg",
    "backward",
    "dataset_generate",
    "evaluate",
    "finite_diff_check",
    "multistep_lr",
    "render_scene",
    "tiny_model_config",
    "train_loop",
]
