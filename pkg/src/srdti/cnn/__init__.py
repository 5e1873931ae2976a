from .gradcheck import GradCheckReport, gradient_check
from .infer import MissingChannelError, predict_volume, stack_to_input, stack_to_target
from .model import (DESK_CONFIG, PAPER_CONFIG, CnnConfig, CnnModel, conv3d_forward, model_backward,
                    model_forward, model_init, mse_loss, zero_model)
from .optim import TrainState, adam_step, train
from .serialize import ModelFormatError, load_model, save_model

__all__ = [
    "CnnConfig", "CnnModel", "DESK_CONFIG", "PAPER_CONFIG", "GradCheckReport", "MissingChannelError",
    "ModelFormatError", "TrainState", "adam_step", "conv3d_forward", "gradient_check", "load_model",
    "model_backward", "model_forward", "model_init", "mse_loss", "predict_volume", "save_model",
    "stack_to_input", "stack_to_target", "train", "zero_model",
]
