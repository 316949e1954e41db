from .losses import bce_dice_loss, class_weights, one_hot, soft_dice_loss
from .model import UNet3D, UNetConfig, build_unet, output_shapes, probabilities, unet_forward
from .train import Adam, History, TrainOptions, make_sphere_volume, supervision_weights, train_toy

__all__ = [
    "Adam",
    "History",
    "TrainOptions",
    "UNet3D",
    "UNetConfig",
    "bce_dice_loss",
    "build_unet",
    "class_weights",
    "make_sphere_volume",
    "one_hot",
    "output_shapes",
    "probabilities",
    "soft_dice_loss",
    "supervision_weights",
    "train_toy",
    "unet_forward",
]
