"""Export learned gradient fields for the reconstruction engine."""

from __future__ import annotations

import numpy as np
import torch

from .data import discrete_gradient
from .fileio import read_image, write_gradient_field
from .train import load_model


def predict_gradients(model, lr_image: np.ndarray) -> np.ndarray:
    """(2, s*H, s*W) gradient field for one low-resolution image."""
    grads = discrete_gradient(lr_image)
    with torch.no_grad():
        out = model(
            torch.from_numpy(lr_image[None, None]).float(),
            torch.from_numpy(grads[None]).float(),
        )
    return out[0].numpy().astype(np.float64)


def export_gradients(checkpoint_path, lr_image_path, out_path,
                     scale: int | None = None) -> None:
    """Run the checkpointed model on an image file and write a GRDF file."""
    model, config = load_model(checkpoint_path)
    if scale is not None and scale != config.scale:
        raise ValueError(
            f"checkpoint was trained for scale {config.scale}, requested {scale}"
        )
    lr = read_image(lr_image_path)
    field = predict_gradients(model, lr)
    write_gradient_field(field[0], field[1], out_path)
