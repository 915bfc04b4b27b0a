"""Toy gradient-learning trainer exporting GRDF guidance fields."""

from .data import degrade, discrete_gradient, make_pair, synthesize_images
from .export import export_gradients, predict_gradients
from .model import DranConfig, GradientNet, gradient_loss
from .train import load_model, train

__version__ = "0.1.0"
