"""Training loop for the gradient-mapping network.

Pairs are generated on the fly from ground-truth images via the shared
degradation recipe; the first images of the (sorted) dataset form a fixed
validation batch. Deterministic for a fixed config seed.
"""

from __future__ import annotations

from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .data import make_pair, random_crop_pair
from .fileio import read_image
from .model import DranConfig, GradientNet, gradient_loss

VALIDATION_IMAGES = 8


def set_deterministic(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def load_dataset(dataset_dir) -> list[np.ndarray]:
    paths = sorted(
        p for p in Path(dataset_dir).iterdir()
        if p.suffix.lower() in (".pgm", ".imgf")
    )
    if not paths:
        raise FileNotFoundError(f"no .pgm/.imgf images in {dataset_dir}")
    return [read_image(p) for p in paths]


def _to_batch(pairs, device):
    lrs = torch.stack([torch.from_numpy(lr[None]).float() for lr, _, _ in pairs])
    lgs = torch.stack([torch.from_numpy(lg).float() for _, lg, _ in pairs])
    hgs = torch.stack([torch.from_numpy(hg).float() for _, _, hg in pairs])
    return lrs.to(device), lgs.to(device), hgs.to(device)


def train(dataset_dir, config: DranConfig, checkpoint_path) -> dict:
    """Train on a directory of ground-truth images; save a checkpoint.

    Returns the checkpoint dictionary (config, weights, loss curves).
    """
    set_deterministic(config.seed)
    images = load_dataset(dataset_dir)
    if len(images) < 2:
        raise ValueError("need at least two images (train + validation)")
    n_val = min(VALIDATION_IMAGES, max(1, len(images) // 5))
    val_images = images[:n_val]
    train_images = images[n_val:]

    device = torch.device("cpu")
    model = GradientNet(config).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    val_pairs = [make_pair(img, config.scale) for img in val_images]
    val_batch = _to_batch(val_pairs, device)

    def validation_loss() -> float:
        model.eval()
        with torch.no_grad():
            out = model(val_batch[0], val_batch[1])
            return float(gradient_loss(out, val_batch[2]))

    val_curve = [validation_loss()]
    train_curve = []
    order = np.arange(len(train_images))
    for _ in range(config.epochs):
        rng.shuffle(order)
        model.train()
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            pairs = [
                random_crop_pair(train_images[i], config.scale, config.crop_size, rng)
                for i in chunk
            ]
            lr, lg, hg = _to_batch(pairs, device)
            optimizer.zero_grad()
            loss = gradient_loss(model(lr, lg), hg)
            loss.backward()
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        train_curve.append(float(np.mean(epoch_losses)))
        val_curve.append(validation_loss())

    checkpoint = {
        "config": asdict(config),
        "state_dict": model.state_dict(),
        "val_curve": val_curve,
        "train_curve": train_curve,
    }
    torch.save(checkpoint, checkpoint_path)
    return checkpoint


def load_model(checkpoint_path) -> tuple[GradientNet, DranConfig]:
    checkpoint = torch.load(checkpoint_path, map_location="cpu", weights_only=False)
    config = DranConfig(**checkpoint["config"])
    model = GradientNet(config)
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model, config
