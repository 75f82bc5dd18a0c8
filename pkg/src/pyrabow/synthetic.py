"""Seeded synthetic corpus of oriented sinusoidal gratings."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import write_pgm

DEFAULT_ANGLES = (0.0, 45.0, 90.0)


def grating(size: int, angle_deg: float, period: float, phase: float) -> np.ndarray:
    """Sinusoid varying along ``angle_deg``; values in [0.15, 0.85]."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    t = np.deg2rad(angle_deg)
    return 0.5 + 0.35 * np.sin(2.0 * np.pi * (x * np.cos(t) + y * np.sin(t)) / period + phase)


def make_grating_corpus(root, per_class: int = 60, size: int = 64, noise: float = 0.1,
                        seed: int = 0, angles=DEFAULT_ANGLES) -> Path:
    """Write ``<root>/angle_XXX/img_NNNN.pgm`` with random period, phase and Gaussian noise."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for angle in angles:
        d = root / f"angle_{int(round(angle)):03d}"
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            period = rng.uniform(6.0, 14.0)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            img = grating(size, angle, period, phase) + rng.normal(0.0, noise, (size, size))
            write_pgm(d / f"img_{i:04d}.pgm", np.clip(img, 0.0, 1.0))
    return root
