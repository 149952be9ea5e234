"""Rate encoding of [0,1]-valued windows into Bernoulli spike trains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

T_STEPS_DEFAULT = 25


@dataclass
class SpikeTensor:
    """Binary spikes shaped [t_steps, batch, features]."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError("spike tensor must be [t_steps, batch, features]")
        if self.data.size and not np.isin(self.data, (0, 1)).all():
            raise ValueError("spike tensor entries must be 0 or 1")

    @property
    def t_steps(self) -> int:
        return self.data.shape[0]

    @property
    def batch(self) -> int:
        return self.data.shape[1]

    @property
    def features(self) -> int:
        return self.data.shape[2]


def rate_encode(window: np.ndarray, t_steps: int = T_STEPS_DEFAULT,
                seed: int = 0) -> SpikeTensor:
    """Encode one window: each value is the per-timestep spike probability.

    Every timestep draws an independent Bernoulli per feature, so the
    expected spike count over t_steps is value * t_steps. Deterministic in
    (window, t_steps, seed).
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise ValueError("rate_encode takes a single 1-D window")
    return SpikeTensor(encode_windows(window[None, :], t_steps, seed))


def encode_windows(windows: np.ndarray, t_steps: int = T_STEPS_DEFAULT,
                   seed: int = 0) -> np.ndarray:
    """Vectorized encoder for a [n, features] window matrix.

    Returns a uint8 array [t_steps, n, features]. A single rng stream covers
    the whole tensor, so the encoding of window i depends on the full matrix
    shape; training code encodes the dataset once and slices batches out.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 2:
        raise ValueError("expected a [n_windows, features] matrix")
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    if windows.size and (windows.min() < 0.0 or windows.max() > 1.0):
        raise ValueError("window values must lie in [0, 1] for rate encoding")
    rng = np.random.default_rng(seed)
    draws = rng.random((t_steps,) + windows.shape)
    return (draws < windows[None, :, :]).astype(np.uint8)
