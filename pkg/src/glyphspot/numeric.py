"""Small numeric helpers shared by the model modules."""

from __future__ import annotations

import numpy as np


def f32_exact(values: np.ndarray | float) -> np.ndarray:
    """Round float64 data onto the float32 grid (kept as float64).

    Model parameters are stored on this grid so that serialization to 32-bit
    payloads round-trips bit-exactly.
    """
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def sigmoid(x: np.ndarray | float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out
