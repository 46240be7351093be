"""
Type definitions and aliases for ratings and latent factor vectors.
"""
from __future__ import annotations

from typing import Tuple

import numpy as np
from numpy.typing import NDArray

__all__ = ["FactorVector", "IdArray", "Matrix", "Rating", "RatingPair"]

Rating = float
# A (predicted, actual) rating pair.
RatingPair = Tuple[float, float]

FactorVector = NDArray[np.float64]
Matrix = NDArray[np.float64]
IdArray = NDArray[np.int64]
