"""Input validation helpers shared by the estimators."""
from __future__ import annotations

from typing import Optional, Union

import numpy as np

from .core import Dataset, ReferencePoint, TransitionBatch, validate_dataset
from .exceptions import EmptyDataset, NonFiniteInput

MEDIAN_MAX_POINTS = 2000


def check_batch(data: Union[Dataset, TransitionBatch]) -> TransitionBatch:
    """Validate ``data`` and return its flat transition view."""
    if isinstance(data, TransitionBatch):
        if data.N == 0:
            raise EmptyDataset("empty transition batch")
        if not (np.isfinite(data.states).all() and np.isfinite(data.next_states).all() and np.isfinite(data.rewards).all()):
            raise NonFiniteInput("non-finite values in transition batch")
        return data
    if isinstance(data, Dataset):
        return validate_dataset(data).transitions()
    raise TypeError(f"expected Dataset or TransitionBatch, got {type(data).__name__}")


def pooled_states(data: Union[Dataset, TransitionBatch]) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.all_states()
    return data.states


def check_kernel(kernel, data, random_state=0):
    """Return ``kernel`` or a median-heuristic RBF kernel for ``data``."""
    from .kernel import KernelSpec, median_heuristic

    if kernel is None:
        return KernelSpec(median_heuristic(pooled_states(data), MEDIAN_MAX_POINTS, random_state))
    if isinstance(kernel, (int, float)):
        return KernelSpec(float(kernel))
    return kernel


def check_anchor(anchor: Optional[ReferencePoint], data) -> ReferencePoint:
    """Return ``anchor`` (checked) or the first observed state-action pair."""
    if isinstance(data, Dataset):
        data = data.transitions()
    if anchor is None:
        anchor = ReferencePoint(data.states[0], int(data.actions[0]))
    return anchor.check(data.d, data.num_actions)
