"""Shared full-batch descent plumbing: step-size probing and early stopping."""

from __future__ import annotations

import math
from typing import Callable, Sequence

from .errors import DivergenceError

# How many times the probe grid is extended downward (x10 each time) before
# giving up, and how many in-training restarts a diverging run gets.
MAX_GRID_EXTENSIONS = 12
MAX_RESTARTS = 3


def choose_step_size(
    initial_loss: float,
    loss_after_one_epoch: Callable[[float], float],
    candidates: Sequence[float],
) -> float:
    """Pick the fixed step size by one probe epoch per candidate.

    The winner is the candidate whose single epoch from the initial state
    lowers the training loss the most. If no candidate lowers it, the grid
    is extended downward (each candidate divided by 10) until one does.
    """
    grid = sorted(set(float(c) for c in candidates), reverse=True)
    if not grid or any(c <= 0 for c in grid):
        raise ValueError("step-size candidates must be positive")
    tol = 1e-9 * max(1.0, abs(initial_loss))
    best_step, best_loss = None, initial_loss
    stationary = None  # smallest step whose epoch leaves the loss unchanged
    for _ in range(MAX_GRID_EXTENSIONS + 1):
        for step in grid:
            loss = loss_after_one_epoch(step)
            if not math.isfinite(loss):
                continue
            if loss < best_loss:
                best_step, best_loss = step, loss
            if loss <= initial_loss + tol:
                stationary = step if stationary is None else min(stationary, step)
        if best_step is not None:
            return best_step
        grid = [c / 10.0 for c in grid]
    if stationary is not None:
        # Zero gradient at the initial state: already converged.
        return stationary
    raise DivergenceError(
        "no step size produced a loss decrease", epoch=0, initial_loss=initial_loss
    )


class EarlyStopper:
    """Track the best validation loss and stop after ``patience`` stale epochs."""

    def __init__(self, patience: int):
        self.patience = int(patience)
        self.best_loss = math.inf
        self.best_epoch = -1
        self._stale = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record one epoch; returns True when this epoch is the new best."""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self._stale = 0
            return True
        self._stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self._stale >= self.patience
