"""Parameter-free motion discontinuity monitor.

For the current tracked-joint positions ``j_t`` the analyzer compares the mean
Euclidean distance to the last ``N`` snapshots (near window) with the mean
distance to the ``M`` snapshots before those (far window)::

    near(t) = 1/N * sum_{k=1..N}     ||j_t - j_{t-k}||
    far(t)  = 1/M * sum_{k=N+1..N+M} ||j_t - j_{t-k}||

and asks for a detector state reset when ``near / far > alpha``.

Note that for any departure from a still pose the ratio is at most 1 (every
past snapshot is the same point), and it is ``(N+1)/(2N+M+1)`` for smooth
constant-velocity motion. Values of ``alpha`` above 1 only fire when the
joints come back close to where they were ``N+1..N+M`` frames ago after a
quick excursion, e.g. a flick.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AnalyzerConfig:
    near_window: int = 3
    far_window: int = 9
    alpha: float = 0.8
    motion_floor: float = 1e-3
    tracked_joints: Optional[Sequence[int]] = None  # None tracks every joint

    def __post_init__(self):
        if self.near_window < 1 or self.far_window < 1:
            raise ConfigError("analyzer windows must be >= 1")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.motion_floor < 0:
            raise ConfigError("motion_floor must be nonnegative")
        if self.tracked_joints is not None:
            object.__setattr__(self, "tracked_joints", tuple(int(j) for j in self.tracked_joints))

    @property
    def capacity(self) -> int:
        return self.near_window + self.far_window


class AnalyzerState:
    """Ring buffer of the last ``N+M`` tracked-joint snapshots."""

    def __init__(self, config: AnalyzerConfig, num_joints: int):
        self.config = config
        if config.tracked_joints is None:
            self.joints = np.arange(num_joints)
        else:
            self.joints = np.asarray(config.tracked_joints, dtype=int)
            if self.joints.size == 0 or self.joints.min() < 0 or self.joints.max() >= num_joints:
                raise ConfigError(f"tracked joints {config.tracked_joints} out of range for {num_joints} joints")
        self.num_joints = num_joints
        self.buffer = np.zeros((config.capacity, self.joints.size, 3))
        self.head = 0  # slot the next push writes to
        self.count = 0

    def select(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.ndim == 1:
            if frame.size != self.num_joints * 3:
                raise ShapeError(f"frame has {frame.size} values, expected {self.num_joints * 3}")
            frame = frame.reshape(self.num_joints, 3)
        elif frame.shape != (self.num_joints, 3):
            raise ShapeError(f"frame shape {frame.shape} != ({self.num_joints}, 3)")
        return frame[self.joints]

    def lag(self, k: int) -> np.ndarray:
        """Snapshot pushed ``k`` frames ago (``k=1`` is the most recent)."""
        if not 1 <= k <= self.count:
            raise IndexError(f"lag {k} unavailable with {self.count} frames buffered")
        return self.buffer[(self.head - k) % self.config.capacity]

    def push(self, frame: np.ndarray) -> "AnalyzerState":
        self.buffer[self.head] = self.select(frame)
        self.head = (self.head + 1) % self.config.capacity
        self.count = min(self.count + 1, self.config.capacity)
        return self

    def _mean_distance(self, current, first: int, last: int) -> Optional[float]:
        if self.count < last:
            return None
        cur = self.select(current)
        cap = self.config.capacity
        slots = (self.head - np.arange(first, last + 1)) % cap
        # per-lag distance averaged over tracked joints, then averaged over lags
        d = np.linalg.norm(self.buffer[slots] - cur, axis=-1)
        return float(d.mean())

    def near_mean_distance(self, current) -> Optional[float]:
        """Mean distance to lags ``1..N``; ``None`` while warming up."""
        return self._mean_distance(current, 1, self.config.near_window)

    def far_mean_distance(self, current) -> Optional[float]:
        """Mean distance to lags ``N+1..N+M``; ``None`` while warming up."""
        n = self.config.near_window
        return self._mean_distance(current, n + 1, n + self.config.far_window)

    def should_reset(self, current) -> bool:
        """Read-only: does ``current`` call for a detector state reset?"""
        cfg = self.config
        if self.count < cfg.capacity:
            return False
        d = np.linalg.norm(self.buffer - self.select(current), axis=-1).mean(axis=-1)
        lags = (self.head - np.arange(1, cfg.capacity + 1)) % cfg.capacity
        d = d[lags]
        near = float(d[: cfg.near_window].mean())
        if near <= cfg.motion_floor:
            return False
        far = float(d[cfg.near_window :].mean())
        return near / max(far, cfg.motion_floor) > cfg.alpha

    def step(self, frame) -> bool:
        """``should_reset`` followed by ``push``; what a session calls per frame."""
        fire = self.should_reset(frame)
        self.push(frame)
        return fire
