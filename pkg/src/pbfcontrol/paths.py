"""Laser centroid paths."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SineRaster:
    """Sinusoidal sweep between ``x_min`` and ``x_max`` at mean speed ``v``.

    ``y`` moves linearly from ``y_min`` to ``y_max`` over ``t_final`` when
    both are given, otherwise it stays at ``y_min``.
    """

    v: float
    x_min: float
    x_max: float
    y_min: float = 0.0
    y_max: float | None = None
    t_final: float | None = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        span = self.x_max - self.x_min
        x = 0.5 * span * np.sin(self.v * np.pi / span * t - 0.5 * np.pi) \
            + 0.5 * (self.x_max + self.x_min)
        if self.y_max is None or not self.t_final:
            y = np.full_like(t, self.y_min)
        else:
            y = (self.y_max - self.y_min) / self.t_final * t + self.y_min
        return x, y


@dataclass(frozen=True)
class FixedPoint:
    x: float
    y: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.full_like(t, self.x), np.full_like(t, self.y)


@dataclass(frozen=True)
class LinearSweep:
    x0: float
    x1: float
    t_final: float
    y: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        x = self.x0 + (self.x1 - self.x0) * t / self.t_final
        return x, np.full_like(t, self.y)


_PATHS = {"sine-raster": SineRaster, "fixed": FixedPoint, "linear": LinearSweep}


def path_from_dict(doc: dict):
    doc = dict(doc)
    name = doc.pop("name", None)
    if name not in _PATHS:
        raise ConfigError(f"unknown path {name!r}; expected one of {sorted(_PATHS)}")
    try:
        return _PATHS[name](**doc)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for path {name!r}: {exc}") from exc


def path_to_dict(path) -> dict:
    for name, cls in _PATHS.items():
        if isinstance(path, cls):
            return {"name": name, **path.__dict__}
    raise TypeError(type(path))
