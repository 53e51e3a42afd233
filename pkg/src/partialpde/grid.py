"""Grid fields on the periodic unit square and partial-observation geometry.

All dense states live on a channels-first (c, ny, nx) grid covering
[0,1) x [0,1) with spacing dx = 1/nx, dy = 1/ny.  Partial observation is
exact point sampling at a fixed coordinate set, either a regular
every-`gap` lattice or an explicit irregular point list.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import InvalidObservation, ShapeError, WindowError


@dataclass(frozen=True)
class GridField:
    """A dense multi-channel field on the periodic unit square.

    `values` has shape (channels, ny, nx), row-major. Treated as immutable
    after construction.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3:
            raise ShapeError(f"GridField expects (channels, ny, nx), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("GridField values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def nx(self) -> int:
        return self.values.shape[2]

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dy(self) -> float:
        return 1.0 / self.ny


@dataclass(frozen=True)
class ObservationSpec:
    """Which points of a (ny, nx) grid are observed.

    kind == "regular": every `gap`-th index on each axis, starting at 0.
    kind == "irregular": an explicit list of distinct (row, col) points.
    """

    kind: str
    source_shape: Tuple[int, int]
    gap: Optional[int] = None
    points: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        ny, nx = self.source_shape
        if self.kind == "regular":
            if self.gap is None or self.gap < 1:
                raise InvalidObservation(f"regular spec needs gap >= 1, got {self.gap}")
            if self.gap > min(ny, nx):
                raise InvalidObservation(f"gap {self.gap} exceeds grid {self.source_shape}")
        elif self.kind == "irregular":
            if not self.points:
                raise InvalidObservation("irregular spec needs a nonempty point list")
            pts = tuple((int(r), int(c)) for r, c in self.points)
            if len(set(pts)) != len(pts):
                raise InvalidObservation("irregular points must be distinct")
            for r, c in pts:
                if not (0 <= r < ny and 0 <= c < nx):
                    raise InvalidObservation(f"point ({r},{c}) outside grid {self.source_shape}")
            object.__setattr__(self, "points", pts)
        else:
            raise InvalidObservation(f"unknown observation kind {self.kind!r}")

    @staticmethod
    def regular(gap: int, source_shape: Tuple[int, int]) -> "ObservationSpec":
        return ObservationSpec(kind="regular", source_shape=tuple(source_shape), gap=gap)

    @staticmethod
    def irregular(points: Sequence[Tuple[int, int]], source_shape: Tuple[int, int]) -> "ObservationSpec":
        return ObservationSpec(kind="irregular", source_shape=tuple(source_shape),
                               points=tuple(points))

    @property
    def coarse_shape(self) -> Tuple[int, ...]:
        """Shape of one observed channel: (sy, sx) for regular, (s,) for irregular."""
        ny, nx = self.source_shape
        if self.kind == "regular":
            return (-(-ny // self.gap), -(-nx // self.gap))
        return (len(self.points),)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.coarse_shape))

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Flat (rows, cols) index arrays of the observed points, in output order."""
        ny, nx = self.source_shape
        if self.kind == "regular":
            ri = np.arange(0, ny, self.gap)
            ci = np.arange(0, nx, self.gap)
            rows = np.repeat(ri, len(ci))
            cols = np.tile(ci, len(ri))
            return rows, cols
        pts = np.asarray(self.points, dtype=np.int64)
        return pts[:, 0], pts[:, 1]


def observe(h, spec: ObservationSpec) -> np.ndarray:
    """Sample a dense field at the observed coordinates (the operator D).

    `h` is a GridField or an array of shape (..., ny, nx). Regular specs
    return (..., sy, sx); irregular specs return (..., s). Sampling is exact
    (bit-identical to direct indexing) and linear.
    """
    v = h.values if isinstance(h, GridField) else np.asarray(h)
    ny, nx = spec.source_shape
    if v.shape[-2:] != (ny, nx):
        raise ShapeError(f"field shape {v.shape[-2:]} does not match spec {spec.source_shape}")
    if spec.kind == "regular":
        return v[..., ::spec.gap, ::spec.gap]
    rows, cols = spec.coords()
    return v[..., rows, cols]


@dataclass(frozen=True)
class ObservationWindow:
    """n consecutive observed frames (oldest first), tau time units apart."""

    frames: Tuple[np.ndarray, ...]
    tau: float
    spec: ObservationSpec = field(repr=False, default=None)

    def __post_init__(self):
        if len(self.frames) < 1:
            raise WindowError("window needs at least one frame")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise WindowError(f"window frames disagree in shape: {shapes}")
        object.__setattr__(self, "frames", tuple(np.asarray(f) for f in self.frames))

    @property
    def n(self) -> int:
        return len(self.frames)

    @property
    def current(self) -> np.ndarray:
        """The most recent frame (time t)."""
        return self.frames[-1]

    def stacked(self) -> np.ndarray:
        """Channel-stacked input, shape (n*c, ...observed shape...)."""
        return np.concatenate(self.frames, axis=0)
