"""Per-sample scene context maps.

The map is a ``G x G`` grid centred on the sample anchor and covering
``[-extent, extent]`` on both axes. Half its weight comes from how often
training trajectories visited each location of the scene, the other half
from cells touched by the sample's neighbors during observation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import AgentTrack, TrajectorySample
from .errors import ConfigError, DataError

CACHE_ENV = "SPECTRAJ_CACHE"
_CACHE_MAGIC = "SPECTRAJ-OCC-1"


@dataclass(frozen=True)
class ContextMap:
    grid: np.ndarray  # (G, G) in [0, 1]; axis 0 is x, axis 1 is y
    cell_size: float
    center: np.ndarray

    @property
    def size(self) -> int:
        return self.grid.shape[0]


@dataclass(frozen=True)
class SceneOccupancy:
    """Visit frequency of a scene, normalized to a maximum of 1."""

    scene_id: str
    grid: np.ndarray  # (G_s, G_s) float32
    origin: np.ndarray  # world coords of the lower corner of cell (0, 0)
    cell_size: float

    @property
    def size(self) -> int:
        return self.grid.shape[0]

    @property
    def extent(self) -> float:
        return self.cell_size * self.size

    def lookup(self, points: np.ndarray) -> np.ndarray:
        idx = np.floor((points - self.origin) / self.cell_size).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < self.size), axis=-1)
        out = np.zeros(points.shape[:-1], dtype=np.float64)
        ii = idx[inside]
        out[inside] = self.grid[ii[:, 0], ii[:, 1]]
        return out


def scene_occupancy(tracks: Sequence[AgentTrack], scene_id: str, grid_size: int = 64) -> SceneOccupancy:
    """Histogram every position of ``tracks`` over a square grid bounding the scene."""
    pts = [t.positions for t in tracks if t.scene_id == scene_id and len(t)]
    if not pts:
        return SceneOccupancy(scene_id, np.zeros((grid_size, grid_size), np.float32), np.zeros(2), 1.0)
    pts = np.concatenate(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    cell = max(float(np.max(hi - lo)), 1e-6) / grid_size * (1 + 1e-9)
    idx = np.floor((pts - lo) / cell).astype(np.int64).clip(0, grid_size - 1)
    counts = np.zeros((grid_size, grid_size), np.float64)
    np.add.at(counts, (idx[:, 0], idx[:, 1]), 1.0)
    return SceneOccupancy(scene_id, (counts / counts.max()).astype(np.float32), lo.astype(np.float64), cell)


def build_scene_stats(tracks: Iterable[AgentTrack], scenes: Iterable[str], grid_size: int = 64) -> dict[str, SceneOccupancy]:
    tracks = list(tracks)
    return {s: scene_occupancy(tracks, s, grid_size) for s in scenes}


def _cell_centers(grid_size: int, extent: float) -> np.ndarray:
    cell = 2.0 * extent / grid_size
    c = -extent + cell * (np.arange(grid_size) + 0.5)
    gx, gy = np.meshgrid(c, c, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def build_context_map(
    sample: TrajectorySample,
    scene_stats: dict[str, SceneOccupancy] | None = None,
    grid_size: int = 32,
    extent: float = 10.0,
) -> ContextMap:
    if grid_size < 4:
        raise ConfigError(f"context grid size must be >= 4, got {grid_size}")
    if extent <= 0:
        raise ConfigError(f"context extent must be positive, got {extent}")
    cell = 2.0 * extent / grid_size

    scene = np.zeros((grid_size, grid_size))
    occ = (scene_stats or {}).get(sample.scene_id)
    if occ is not None:
        scene = occ.lookup(_cell_centers(grid_size, extent) + sample.anchor)

    neighbors = np.zeros((grid_size, grid_size))
    if sample.neighbor_observations:
        pts = np.concatenate(sample.neighbor_observations)
        idx = np.floor((pts + extent) / cell).astype(np.int64)
        keep = np.all((idx >= 0) & (idx < grid_size), axis=-1)
        neighbors[idx[keep, 0], idx[keep, 1]] = 1.0

    grid = np.clip(0.5 * scene + 0.5 * neighbors, 0.0, 1.0)
    return ContextMap(grid, cell, np.asarray(sample.anchor, dtype=np.float64).copy())


def flatten_context(cmap: ContextMap) -> np.ndarray:
    return cmap.grid.reshape(-1).copy()


# --------------------------------------------------------------------------
# occupancy cache: text header line followed by raw float32 cells


def cache_dir(default: str | Path | None = None) -> Path | None:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(default) if default is not None else None


def write_occupancy(occ: SceneOccupancy, path: str | Path) -> None:
    header = (
        f"{_CACHE_MAGIC} scene={occ.scene_id} size={occ.size} extent={float(occ.extent)!r} "
        f"origin_x={float(occ.origin[0])!r} origin_y={float(occ.origin[1])!r}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode())
        fh.write(np.ascontiguousarray(occ.grid, dtype="<f4").tobytes())


def read_occupancy(path: str | Path) -> SceneOccupancy:
    with open(path, "rb") as fh:
        header = fh.readline().decode().split()
        payload = fh.read()
    if not header or header[0] != _CACHE_MAGIC:
        raise DataError(f"{path}: not an occupancy cache file")
    fields = dict(item.split("=", 1) for item in header[1:])
    size = int(fields["size"])
    grid = np.frombuffer(payload, dtype="<f4")
    if grid.size != size * size:
        raise DataError(f"{path}: expected {size * size} cells, found {grid.size}")
    origin = np.array([float(fields["origin_x"]), float(fields["origin_y"])])
    return SceneOccupancy(fields["scene"], grid.reshape(size, size).copy(), origin, float(fields["extent"]) / size)
