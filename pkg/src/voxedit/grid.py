"""Canonical sparse voxel structures and dense-grid conversion.

A sparse structure is the set of occupied cells of an R^3 grid, stored as
coordinates sorted by the linear index ``i = x*R^2 + y*R + z``.  That one
total order is used everywhere: sorting, tie-breaking, and serialization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelMismatch, OutOfBounds, ResolutionMismatch

COORD_DTYPE = np.uint16
LATENT_DTYPE = np.float32

DEFAULT_RESOLUTION = 64
MAX_RESOLUTION = 0xFFFF  # coords are stored as u16


def check_resolution(resolution: int) -> int:
    resolution = int(resolution)
    if not 2 <= resolution <= MAX_RESOLUTION:
        raise ValueError(f"resolution must be in [2, {MAX_RESOLUTION}], got {resolution}")
    return resolution


def linear_index(coords: np.ndarray, resolution: int) -> np.ndarray:
    """Linear index of ``(N, 3)`` coords under the x-major order."""
    c = np.asarray(coords, dtype=np.int64)
    r = int(resolution)
    return c[:, 0] * r * r + c[:, 1] * r + c[:, 2]


def coords_from_linear(lin: np.ndarray, resolution: int) -> np.ndarray:
    """Inverse of :func:`linear_index`; returns ``(N, 3)`` uint16 coords."""
    lin = np.asarray(lin, dtype=np.int64)
    r = int(resolution)
    x, rem = np.divmod(lin, r * r)
    y, z = np.divmod(rem, r)
    return np.stack([x, y, z], axis=1).astype(COORD_DTYPE)


def _check_bounds(coords: np.ndarray, resolution: int) -> None:
    if coords.size == 0:
        return
    bad = (coords < 0) | (coords >= resolution)
    if bad.any():
        idx = int(np.nonzero(bad.any(axis=1))[0][0])
        raise OutOfBounds(coords[idx], resolution)


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SparseStructure:
    """Sorted, duplicate-free set of occupied voxel coordinates.

    Instances are immutable values; construct them through
    :func:`make_sparse` or :meth:`from_dense` so the canonical invariants
    hold.
    """

    resolution: int
    coords: np.ndarray = field(repr=False)  # (N, 3) uint16, sorted by linear index

    @property
    def voxel_sum(self) -> int:
        return int(self.coords.shape[0])

    def linear(self) -> np.ndarray:
        return linear_index(self.coords, self.resolution)

    def to_dense(self) -> np.ndarray:
        """Dense boolean occupancy grid of shape ``(R, R, R)``."""
        grid = np.zeros((self.resolution,) * 3, dtype=bool)
        if self.voxel_sum:
            grid[self.coords[:, 0], self.coords[:, 1], self.coords[:, 2]] = True
        return grid

    @classmethod
    def from_dense(cls, grid: np.ndarray) -> "SparseStructure":
        grid = np.asarray(grid)
        if grid.ndim != 3 or len(set(grid.shape)) != 1:
            raise ValueError(f"expected a cubic (R, R, R) grid, got shape {grid.shape}")
        r = check_resolution(grid.shape[0])
        # nonzero() walks the array in C order == ascending linear index
        x, y, z = np.nonzero(grid)
        coords = np.stack([x, y, z], axis=1).astype(COORD_DTYPE)
        return cls(resolution=r, coords=_freeze(coords))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseStructure):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.coords, other.coords)


def make_sparse(coords, resolution: int = DEFAULT_RESOLUTION) -> SparseStructure:
    """Canonicalize a coordinate collection into a :class:`SparseStructure`.

    Input order does not matter and duplicates collapse; any component
    outside ``[0, resolution)`` raises :class:`OutOfBounds`.
    """
    resolution = check_resolution(resolution)
    arr = np.asarray(list(coords) if not isinstance(coords, np.ndarray) else coords, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("coords must be an (N, 3) collection")
    _check_bounds(arr, resolution)
    lin = np.unique(linear_index(arr, resolution))
    return SparseStructure(resolution=resolution, coords=_freeze(coords_from_linear(lin, resolution)))


def sparse_from_linear(lin: np.ndarray, resolution: int) -> SparseStructure:
    """Build a structure from already-sorted, unique, in-range linear indices."""
    lin = np.asarray(lin, dtype=np.int64)
    return SparseStructure(resolution=int(resolution), coords=_freeze(coords_from_linear(lin, resolution)))


@dataclass(frozen=True)
class StructuredLatent:
    """Occupied voxels, each carrying a C-channel latent vector.

    ``coords`` follows the same canonical ordering as
    :class:`SparseStructure`; ``latents[i]`` belongs to ``coords[i]``.
    """

    resolution: int
    coords: np.ndarray = field(repr=False)   # (N, 3) uint16, sorted by linear index
    latents: np.ndarray = field(repr=False)  # (N, C) float32, finite

    @property
    def voxel_sum(self) -> int:
        return int(self.coords.shape[0])

    @property
    def channels(self) -> int:
        return int(self.latents.shape[1])

    def linear(self) -> np.ndarray:
        return linear_index(self.coords, self.resolution)

    def structure(self) -> SparseStructure:
        return SparseStructure(resolution=self.resolution, coords=self.coords)

    def __eq__(self, other) -> bool:
        if not isinstance(other, StructuredLatent):
            return NotImplemented
        return (
            self.resolution == other.resolution
            and np.array_equal(self.coords, other.coords)
            and self.latents.shape == other.latents.shape
            # bitwise comparison, not value comparison
            and np.array_equal(self.latents.view(np.uint32), other.latents.view(np.uint32))
        )


def make_latent(coords, latents, resolution: int = DEFAULT_RESOLUTION) -> StructuredLatent:
    """Canonicalize per-voxel latents into a :class:`StructuredLatent`.

    Unlike :func:`make_sparse`, duplicate coordinates are an error here:
    two latents for one voxel have no well-defined winner.
    """
    resolution = check_resolution(resolution)
    arr = np.asarray(list(coords) if not isinstance(coords, np.ndarray) else coords, dtype=np.int64)
    if arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("coords must be an (N, 3) collection")
    lat = np.asarray(latents, dtype=LATENT_DTYPE)
    if lat.size == 0:
        lat = lat.reshape(0, lat.shape[1] if lat.ndim == 2 else 1)
    if lat.ndim != 2 or lat.shape[0] != arr.shape[0]:
        raise ChannelMismatch(f"latents shape {lat.shape} does not pair with {arr.shape[0]} coords")
    if lat.shape[1] < 1:
        raise ChannelMismatch("latent channel count must be >= 1")
    if not np.isfinite(lat).all():
        raise ValueError("latent values must be finite")
    _check_bounds(arr, resolution)
    lin = linear_index(arr, resolution)
    order = np.argsort(lin, kind="stable")
    lin = lin[order]
    if lin.size and (np.diff(lin) == 0).any():
        dup = coords_from_linear(lin[np.nonzero(np.diff(lin) == 0)[0][:1]], resolution)[0]
        raise ValueError(f"duplicate latent entry for voxel {tuple(int(c) for c in dup)}")
    return StructuredLatent(
        resolution=resolution,
        coords=_freeze(coords_from_linear(lin, resolution)),
        latents=_freeze(np.ascontiguousarray(lat[order])),
    )


def require_same_resolution(*objs) -> int:
    resolutions = {int(o.resolution) for o in objs}
    if len(resolutions) != 1:
        raise ResolutionMismatch(f"mixed resolutions {sorted(resolutions)}")
    return resolutions.pop()
