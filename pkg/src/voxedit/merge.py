"""Region-aware merging of an edited sparse structure into its source.

The stages compose left to right: XOR difference map, connectivity
decomposition, adaptive component selection (top-k or size threshold),
and a flip of the selected region onto the source occupancy.  The same
mask then drives the latent-level merge, so edited regions take the
target's latents and everything else keeps the source's bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ChannelMismatch, MissingLatent
from .grid import (
    SparseStructure,
    StructuredLatent,
    _freeze,
    coords_from_linear,
    linear_index,
    require_same_resolution,
    sparse_from_linear,
)

CONNECTIVITIES = (6, 18, 26)
DEFAULT_CONNECTIVITY = 26
DEFAULT_TAU = 100

# scipy structuring elements: rank 1 = faces, 2 = faces+edges, 3 = all 26
_STRUCTURE = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


def _membership(sorted_lin: np.ndarray, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For each query index: is it in the sorted array, and where."""
    if len(sorted_lin) == 0:
        return np.zeros(len(query), dtype=bool), np.zeros(len(query), dtype=np.int64)
    pos = np.minimum(np.searchsorted(sorted_lin, query), len(sorted_lin) - 1)
    return sorted_lin[pos] == query, pos


@dataclass(frozen=True)
class TopK:
    k: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be >= 0")

    def describe(self) -> dict:
        return {"kind": "top_k", "k": self.k}


@dataclass(frozen=True)
class Threshold:
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")

    def describe(self) -> dict:
        return {"kind": "threshold", "tau": self.tau}


@dataclass(frozen=True)
class DiffMap:
    """Voxels occupied in exactly one of the two compared structures."""

    resolution: int
    coords: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return int(self.coords.shape[0])

    def linear(self) -> np.ndarray:
        return linear_index(self.coords, self.resolution)

    def structure(self) -> SparseStructure:
        return SparseStructure(resolution=self.resolution, coords=self.coords)


@dataclass(frozen=True)
class ComponentSet:
    """Connectivity components of a difference map, largest first.

    Ties in size break toward the component whose smallest member linear
    index is smaller, so the ordering is a total one.
    """

    resolution: int
    connectivity: int
    components: tuple  # of (N_j, 3) coord arrays, each sorted by linear index

    @property
    def sizes(self) -> list[int]:
        return [int(c.shape[0]) for c in self.components]


@dataclass(frozen=True)
class FlipMask:
    """Union of selected difference components; never splits a component."""

    resolution: int
    coords: np.ndarray = field(repr=False)
    selected_sizes: tuple = ()

    @property
    def size(self) -> int:
        return int(self.coords.shape[0])

    def linear(self) -> np.ndarray:
        return linear_index(self.coords, self.resolution)


def diff_xor(s_src: SparseStructure, s_tgt: SparseStructure) -> DiffMap:
    """Difference map: cells whose occupancy differs between the inputs."""
    resolution = require_same_resolution(s_src, s_tgt)
    lin = np.setxor1d(s_src.linear(), s_tgt.linear(), assume_unique=True)
    return DiffMap(resolution=resolution, coords=_freeze(coords_from_linear(lin, resolution)))


def label_components(d: DiffMap, connectivity: int = DEFAULT_CONNECTIVITY) -> ComponentSet:
    """Decompose a difference map into connectivity components.

    Components come back ordered by size descending, then by smallest
    member linear index ascending; voxels within a component stay in
    canonical linear order.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity}")
    if d.size == 0:
        return ComponentSet(resolution=d.resolution, connectivity=connectivity, components=())

    grid = d.structure().to_dense()
    labeled, n_labels = ndimage.label(grid, structure=_STRUCTURE[connectivity])
    # coords are already in ascending linear order; a stable sort by label
    # leaves each component's voxels in that order
    labels = labeled[d.coords[:, 0], d.coords[:, 1], d.coords[:, 2]]
    order = np.argsort(labels, kind="stable")
    sizes = np.bincount(labels, minlength=n_labels + 1)[1:]
    starts = np.concatenate([[0], np.cumsum(sizes)])

    pieces = [d.coords[order[starts[j]:starts[j + 1]]] for j in range(n_labels)]
    lin = d.linear()
    first_lin = [int(lin[order[starts[j]]]) for j in range(n_labels)]
    rank = sorted(range(n_labels), key=lambda j: (-int(sizes[j]), first_lin[j]))
    components = tuple(_freeze(np.ascontiguousarray(pieces[j])) for j in rank)
    return ComponentSet(resolution=d.resolution, connectivity=connectivity, components=components)


def select_components(cs: ComponentSet, policy) -> FlipMask:
    """Build the flip mask from whole components chosen by the policy.

    ``TopK(k)`` takes the first k components in canonical order; a k past
    the component count takes them all.  ``Threshold(tau)`` takes every
    component strictly larger than tau voxels, ignoring small noisy
    regions.
    """
    if isinstance(policy, TopK):
        chosen = cs.components[: policy.k]
    elif isinstance(policy, Threshold):
        chosen = tuple(c for c in cs.components if c.shape[0] > policy.tau)
    else:
        raise TypeError(f"unknown selection policy {policy!r}")

    if chosen:
        lin = np.sort(linear_index(np.concatenate(chosen, axis=0), cs.resolution))
        coords = coords_from_linear(lin, cs.resolution)
    else:
        coords = np.empty((0, 3), dtype=np.uint16)
    return FlipMask(
        resolution=cs.resolution,
        coords=_freeze(coords),
        selected_sizes=tuple(int(c.shape[0]) for c in chosen),
    )


def apply_flip(s_src: SparseStructure, mask: FlipMask) -> SparseStructure:
    """Toggle occupancy exactly at the mask coords; everywhere else the
    source is untouched."""
    resolution = require_same_resolution(s_src, mask)
    lin = np.setxor1d(s_src.linear(), mask.linear(), assume_unique=True)
    return sparse_from_linear(lin, resolution)


def voxel_merge(
    s_src: SparseStructure,
    s_tgt: SparseStructure,
    connectivity: int = DEFAULT_CONNECTIVITY,
    policy=None,
) -> tuple[SparseStructure, FlipMask]:
    """Transfer the significant edited regions of ``s_tgt`` onto ``s_src``.

    Returns the merged structure together with the flip mask so the same
    mask can drive the latent-level merge downstream.
    """
    if policy is None:
        policy = Threshold(DEFAULT_TAU)
    d = diff_xor(s_src, s_tgt)
    cs = label_components(d, connectivity)
    mask = select_components(cs, policy)
    return apply_flip(s_src, mask), mask


def mask_all(merged: SparseStructure) -> FlipMask:
    """Escape-hatch mask covering every merged voxel, so a latent merge
    takes the full target side.  Useful for pure-appearance edits where
    the occupancy difference map is empty."""
    return FlipMask(
        resolution=merged.resolution,
        coords=merged.coords,
        selected_sizes=(merged.voxel_sum,),
    )


def slat_merge(
    z_src: StructuredLatent,
    z_tgt: StructuredLatent,
    mask: FlipMask,
    merged: SparseStructure,
) -> StructuredLatent:
    """Assemble the merged structure's latents: mask voxels copy the
    target's latent bit for bit, all others copy the source's."""
    resolution = require_same_resolution(z_src, z_tgt, mask, merged)
    if z_src.channels != z_tgt.channels:
        raise ChannelMismatch(f"source C={z_src.channels} vs target C={z_tgt.channels}")

    out_lin = merged.linear()
    in_mask, _ = _membership(mask.linear(), out_lin)

    def gather(z: StructuredLatent, lin_wanted: np.ndarray, side: str) -> np.ndarray:
        found, pos = _membership(z.linear(), lin_wanted)
        if not np.all(found):
            missing = coords_from_linear(lin_wanted[~found][:1], resolution)[0]
            raise MissingLatent(missing, side)
        return z.latents[pos]

    out = np.empty((len(out_lin), z_src.channels), dtype=z_src.latents.dtype)
    if in_mask.any():
        out[in_mask] = gather(z_tgt, out_lin[in_mask], "target")
    if (~in_mask).any():
        out[~in_mask] = gather(z_src, out_lin[~in_mask], "source")
    return StructuredLatent(resolution=resolution, coords=merged.coords, latents=_freeze(out))
