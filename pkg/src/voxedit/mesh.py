"""Triangle meshes: conservative voxelization and cube-face surface export.

Voxelization is surface-only: a cell is occupied iff at least one triangle
intersects the cell's closed axis-aligned box, decided by the separating
axis test over the 13 candidate axes (3 box normals, 1 face normal, 9
edge cross products).  Touching counts as intersecting, which keeps the
result conservative and deterministic on cell boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBounds
from .grid import SparseStructure, _freeze, check_resolution, sparse_from_linear

BOUNDS_MARGIN = 1e-6


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray = field(repr=False)   # (V, 3) float64
    triangles: np.ndarray = field(repr=False)  # (T, 3) int64 indices into vertices

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, TriMesh):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices) and np.array_equal(
            self.triangles, other.triangles
        )


def make_mesh(vertices, triangles) -> TriMesh:
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if t.size and (t.min() < 0 or t.max() >= len(v)):
        raise ValueError("triangle index out of range")
    return TriMesh(vertices=_freeze(v), triangles=_freeze(t))


def default_bounds(mesh: TriMesh, margin: float = BOUNDS_MARGIN):
    """Mesh AABB expanded by ``margin`` per side, so boundary triangles
    land in cells deterministically."""
    if mesh.num_vertices == 0:
        raise EmptyBounds("mesh has no vertices")
    lo = mesh.vertices.min(axis=0) - margin
    hi = mesh.vertices.max(axis=0) + margin
    return lo, hi


def _triangle_cell_overlaps(tri: np.ndarray, centers: np.ndarray, half: np.ndarray) -> np.ndarray:
    """SAT over all candidate cells at once; ``centers`` is (M, 3)."""
    e = np.array([tri[1] - tri[0], tri[2] - tri[1], tri[0] - tri[2]])
    axes = [np.cross(np.eye(3)[i], e[j]) for i in range(3) for j in range(3)]
    axes.extend(np.eye(3))
    axes.append(np.cross(e[0], e[1]))

    alive = np.ones(len(centers), dtype=bool)
    for axis in axes:
        r = float(np.dot(half, np.abs(axis)))
        p = tri @ axis                       # (3,) vertex projections
        c = centers[alive] @ axis            # per-cell center offset
        pmin = p.min() - c
        pmax = p.max() - c
        # strict inequality: touching is not separated
        separated = (pmin > r) | (pmax < -r)
        alive[np.nonzero(alive)[0][separated]] = False
        if not alive.any():
            break
    return alive


def voxelize_mesh(mesh: TriMesh, resolution: int, bounds=None) -> SparseStructure:
    """Conservative surface voxelization onto the uniform R^3 partition of
    ``bounds`` (defaults to the mesh AABB plus a small margin)."""
    resolution = check_resolution(resolution)
    if bounds is None:
        if mesh.num_triangles == 0:
            return sparse_from_linear(np.empty(0, dtype=np.int64), resolution)
        bounds = default_bounds(mesh)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if not (hi > lo).all():
        raise EmptyBounds(f"bounds {lo.tolist()}..{hi.tolist()} have non-positive extent")
    cell = (hi - lo) / resolution
    half = cell / 2.0

    occupied: set[int] = set()
    r2 = resolution * resolution
    for tri_idx in mesh.triangles:
        tri = mesh.vertices[tri_idx]
        tmin = np.floor((tri.min(axis=0) - lo) / cell).astype(np.int64)
        tmax = np.floor((tri.max(axis=0) - lo) / cell).astype(np.int64)
        tmin = np.clip(tmin, 0, resolution - 1)
        tmax = np.clip(tmax, 0, resolution - 1)
        xs = np.arange(tmin[0], tmax[0] + 1)
        ys = np.arange(tmin[1], tmax[1] + 1)
        zs = np.arange(tmin[2], tmax[2] + 1)
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        idx = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        centers = lo + (idx + 0.5) * cell
        hit = _triangle_cell_overlaps(tri, centers, half)
        occupied.update((idx[hit, 0] * r2 + idx[hit, 1] * resolution + idx[hit, 2]).tolist())

    lin = np.fromiter(sorted(occupied), dtype=np.int64, count=len(occupied))
    return sparse_from_linear(lin, resolution)


# Quad corner offsets per face direction, wound counter-clockwise viewed
# from outside the cube.
_FACES = {
    (1, 0, 0): ((1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)),
    (-1, 0, 0): ((0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)),
    (0, 1, 0): ((0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)),
    (0, -1, 0): ((0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)),
    (0, 0, 1): ((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)),
    (0, 0, -1): ((0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)),
}


def count_exposed_faces(s: SparseStructure) -> int:
    """Number of occupied-cell faces whose face-adjacent neighbor is empty."""
    occ = set(s.linear().tolist())
    r = s.resolution
    n = 0
    for x, y, z in s.coords.tolist():
        for dx, dy, dz in _FACES:
            nx, ny, nz = x + dx, y + dy, z + dz
            if not (0 <= nx < r and 0 <= ny < r and 0 <= nz < r):
                n += 1
            elif nx * r * r + ny * r + nz not in occ:
                n += 1
    return n


def extract_surface_mesh(s: SparseStructure) -> TriMesh:
    """Two triangles per exposed cube face; vertices deduplicated by exact
    grid corner position, so each connected component is watertight."""
    occ = set(s.linear().tolist())
    r = s.resolution
    vert_ids: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []
    tris: list[tuple[int, int, int]] = []

    def vid(p):
        i = vert_ids.get(p)
        if i is None:
            i = len(verts)
            vert_ids[p] = i
            verts.append(p)
        return i

    for x, y, z in s.coords.tolist():
        for (dx, dy, dz), quad in _FACES.items():
            nx, ny, nz = x + dx, y + dy, z + dz
            inside = 0 <= nx < r and 0 <= ny < r and 0 <= nz < r
            if inside and (nx * r * r + ny * r + nz) in occ:
                continue
            a, b, c, d = (vid((x + ox, y + oy, z + oz)) for ox, oy, oz in quad)
            tris.append((a, b, c))
            tris.append((a, c, d))

    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.array(tris, dtype=np.int64).reshape(-1, 3)
    return TriMesh(vertices=_freeze(vertices), triangles=_freeze(triangles))


def save_obj(mesh: TriMesh, path) -> None:
    """OBJ-compatible text export: v/f records, 1-based indices."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def load_obj(path) -> TriMesh:
    """Minimal OBJ reader: v and f records, fan-triangulating polygons."""
    verts: list[list[float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for k in range(1, len(idx) - 1):
                    tris.append((idx[0], idx[k], idx[k + 1]))
    return make_mesh(verts, tris)
