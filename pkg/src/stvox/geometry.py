"""Rigid poses, voxel-grid indexing, and continuous grid sampling.

Conventions shared by the whole package:

* World coordinates are metric ``(x, y, z)``.  A ``Pose`` matrix maps
  ego-frame points into scene-frame points: ``p_scene = T @ p_ego``.
* Grid dims are ``(H, W, Z)``: the world x axis indexes W, y indexes H and
  z indexes Z.  Dense payloads are stored as arrays of shape ``(Z, H, W, C)``
  so the flat view follows the canonical linear layout
  ``((z * H + y) * W + x) * C + c``.
* Fractional voxel coordinates place the center of voxel ``i`` at coordinate
  ``i`` exactly (not ``i + 0.5``); ``world_to_grid`` is simply
  ``(point - origin) / voxel_size``.
* Both interpolators zero-pad: nodes outside the grid contribute 0, so a
  query with no in-bounds neighbor returns the zero vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegeneratePoseError

_BOTTOM_ROW = np.array([0.0, 0.0, 0.0, 1.0])
_ORTHO_TOL = 1e-6
_DET_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid-body transform as a 4x4 homogeneous matrix (translation in meters).

    ``frame_id`` is the integer timestamp index of the frame the pose belongs
    to.  The bottom row must be exactly ``[0, 0, 0, 1]`` and the rotation
    block orthonormal to within 1e-6.
    """

    matrix: np.ndarray
    frame_id: int = 0

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], _BOTTOM_ROW):
            raise ValueError("pose matrix bottom row must be exactly [0, 0, 0, 1]")
        r = m[:3, :3]
        if not np.all(np.isfinite(m)):
            raise ValueError("pose matrix must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("pose rotation block is not orthonormal within 1e-6")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity(frame_id: int = 0) -> "Pose":
        return Pose(np.eye(4), frame_id)

    @staticmethod
    def from_translation(x: float, y: float, z: float = 0.0, frame_id: int = 0) -> "Pose":
        m = np.eye(4)
        m[:3, 3] = (x, y, z)
        return Pose(m, frame_id)

    @staticmethod
    def from_rotation_z(
        angle: float, x: float = 0.0, y: float = 0.0, z: float = 0.0, frame_id: int = 0
    ) -> "Pose":
        """Rotation about the world z axis by ``angle`` radians plus a translation."""
        c, s = np.cos(angle), np.sin(angle)
        m = np.eye(4)
        m[0, 0], m[0, 1] = c, -s
        m[1, 0], m[1, 1] = s, c
        m[:3, 3] = (x, y, z)
        return Pose(m, frame_id)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def inverse(self) -> "Pose":
        """Closed-form rigid inverse (transpose rotation, negate mapped translation)."""
        if abs(np.linalg.det(self.matrix)) < _DET_EPS:
            raise DegeneratePoseError("pose matrix is numerically singular")
        r_inv = self.rotation.T
        m = np.eye(4)
        m[:3, :3] = r_inv
        m[:3, 3] = -r_inv @ self.translation
        return Pose(m, self.frame_id)

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self @ other`` (apply ``other`` first, then ``self``)."""
        return Pose(self.matrix @ other.matrix, self.frame_id)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one ``(3,)`` point or an ``(..., 3)`` batch of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


def relative_transform(t_prev: Pose, t_curr: Pose) -> Pose:
    """Transform taking frame ``t-1`` coordinates into frame ``t`` coordinates.

    Returns ``t_curr^-1 @ t_prev``; applying it to a point expressed in the
    previous frame yields the same physical point in current-frame
    coordinates.  The result carries the current pose's ``frame_id``.
    """
    if abs(np.linalg.det(t_curr.matrix)) < _DET_EPS:
        raise DegeneratePoseError("current pose is numerically singular")
    return Pose(t_curr.inverse().matrix @ t_prev.matrix, t_curr.frame_id)


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Geometry of a dense voxel grid.

    ``origin`` is the world position of the center of voxel ``(0, 0, 0)``,
    ``dims`` is ``(H, W, Z)`` and ``channels`` the per-voxel vector length.
    """

    origin: np.ndarray
    voxel_size: float
    dims: tuple[int, int, int]
    channels: int = 1

    def __post_init__(self) -> None:
        o = np.asarray(self.origin, dtype=np.float64).reshape(3).copy()
        o.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))
        if not np.isfinite(self.voxel_size) or self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive and finite")
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be three integers >= 1, got {self.dims}")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if not np.all(np.isfinite(o)):
            raise ValueError("origin must be finite")

    @property
    def h(self) -> int:
        return self.dims[0]

    @property
    def w(self) -> int:
        return self.dims[1]

    @property
    def z(self) -> int:
        return self.dims[2]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        """Array shape ``(Z, H, W, C)`` of the canonical dense layout."""
        return (self.z, self.h, self.w, self.channels)

    @property
    def num_voxels(self) -> int:
        return self.h * self.w * self.z

    def with_channels(self, channels: int) -> "GridSpec":
        return GridSpec(self.origin, self.voxel_size, self.dims, channels)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical bounding box ``(lo, hi)``: voxel centers padded by half a voxel."""
        sizes = np.array([self.w, self.h, self.z], dtype=np.float64)
        lo = self.origin - 0.5 * self.voxel_size
        hi = self.origin + (sizes - 0.5) * self.voxel_size
        return lo, hi

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, ``(num_voxels, 3)``.

        Row order matches the canonical layout: x fastest, then y, then z,
        so ``centers.reshape(Z, H, W, 3)`` indexes as ``[z, y, x]``.
        """
        return grid_to_world(self, voxel_index_coords(self.dims))


def voxel_index_coords(dims: tuple[int, int, int]) -> np.ndarray:
    """Integer fractional coordinates ``(x, y, z)`` of every voxel, ``(M, 3)``."""
    h, w, z = dims
    zz, yy, xx = np.meshgrid(np.arange(z), np.arange(h), np.arange(w), indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1).astype(np.float64)


def world_to_grid(spec: GridSpec, points: np.ndarray) -> np.ndarray:
    """Map world points to fractional voxel coordinates ``(x, y, z)``.

    Results may lie outside ``[0, dims)``; out-of-bounds is a valid value and
    consumers decide how to treat it.
    """
    p = np.asarray(points, dtype=np.float64)
    return (p - spec.origin) / spec.voxel_size


def grid_to_world(spec: GridSpec, coords: np.ndarray) -> np.ndarray:
    """Inverse of :func:`world_to_grid`."""
    c = np.asarray(coords, dtype=np.float64)
    return c * spec.voxel_size + spec.origin


class VoxelGrid:
    """Dense ``H x W x Z x C`` scalar field stored as ``(Z, H, W, C)`` float64.

    The flat view of ``values`` is the canonical linear layout
    ``((z * H + y) * W + x) * C + c``.  All values must stay finite.
    """

    __slots__ = ("spec", "values")

    def __init__(self, spec: GridSpec, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != spec.shape:
            raise ValueError(f"values shape {values.shape} does not match spec {spec.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        self.spec = spec
        self.values = np.ascontiguousarray(values)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "VoxelGrid":
        return cls(spec, np.zeros(spec.shape))

    @classmethod
    def from_flat(cls, spec: GridSpec, data: np.ndarray) -> "VoxelGrid":
        data = np.asarray(data, dtype=np.float64)
        if data.size != spec.num_voxels * spec.channels:
            raise ValueError("flat data length does not match spec")
        return cls(spec, data.reshape(spec.shape))

    @property
    def data(self) -> np.ndarray:
        """Flat view in the canonical linear layout."""
        return self.values.reshape(-1)


def _corner_weight(frac: np.ndarray, take_upper: int) -> np.ndarray:
    return frac if take_upper else 1.0 - frac


class TrilinearPlan:
    """Precomputed 8-corner interpolation for one coordinate set.

    ``indices`` is ``(M, 8)`` linear voxel indices in the canonical layout,
    ``weights`` is ``(M, 8)`` with out-of-bounds corners weighted zero.  The
    plan materializes lazily as a sparse row operator so it can be applied
    to any number of grids sharing the same dims while paying for the
    coordinate math once.
    """

    __slots__ = ("indices", "weights", "n_cells", "_matrix")

    def __init__(self, indices: np.ndarray, weights: np.ndarray, n_cells: int):
        self.indices = indices
        self.weights = weights
        self.n_cells = n_cells
        self._matrix = None

    @property
    def matrix(self):
        if self._matrix is None:
            m = self.indices.shape[0]
            indptr = np.arange(m + 1, dtype=np.int32) * 8
            self._matrix = sparse.csr_matrix(
                (self.weights.ravel(), self.indices.ravel(), indptr),
                shape=(m, self.n_cells))
        return self._matrix


def _axis_parts(frac: np.ndarray, dim: int):
    lo = np.floor(frac)
    d = frac - lo
    lo_i = lo.astype(np.int32)
    hi_i = lo_i + 1
    return (
        (np.clip(lo_i, 0, dim - 1), np.clip(hi_i, 0, dim - 1)),
        ((1.0 - d) * ((lo_i >= 0) & (lo_i < dim)), d * ((hi_i >= 0) & (hi_i < dim))),
    )


def plan_trilinear(coords: np.ndarray, dims: tuple[int, int, int]) -> TrilinearPlan:
    """Build the 8-corner interpolation plan for fractional ``(x, y, z)`` coords."""
    h_dim, w_dim, z_dim = dims
    coords = np.asarray(coords, dtype=np.float64)
    xi, wx = _axis_parts(coords[:, 0], w_dim)
    yi, wy = _axis_parts(coords[:, 1], h_dim)
    zi, wz = _axis_parts(coords[:, 2], z_dim)

    m = coords.shape[0]
    indices = np.empty((m, 8), dtype=np.int32)
    weights = np.empty((m, 8))
    corner = 0
    for cz in (0, 1):
        zi_row = zi[cz] * np.int32(h_dim)
        for cy in (0, 1):
            zy_row = (zi_row + yi[cy]) * np.int32(w_dim)
            wzy = wz[cz] * wy[cy]
            for cx in (0, 1):
                indices[:, corner] = zy_row + xi[cx]
                weights[:, corner] = wzy * wx[cx]
                corner += 1
    return TrilinearPlan(indices, weights, h_dim * w_dim * z_dim)


def apply_trilinear(values: np.ndarray, plan: TrilinearPlan) -> np.ndarray:
    """Run a precomputed plan against one ``(Z, H, W, C)`` grid."""
    c_dim = values.shape[-1]
    flat = np.ascontiguousarray(values.reshape(-1, c_dim))
    return plan.matrix @ flat


def trilinear_gather(values: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear interpolation on a ``(Z, H, W, C)`` array with zero padding.

    ``coords`` is ``(M, 3)`` fractional ``(x, y, z)``.  Out-of-bounds corner
    nodes contribute zero; node-exact queries reproduce stored vectors
    bit-exactly.
    """
    z_dim, h_dim, w_dim, _ = values.shape
    return apply_trilinear(values, plan_trilinear(coords, (h_dim, w_dim, z_dim)))


def bilinear_gather(slab: np.ndarray, coords_xy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation on an ``(H, W, C)`` slab with zero padding."""
    h_dim, w_dim, c_dim = slab.shape
    coords_xy = np.asarray(coords_xy, dtype=np.float64)
    x, y = coords_xy[:, 0], coords_xy[:, 1]
    x0, y0 = np.floor(x), np.floor(y)
    dx, dy = x - x0, y - y0
    x0i, y0i = x0.astype(np.int64), y0.astype(np.int64)

    out = np.zeros((coords_xy.shape[0], c_dim))
    for cy in (0, 1):
        yi = y0i + cy
        wy = _corner_weight(dy, cy)
        for cx in (0, 1):
            xi = x0i + cx
            w = _corner_weight(dx, cx) * wy
            ok = (xi >= 0) & (xi < w_dim) & (yi >= 0) & (yi < h_dim)
            w = w * ok
            out += w[:, None] * slab[np.clip(yi, 0, h_dim - 1), np.clip(xi, 0, w_dim - 1)]
    return out


def nearest_indices(coords: np.ndarray, dims: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Half-up rounded integer indices plus an in-bounds mask.

    Returns ``(idx, valid)`` where ``idx`` is ``(M, 3)`` integer ``(x, y, z)``
    and ``valid`` marks rows whose rounded index lies inside ``dims``.
    Rounding is ``floor(c + 0.5)`` so exact half coordinates round up.
    """
    h_dim, w_dim, z_dim = dims
    c = np.asarray(coords, dtype=np.float64)
    idx = np.floor(c + 0.5).astype(np.int64)
    valid = (
        (idx[:, 0] >= 0)
        & (idx[:, 0] < w_dim)
        & (idx[:, 1] >= 0)
        & (idx[:, 1] < h_dim)
        & (idx[:, 2] >= 0)
        & (idx[:, 2] < z_dim)
    )
    return idx, valid


def nearest_gather(values: np.ndarray, coords: np.ndarray, fill) -> np.ndarray:
    """Nearest-neighbor lookup on a ``(Z, H, W)`` array; out-of-bounds rows get ``fill``."""
    z_dim, h_dim, w_dim = values.shape
    idx, valid = nearest_indices(coords, (h_dim, w_dim, z_dim))
    out = np.full(coords.shape[0] if np.ndim(coords) == 2 else 1, fill, dtype=values.dtype)
    if valid.any():
        out[valid] = values[idx[valid, 2], idx[valid, 1], idx[valid, 0]]
    return out


def sample_trilinear(grid: VoxelGrid, coords: np.ndarray) -> np.ndarray:
    """Sample a grid at fractional ``(x, y, z)`` coordinates.

    Accepts a single ``(3,)`` coordinate or an ``(M, 3)`` batch and returns a
    ``(C,)`` vector or an ``(M, C)`` batch accordingly.
    """
    c = np.asarray(coords, dtype=np.float64)
    single = c.ndim == 1
    out = trilinear_gather(grid.values, c.reshape(-1, 3))
    return out[0] if single else out


def sample_bilinear_xy(grid: VoxelGrid, coords: np.ndarray, z_layer: int) -> np.ndarray:
    """Sample one z layer of a grid at fractional ``(x, y)`` coordinates."""
    if not 0 <= z_layer < grid.spec.z:
        raise IndexError(f"z_layer {z_layer} outside [0, {grid.spec.z})")
    c = np.asarray(coords, dtype=np.float64)
    single = c.ndim == 1
    out = bilinear_gather(grid.values[z_layer], c.reshape(-1, 2))
    return out[0] if single else out
