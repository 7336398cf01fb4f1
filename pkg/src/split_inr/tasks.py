"""Data, forward operators and evaluation for the three fitting tasks.

Coordinates live in [-1, 1]^d. Images are ``(H, W)`` or ``(H, W, C)`` float
arrays; a pixel ``(i, j)`` has its center at ``x = -1 + (2j+1)/W``,
``y = -1 + (2i+1)/H``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core_math import Prng
from .network import NetworkParams, NetworkSpec, evaluate
from .training import bce_loss, mse_loss, psnr


def make_coordinate_grid(h: int, w: int) -> np.ndarray:
    """Row-major ``(h*w, 2)`` array of pixel-center ``(x, y)`` coordinates."""
    if h < 1 or w < 1:
        raise ValueError("grid dimensions must be >= 1")
    xs = -1.0 + (2.0 * np.arange(w) + 1.0) / w
    ys = -1.0 + (2.0 * np.arange(h) + 1.0) / h
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def make_coordinate_grid_3d(r: int) -> np.ndarray:
    """``(r^3, 3)`` voxel centers, x fastest."""
    c = -1.0 + (2.0 * np.arange(r) + 1.0) / r
    gz, gy, gx = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


# ---------------------------------------------------------------- CT

@dataclass(frozen=True)
class CtGeometry:
    height: int
    width: int
    num_angles: int
    num_detectors: int

    def __post_init__(self):
        if self.num_angles < 1 or self.num_detectors < 1:
            raise ValueError("CT geometry needs at least one angle and one detector")
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.num_angles) * (math.pi / self.num_angles)

    @property
    def detector_offsets(self) -> np.ndarray:
        half = math.sqrt(2.0)
        d = self.num_detectors
        return -half + (2.0 * np.arange(d) + 1.0) * half / d

    @property
    def step(self) -> float:
        return 1.0 / max(self.height, self.width)


@dataclass
class Sinogram:
    angles: np.ndarray
    values: np.ndarray  # (num_angles, num_detectors)

    @property
    def num_angles(self) -> int:
        return self.values.shape[0]

    @property
    def num_detectors(self) -> int:
        return self.values.shape[1]


class RadonOperator:
    """Parallel-beam projector as a sparse matrix over the row-major pixel vector.

    Each ray ``t (cos a, sin a) + s (-sin a, cos a)`` is sampled every
    ``1/max(H, W)`` in ``s`` over ``[-sqrt2, sqrt2]``; the image is bilinearly
    interpolated (zero outside the pixel-center lattice) and samples are
    weighted by the step length.
    """

    def __init__(self, geometry: CtGeometry):
        self.geometry = geometry
        g = geometry
        h, w = g.height, g.width
        ds = g.step
        ns = int(math.ceil(2.0 * math.sqrt(2.0) / ds))
        s = (np.arange(ns) - 0.5 * (ns - 1)) * ds
        th = g.angles[:, None, None]
        t = g.detector_offsets[None, :, None]
        ss = s[None, None, :]
        px = t * np.cos(th) - ss * np.sin(th)
        py = t * np.sin(th) + ss * np.cos(th)
        # continuous pixel index: center of column j sits at u = j
        u = (px + 1.0) * w / 2.0 - 0.5
        v = (py + 1.0) * h / 2.0 - 0.5
        ray = np.broadcast_to(np.arange(g.num_angles * g.num_detectors).reshape(g.num_angles, g.num_detectors, 1),
                              u.shape)
        u0 = np.floor(u)
        v0 = np.floor(v)
        fu = u - u0
        fv = v - v0
        rows, cols, vals = [], [], []
        for dj, dv_ in ((0, 0), (1, 0), (0, 1), (1, 1)):
            cj = u0 + dj
            ci = v0 + dv_
            wt = (fu if dj else 1.0 - fu) * (fv if dv_ else 1.0 - fv) * ds
            ok = (cj >= 0) & (cj < w) & (ci >= 0) & (ci < h) & (wt > 0)
            rows.append(ray[ok])
            cols.append((ci[ok] * w + cj[ok]).astype(np.int64))
            vals.append(wt[ok])
        self.step_length = ds
        m = g.num_angles * g.num_detectors
        mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(m, h * w)).tocsr()
        mat.sum_duplicates()
        self.matrix = mat
        self.matrix_t = mat.T.tocsr()

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(pixels, dtype=np.float64).ravel()

    def apply_adjoint(self, sino_values: np.ndarray) -> np.ndarray:
        return self.matrix_t @ np.asarray(sino_values, dtype=np.float64).ravel()


def _single_channel(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ValueError("CT requires a single-channel image")
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    return img


def radon_forward(img, num_angles: int, num_detectors: int, operator: RadonOperator | None = None) -> Sinogram:
    img = _single_channel(img)
    geom = CtGeometry(img.shape[0], img.shape[1], num_angles, num_detectors)
    if operator is None:
        operator = RadonOperator(geom)
    elif operator.geometry != geom:
        raise ValueError("operator geometry does not match the image")
    vals = operator.apply(img).reshape(num_angles, num_detectors)
    return Sinogram(geom.angles, vals)


def radon_adjoint(sino: Sinogram, operator: RadonOperator) -> np.ndarray:
    g = operator.geometry
    if sino.values.shape != (g.num_angles, g.num_detectors):
        raise ValueError(f"sinogram shape {sino.values.shape} does not match operator geometry")
    return operator.apply_adjoint(sino.values).reshape(g.height, g.width)


def ct_loss(outputs, gt: Sinogram, operator: RadonOperator):
    """Mean squared sinogram residual and its gradient w.r.t. the pixel outputs."""
    f = np.asarray(outputs, dtype=np.float64)
    n_pix = operator.shape[1]
    if f.size != n_pix:
        raise ValueError(f"expected {n_pix} outputs, got {f.size}")
    y = gt.values.ravel()
    if y.size != operator.shape[0]:
        raise ValueError("sinogram size does not match operator")
    resid = operator.apply(f) - y
    m = resid.size
    loss = float(resid @ resid) / m
    grad = (2.0 / m) * operator.apply_adjoint(resid)
    return loss, grad.reshape(f.shape)


# (A, a, b, x0, y0, phi) of the modified Shepp-Logan phantom
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def shepp_logan(n: int, supersample: int = 4) -> np.ndarray:
    """Ten-ellipse phantom on an ``n x n`` grid, box-filtered, scaled to [0, 1].

    Row 0 is the top of the phantom (largest y).
    """
    if n < 16:
        raise ValueError("phantom size must be >= 16")
    k = supersample
    m = n * k
    c = -1.0 + (2.0 * np.arange(m) + 1.0) / m
    x, y = np.meshgrid(c, c[::-1])
    img = np.zeros((m, m))
    for amp, a, b, x0, y0, phi in _SHEPP_LOGAN:
        p = math.radians(phi)
        dx, dy = x - x0, y - y0
        xr = dx * math.cos(p) + dy * math.sin(p)
        yr = -dx * math.sin(p) + dy * math.cos(p)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += amp
    img = img.reshape(n, k, n, k).mean(axis=(1, 3))
    img -= img.min()
    top = img.max()
    return img / top if top > 0 else img


def disk_image(n: int, radius: float = 0.5) -> np.ndarray:
    g = make_coordinate_grid(n, n)
    return (np.hypot(g[:, 0], g[:, 1]) <= radius).astype(np.float64).reshape(n, n)


# ---------------------------------------------------------------- images

def synthetic_image(n: int = 64, channels: int = 3) -> np.ndarray:
    """Deterministic synthetic RGB test picture with edges, gradients and texture."""
    g = make_coordinate_grid(n, n)
    x, y = g[:, 0].reshape(n, n), g[:, 1].reshape(n, n)
    r = np.hypot(x + 0.3, y - 0.2)
    red = 0.5 + 0.4 * np.sin(6.0 * x + 2.0 * y) * np.exp(-r)
    green = np.where((np.abs(x - 0.35) < 0.3) & (np.abs(y + 0.3) < 0.35), 0.85, 0.25 + 0.2 * y)
    blue = 0.5 + 0.35 * np.cos(18.0 * r) * (r < 0.6) + 0.1 * np.sin(25.0 * x * y)
    checker = ((np.floor((x + 1) * 8) + np.floor((y + 1) * 8)) % 2) * 0.15 * (x > 0.4) * (y > 0.4)
    img = np.stack([red + checker, green, blue - checker], axis=2)
    img = np.clip(img, 0.0, 1.0)
    if channels == 1:
        return img.mean(axis=2)
    return img


class ImageFitTask:
    """Direct supervision on pixel values; full batch unless ``batch_size`` is set."""

    def __init__(self, image: np.ndarray, batch_size: int = 0, clip: bool = False):
        img = np.asarray(image, dtype=np.float64)
        if img.ndim == 2:
            img = img[:, :, None]
        self.image = img
        self.h, self.w, self.channels = img.shape
        self.coords = make_coordinate_grid(self.h, self.w)
        self.targets = img.reshape(-1, self.channels)
        self.batch_size = batch_size
        self.clip = clip
        self._order = None

    def batch(self, it, prng: Prng):
        n = len(self.coords)
        if not self.batch_size or self.batch_size >= n:
            return self.coords, self.targets
        per_epoch = n // self.batch_size
        k = it % per_epoch
        if k == 0 or self._order is None:
            self._order = prng.permutation(n)
        idx = self._order[k * self.batch_size:(k + 1) * self.batch_size]
        return self.coords[idx], self.targets[idx]

    def loss(self, pred, target):
        return mse_loss(pred, target)

    def predict(self, spec: NetworkSpec, params: NetworkParams) -> np.ndarray:
        return evaluate(spec, params, self.coords).reshape(self.h, self.w, self.channels)

    def metric(self, spec, params) -> float:
        return psnr(self.predict(spec, params), self.image, clip=self.clip)


class CtTask:
    """Network evaluated on the full pixel grid, supervised through the projector."""

    def __init__(self, phantom: np.ndarray | None, sinogram: Sinogram, operator: RadonOperator, clip: bool = False):
        self.operator = operator
        self.sinogram = sinogram
        self.phantom = phantom
        g = operator.geometry
        self.h, self.w = g.height, g.width
        self.coords = make_coordinate_grid(self.h, self.w)
        self.clip = clip

    def batch(self, it, prng):
        return self.coords, None

    def loss(self, pred, target):
        return ct_loss(pred, self.sinogram, self.operator)

    def predict(self, spec, params) -> np.ndarray:
        return evaluate(spec, params, self.coords).reshape(self.h, self.w)

    def metric(self, spec, params) -> float:
        pred = self.predict(spec, params)
        if self.phantom is None:
            # no ground truth image: report projection-domain PSNR
            return psnr(self.operator.apply(pred), self.sinogram.values.ravel(),
                        peak=float(np.max(np.abs(self.sinogram.values))) or 1.0)
        return psnr(pred, self.phantom, clip=self.clip)


# ---------------------------------------------------------------- occupancy

class OccupancyField:
    """Inside/outside indicator on [-1, 1]^3, analytic or voxelized."""

    SHAPES = ("sphere", "torus", "box_minus_sphere", "half_space")

    def __init__(self, shape: str | None = None, params: dict | None = None, voxels: np.ndarray | None = None):
        if (shape is None) == (voxels is None):
            raise ValueError("give exactly one of shape or voxels")
        if shape is not None and shape not in self.SHAPES:
            raise ValueError(f"unknown shape {shape!r}")
        self.shape = shape
        self.params = dict(params or {})
        self.voxels = None if voxels is None else np.asarray(voxels, dtype=bool)

    @classmethod
    def analytic(cls, shape: str, **params) -> "OccupancyField":
        return cls(shape=shape, params=params)

    @classmethod
    def from_voxels(cls, voxels) -> "OccupancyField":
        v = np.asarray(voxels)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise ValueError("voxel grid must be a cube, indexed [z, y, x]")
        return cls(voxels=v)

    def query(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        x, y, z = p[:, 0], p[:, 1], p[:, 2]
        if self.voxels is not None:
            r = self.voxels.shape[0]
            idx = np.clip(np.floor((p + 1.0) * r / 2.0).astype(np.int64), 0, r - 1)
            return self.voxels[idx[:, 2], idx[:, 1], idx[:, 0]].astype(np.float64)
        prm = self.params
        if self.shape == "sphere":
            rad = prm.get("radius", 0.5)
            inside = x * x + y * y + z * z <= rad * rad
        elif self.shape == "torus":
            big, small = prm.get("major", 0.5), prm.get("minor", 0.2)
            q = np.hypot(x, y) - big
            inside = q * q + z * z <= small * small
        elif self.shape == "box_minus_sphere":
            half, rad = prm.get("half", 0.5), prm.get("radius", 0.6)
            box = (np.abs(x) <= half) & (np.abs(y) <= half) & (np.abs(z) <= half)
            inside = box & (x * x + y * y + z * z > rad * rad)
        else:
            inside = x < prm.get("offset", 0.0)
        return inside.astype(np.float64)

    def voxelize(self, r: int) -> np.ndarray:
        return self.query(make_coordinate_grid_3d(r)).reshape(r, r, r)


def sample_occupancy(field: OccupancyField, n: int, prng: Prng):
    if n < 1:
        raise ValueError("need at least one sample")
    pts = prng.uniform_array(-1.0, 1.0, (n, 3))
    return pts, field.query(pts)


class EmptyBoundaryError(ValueError):
    pass


def extract_boundary_points(grid, threshold: float = 0.5) -> np.ndarray:
    """Centers of voxels whose thresholded state differs from a 6-neighbour.

    ``grid`` is indexed ``[z, y, x]`` on an ``r^3`` lattice of voxel centers in
    [-1, 1]^3. Values >= threshold count as inside.
    """
    g = np.asarray(grid)
    if g.ndim != 3 or len(set(g.shape)) != 1:
        raise ValueError("grid must be a cube")
    r = g.shape[0]
    if r < 8:
        raise ValueError("grid resolution must be >= 8")
    occ = g >= threshold
    edge = np.zeros_like(occ)
    for axis in range(3):
        diff = np.diff(occ, axis=axis)
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, r - 1)
        hi[axis] = slice(1, r)
        edge[tuple(lo)] |= diff
        edge[tuple(hi)] |= diff
    iz, iy, ix = np.nonzero(edge)
    if iz.size == 0:
        raise EmptyBoundaryError("no boundary voxels at this threshold")
    c = lambda i: -1.0 + (2.0 * i + 1.0) / r
    return np.stack([c(ix), c(iy), c(iz)], axis=1)


def _nearest_sq_dist_bruteforce(a, b):
    out = np.empty(len(a))
    for i, p in enumerate(a):
        d = b - p
        out[i] = np.min(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1] + d[:, 2] * d[:, 2])
    return out


def chamfer_bruteforce(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    return 0.5 * float(np.mean(_nearest_sq_dist_bruteforce(a, b))) + \
        0.5 * float(np.mean(_nearest_sq_dist_bruteforce(b, a)))


class SpatialHash:
    """Uniform grid of buckets over a point set for exact nearest-neighbour queries."""

    def __init__(self, points, cell: float | None = None):
        pts = np.asarray(points, dtype=np.float64)
        self.points = pts
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        if cell is None:
            # about n^(1/3) cells along the longest side; flat or coincident sets stay well sized
            span = float(np.max(hi - lo))
            cell = span / max(1.0, round(len(pts) ** (1.0 / 3.0))) if span > 0 else 1.0
        self.cell = cell
        self.origin = lo
        keys = np.floor((pts - lo) / cell).astype(np.int64)
        self.dims = keys.max(axis=0) + 1
        self.buckets: dict[tuple, np.ndarray] = {}
        flat = np.ravel_multi_index(keys.T, self.dims)
        order = np.argsort(flat, kind="stable")
        uniq, starts = np.unique(flat[order], return_index=True)
        ends = np.append(starts[1:], len(order))
        for u, s, e in zip(uniq, starts, ends):
            self.buckets[np.unravel_index(u, self.dims)] = order[s:e]

    def _ring(self, center, k):
        """Buckets on the shell of Chebyshev radius ``k`` around ``center``, clipped to the occupied box."""
        c = np.asarray(center)
        lo = np.maximum(-k, -c)
        hi = np.minimum(k, self.dims - 1 - c)
        if np.any(lo > hi):
            return []
        idx = []
        for dx in range(lo[0], hi[0] + 1):
            for dy in range(lo[1], hi[1] + 1):
                on_shell = abs(dx) == k or abs(dy) == k
                # off the x/y faces only the two z caps belong to the shell
                dzs = range(lo[2], hi[2] + 1) if on_shell else [dz for dz in (-k, k) if lo[2] <= dz <= hi[2]]
                for dz in dzs:
                    b = self.buckets.get((c[0] + dx, c[1] + dy, c[2] + dz))
                    if b is not None:
                        idx.append(b)
        return idx

    def nearest_sq_dist(self, queries) -> np.ndarray:
        q = np.asarray(queries, dtype=np.float64)
        keys = np.floor((q - self.origin) / self.cell).astype(np.int64)
        out = np.full(len(q), np.inf)
        groups: dict[tuple, list] = {}
        for i, k in enumerate(map(tuple, keys)):
            groups.setdefault(k, []).append(i)
        top = self.dims - 1
        for key, members in groups.items():
            members = np.asarray(members)
            qs = q[members]
            best = np.full(len(members), np.inf)
            kv = np.asarray(key)
            # rings closer than the occupied key box hold no buckets, rings past its far corner neither
            first = int(np.max(np.maximum(np.maximum(-kv, kv - top), 0)))
            last = int(np.max(np.maximum(np.abs(kv), np.abs(kv - top))))
            for k in range(first, last + 1):
                cand = self._ring(key, k)
                if cand:
                    pts = self.points[np.concatenate(cand)]
                    d = qs[:, None, :] - pts[None, :, :]
                    dist = d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2]
                    best = np.minimum(best, dist.min(axis=1))
                # every unvisited bucket is at least k cells away along some axis
                bound = k * self.cell
                if np.all(best <= bound * bound):
                    break
            out[members] = best
        return out


def chamfer_distance(a, b, root: bool = False) -> float:
    """Symmetric mean of squared nearest-neighbour distances (``root`` uses plain distances)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs non-empty point sets")
    da = SpatialHash(b).nearest_sq_dist(a)
    db = SpatialHash(a).nearest_sq_dist(b)
    if root:
        da, db = np.sqrt(da), np.sqrt(db)
    return 0.5 * float(np.mean(da)) + 0.5 * float(np.mean(db))


class OccupancyTask:
    """Fresh uniform samples every iteration, BCE on sigmoid outputs, chamfer at eval."""

    def __init__(self, field: OccupancyField, points_per_iter: int = 10000, eval_resolution: int = 64,
                 threshold: float = 0.5, root: bool = False):
        self.field = field
        self.points_per_iter = points_per_iter
        self.eval_resolution = eval_resolution
        self.threshold = threshold
        self.root = root
        self._gt_points = None

    @property
    def gt_points(self) -> np.ndarray:
        if self._gt_points is None:
            self._gt_points = extract_boundary_points(self.field.voxelize(self.eval_resolution), self.threshold)
        return self._gt_points

    def batch(self, it, prng):
        return sample_occupancy(self.field, self.points_per_iter, prng)

    def loss(self, pred, target):
        return bce_loss(pred, target.reshape(pred.shape))

    def predict_grid(self, spec, params) -> np.ndarray:
        r = self.eval_resolution
        return evaluate(spec, params, make_coordinate_grid_3d(r)).reshape(r, r, r)

    def metric(self, spec, params) -> float:
        try:
            pred_pts = extract_boundary_points(self.predict_grid(spec, params), self.threshold)
        except EmptyBoundaryError:
            return math.inf
        return chamfer_distance(pred_pts, self.gt_points, root=self.root)
