"""Wave and cylinder warps as backward sampling fields.

Both maps send an *output* pixel to the *source* coordinate it samples
from, which keeps raster warping fold-free.  Annotation polygons travel the
other way, so their vertices are pushed through the numerical inverse of
the field (:func:`invert_points`).

Coordinate conventions: field values and raster pixel ``(x, y)`` live in
index space (pixel centers at integers).  Polygon vertices live in
continuous image space where pixel ``(x, y)`` covers ``[x, x+1) x [y, y+1)``;
the two differ by half a pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .annotations import AnnotationSet, PolygonInstance, densify, rasterize
from .errors import FoldError, InvalidInputError
from .imaging import ImageBuffer, apply_shadow, quantize

__all__ = [
    "WaveParams",
    "CylinderParams",
    "SamplingField",
    "wave_map",
    "cylinder_map",
    "build_field",
    "composed_field",
    "resample",
    "border_fill",
    "invert_points",
    "transform_polygon",
    "compose_warps",
    "FOLD_TOLERANCE",
    "RESIDUAL_TARGET",
]

# residual above which a vertex is declared non-invertible
FOLD_TOLERANCE = 2.0
RESIDUAL_TARGET = 0.5
BUCKET = 8.0


@dataclass(frozen=True)
class WaveParams:
    amplitude: float
    wavelength: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise InvalidInputError(f"wave amplitude must be >= 0, got {self.amplitude}")
        if self.wavelength <= 0:
            raise InvalidInputError(f"wavelength must be > 0, got {self.wavelength}")


@dataclass(frozen=True)
class CylinderParams:
    factor: float
    axis: float
    width: float

    def __post_init__(self):
        if self.factor < 0:
            raise InvalidInputError(f"distortion factor must be >= 0, got {self.factor}")
        if self.axis < 1:
            raise InvalidInputError(f"axis parameter must be >= 1, got {self.axis}")
        if self.width <= 0:
            raise InvalidInputError(f"width must be > 0, got {self.width}")


def wave_map(p, params: WaveParams):
    """``(x + A sin(2 pi y / w), y + A cos(2 pi x / w))``; vectorized over arrays."""
    x, y = p
    a, w = params.amplitude, params.wavelength
    return x + a * np.sin(2 * np.pi * np.asarray(y, dtype=np.float64) / w), \
        y + a * np.cos(2 * np.pi * np.asarray(x, dtype=np.float64) / w)


def cylinder_map(p, params: CylinderParams):
    """``(x, y cos(F (x - W/c) / (W/c)))``; vectorized over arrays."""
    x, y = p
    axis = params.width / params.axis
    x = np.asarray(x, dtype=np.float64)
    return x, y * np.cos(params.factor * (x - axis) / axis)


def _wave_mapping(params):
    return lambda x, y: wave_map((x, y), params)


def _cylinder_mapping(params):
    return lambda x, y: cylinder_map((x, y), params)


@dataclass(frozen=True, eq=False)
class SamplingField:
    """Per-output-pixel source coordinates, arrays of shape ``(height, width)``.

    ``mapping`` is the analytic point map the field was built from, when one
    exists; :func:`invert_points` uses it to look beyond the canvas edge.
    """

    width: int
    height: int
    src_x: np.ndarray
    src_y: np.ndarray
    mapping: Callable | None = None

    def __post_init__(self):
        for name in ("src_x", "src_y"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (self.height, self.width):
                raise InvalidInputError(f"{name} has shape {arr.shape}, expected {(self.height, self.width)}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def identity(cls, width, height):
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        return cls(width, height, xs, ys, mapping=lambda x, y: (np.asarray(x, float), np.asarray(y, float)))

    @classmethod
    def from_mapping(cls, mapping, width, height):
        ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
        sx, sy = mapping(xs, ys)
        return cls(width, height, np.broadcast_to(sx, xs.shape), np.broadcast_to(sy, xs.shape), mapping)

    def is_identity(self) -> bool:
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return bool(np.array_equal(self.src_x, xs) and np.array_equal(self.src_y, ys))

    def sample(self, ux, uy):
        """Bilinear interpolation of the field at index coordinates (clamped to the grid)."""
        return _bilinear_xy(self.src_x, self.src_y, np.asarray(ux, float), np.asarray(uy, float))


def _bilinear_xy(fx, fy, ux, uy):
    h, w = fx.shape
    ux = np.clip(ux, 0, w - 1)
    uy = np.clip(uy, 0, h - 1)
    i0 = np.minimum(np.floor(ux).astype(np.int64), max(w - 2, 0))
    j0 = np.minimum(np.floor(uy).astype(np.int64), max(h - 2, 0))
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    a = ux - i0
    b = uy - j0
    out = []
    for f in (fx, fy):
        top = f[j0, i0] * (1 - a) + f[j0, i1] * a
        bot = f[j1, i0] * (1 - a) + f[j1, i1] * a
        out.append(top * (1 - b) + bot * b)
    return out[0], out[1]


def build_field(kind: str, params, out_size) -> SamplingField:
    """Dense field for ``kind`` in ``{"wave", "cylinder"}`` over an ``(width, height)`` grid."""
    width, height = out_size
    if kind == "wave":
        mapping = _wave_mapping(params)
    elif kind == "cylinder":
        mapping = _cylinder_mapping(params)
    else:
        raise InvalidInputError(f"unknown warp kind {kind!r}")
    return SamplingField.from_mapping(mapping, width, height)


def composed_field(out_size, wave: WaveParams | None = None, cylinder: CylinderParams | None = None):
    """Field of "wave, then cylinder" applied to the image.

    In backward form the output pixel first goes through the cylinder map,
    then through the wave map, landing on the source coordinate.
    """
    width, height = out_size
    stages = []
    if cylinder is not None:
        stages.append(_cylinder_mapping(cylinder))
    if wave is not None:
        stages.append(_wave_mapping(wave))

    def mapping(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        for stage in stages:
            x, y = stage(x, y)
        return x, y

    return SamplingField.from_mapping(mapping, width, height)


def border_fill(img: ImageBuffer) -> np.ndarray:
    """Per-channel median of the 1-pixel border ring, rounded half-up."""
    d = img.data
    ring = np.concatenate([d[0], d[-1], d[1:-1, 0], d[1:-1, -1]], axis=0)
    return quantize(np.median(ring.astype(np.float64), axis=0))


def resample(img: ImageBuffer, field: SamplingField, fill=None) -> ImageBuffer:
    """Bilinear backward sampling; samples outside the source take ``fill``."""
    if (field.width, field.height) != img.size:
        raise InvalidInputError(
            f"field is {field.width}x{field.height} but image is {img.width}x{img.height}")
    if fill is None:
        fill = border_fill(img)
    fill = np.broadcast_to(np.asarray(fill, dtype=np.float64), (img.channels,))
    src = img.float_view()
    h, w = img.height, img.width
    sx, sy = field.src_x, field.src_y
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    x = np.where(inside, sx, 0.0)
    y = np.where(inside, sy, 0.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = (x - x0)[:, :, None]
    fy = (y - y0)[:, :, None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
    out = top * (1 - fy) + bot * fy
    out = np.where(inside[:, :, None], out, fill)
    return ImageBuffer(quantize(out))


# -- inverse lookup -------------------------------------------------------------


class _CellIndex:
    """Bucket grid over the source-space bounding boxes of field cells."""

    def __init__(self, fx, fy, bucket=BUCKET, pad=RESIDUAL_TARGET):
        self.bucket = bucket
        corners_x = np.stack([fx[:-1, :-1], fx[:-1, 1:], fx[1:, :-1], fx[1:, 1:]])
        corners_y = np.stack([fy[:-1, :-1], fy[:-1, 1:], fy[1:, :-1], fy[1:, 1:]])
        self.xmin = corners_x.min(0).ravel() - pad
        self.xmax = corners_x.max(0).ravel() + pad
        self.ymin = corners_y.min(0).ravel() - pad
        self.ymax = corners_y.max(0).ravel() + pad
        bx0 = np.floor(self.xmin / bucket).astype(np.int64)
        bx1 = np.floor(self.xmax / bucket).astype(np.int64)
        by0 = np.floor(self.ymin / bucket).astype(np.int64)
        by1 = np.floor(self.ymax / bucket).astype(np.int64)
        cells = np.arange(self.xmin.size)
        keys, owners = [], []
        for dy in range(int((by1 - by0).max(initial=0)) + 1):
            for dx in range(int((bx1 - bx0).max(initial=0)) + 1):
                ok = (bx0 + dx <= bx1) & (by0 + dy <= by1)
                keys.append(self._key(bx0[ok] + dx, by0[ok] + dy))
                owners.append(cells[ok])
        keys = np.concatenate(keys)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, keys))
        self.keys = keys[order]
        self.owners = owners[order]

    @staticmethod
    def _key(bx, by):
        return (by + (1 << 24)) * (1 << 26) + (bx + (1 << 24))

    def candidates(self, tx, ty):
        """Flattened ``(point index, cell index)`` pairs whose cell box holds the point."""
        b = self.bucket
        k = self._key(np.floor(tx / b).astype(np.int64), np.floor(ty / b).astype(np.int64))
        lo = np.searchsorted(self.keys, k, side="left")
        hi = np.searchsorted(self.keys, k, side="right")
        counts = hi - lo
        point = np.repeat(np.arange(len(tx)), counts)
        starts = np.repeat(lo - np.cumsum(counts) + counts, counts)
        cells = self.owners[starts + np.arange(counts.sum())]
        px, py = tx[point], ty[point]
        ok = (self.xmin[cells] <= px) & (px <= self.xmax[cells]) & \
             (self.ymin[cells] <= py) & (py <= self.ymax[cells])
        return point[ok], cells[ok]


def _solve_cells(fx, fy, cells, tx, ty, iters=30):
    """Newton solve of the bilinear patch equation, one target per cell.

    Returns grid index coordinates and residuals.
    """
    ncols = fx.shape[1] - 1
    j = cells // ncols
    i = cells % ncols
    c00 = np.stack([fx[j, i], fy[j, i]], -1)
    c10 = np.stack([fx[j, i + 1], fy[j, i + 1]], -1)
    c01 = np.stack([fx[j + 1, i], fy[j + 1, i]], -1)
    c11 = np.stack([fx[j + 1, i + 1], fy[j + 1, i + 1]], -1)
    target = np.stack([tx, ty], -1)
    a = np.full(len(cells), 0.5)
    b = np.full(len(cells), 0.5)

    def evaluate(a, b):
        a_, b_ = a[:, None], b[:, None]
        return c00 * (1 - a_) * (1 - b_) + c10 * a_ * (1 - b_) + c01 * (1 - a_) * b_ + c11 * a_ * b_

    for _ in range(iters):
        r = evaluate(a, b) - target
        da = (c10 - c00) * (1 - b[:, None]) + (c11 - c01) * b[:, None]
        db = (c01 - c00) * (1 - a[:, None]) + (c11 - c10) * a[:, None]
        det = da[:, 0] * db[:, 1] - da[:, 1] * db[:, 0]
        safe = np.abs(det) > 1e-12
        det = np.where(safe, det, 1.0)
        step_a = np.where(safe, (db[:, 1] * r[:, 0] - db[:, 0] * r[:, 1]) / det, 0.0)
        step_b = np.where(safe, (da[:, 0] * r[:, 1] - da[:, 1] * r[:, 0]) / det, 0.0)
        a = np.clip(a - step_a, 0.0, 1.0)
        b = np.clip(b - step_b, 0.0, 1.0)
    res = np.hypot(*(evaluate(a, b) - target).T)
    return i + a, j + b, res


def _auto_margin(field: SamplingField) -> int:
    ys, xs = np.mgrid[0:field.height, 0:field.width]
    disp = np.hypot(field.src_x - xs, field.src_y - ys)
    return int(math.ceil(float(disp.max(initial=0.0)))) + 2


class _Level:
    """Field values on the canvas grown by ``margin`` pixels on every side."""

    def __init__(self, field: SamplingField, margin: int):
        self.margin = margin
        if margin:
            ys, xs = np.mgrid[-margin:field.height + margin, -margin:field.width + margin].astype(np.float64)
            fx, fy = field.mapping(xs, ys)
            self.fx = np.broadcast_to(fx, xs.shape).astype(np.float64)
            self.fy = np.broadcast_to(fy, xs.shape).astype(np.float64)
        else:
            self.fx, self.fy = np.asarray(field.src_x), np.asarray(field.src_y)
        self.index = _CellIndex(self.fx, self.fy)


class _Inverter:
    """Inverse lookup of source points through a sampling field.

    The search runs over the canvas grown by a margin that covers the
    largest displacement on the canvas.  Points still unresolved are retried
    on progressively wider grids, up to ``max_extent`` times the canvas size.
    """

    def __init__(self, field: SamplingField, margin: int | None = None, max_extent: float = 2.0):
        self.field = field
        self.width, self.height = field.width, field.height
        if field.mapping is None:
            margins = [0]
        elif margin is not None:
            margins = [int(margin)]
        else:
            cap = int(max_extent * max(field.width, field.height))
            m = min(_auto_margin(field), cap)
            margins = [m]
            while m < cap:
                m = min(2 * m, cap)
                margins.append(m)
        self._margins = margins
        self._levels: dict[int, _Level] = {}

    def _level(self, margin):
        if margin not in self._levels:
            self._levels[margin] = _Level(self.field, margin)
        return self._levels[margin]

    def _solve(self, level: _Level, tx, ty):
        n = len(tx)
        ux = np.full(n, np.nan)
        uy = np.full(n, np.nan)
        res = np.full(n, np.inf)
        point, cells = level.index.candidates(tx, ty)
        if point.size:
            gx, gy, r = _solve_cells(level.fx, level.fy, cells, tx[point], ty[point])
            gx = gx - level.margin
            gy = gy - level.margin
            on_canvas = (gx >= 0) & (gx <= self.width - 1) & (gy >= 0) & (gy <= self.height - 1)
            exact = r <= 1e-6
            rank = np.where(exact & on_canvas, 0, np.where(exact, 1, 2))
            key = np.where(exact, 0.0, r)
            order = np.lexsort((cells, key, rank, point))
            first = order[np.r_[True, point[order][1:] != point[order][:-1]]]
            sel = point[first]
            ux[sel], uy[sel], res[sel] = gx[first], gy[first], r[first]
        return ux, uy, res

    def _nearest(self, level: _Level, tx, ty):
        # best effort for points outside every cell: the closest node and its cells
        fx, fy = level.fx, level.fy
        d = np.hypot(fx - tx, fy - ty)
        jn, i_n = np.unravel_index(int(np.argmin(d)), d.shape)
        ncols = fx.shape[1] - 1
        js = np.clip([jn - 1, jn - 1, jn, jn], 0, fx.shape[0] - 2)
        is_ = np.clip([i_n - 1, i_n, i_n - 1, i_n], 0, ncols - 1)
        cells = np.unique(js * ncols + is_)
        gx, gy, r = _solve_cells(fx, fy, cells, np.full(len(cells), tx), np.full(len(cells), ty))
        k = int(np.argmin(r))
        return gx[k] - level.margin, gy[k] - level.margin, r[k]

    def invert(self, tx, ty):
        """Index-space targets in, index-space positions and residuals out."""
        tx = np.asarray(tx, dtype=np.float64).ravel()
        ty = np.asarray(ty, dtype=np.float64).ravel()
        ux = np.full(len(tx), np.nan)
        uy = np.full(len(tx), np.nan)
        res = np.full(len(tx), np.inf)
        todo = np.arange(len(tx))
        for margin in self._margins:
            if todo.size == 0:
                break
            level = self._level(margin)
            ax, ay, ar = self._solve(level, tx[todo], ty[todo])
            better = ar < res[todo]
            idx = todo[better]
            ux[idx], uy[idx], res[idx] = ax[better], ay[better], ar[better]
            todo = todo[res[todo] > RESIDUAL_TARGET]
        if todo.size:
            level = self._level(self._margins[-1])
            for n in todo[~np.isfinite(res[todo])]:
                ux[n], uy[n], res[n] = self._nearest(level, tx[n], ty[n])
        return ux, uy, res

    def invert_continuous(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        ux, uy, res = self.invert(pts[:, 0] - 0.5, pts[:, 1] - 0.5)
        return np.stack([ux + 0.5, uy + 0.5], -1), res


def _raise_on_fold(residuals):
    bad = np.flatnonzero(~(residuals <= FOLD_TOLERANCE))
    if bad.size:
        raise FoldError(int(bad[0]), float(residuals[bad[0]]))


def invert_points(field: SamplingField, points, margin: int | None = None, strict: bool = True):
    """Find output positions whose field value hits each source point.

    ``points`` are continuous image coordinates, shape ``(n, 2)``.  Returns
    ``(positions, residuals)`` in the same space, where a residual is the
    distance between the field at the position and the point.  When
    ``strict``, raises :class:`FoldError` with the offending index if a
    residual exceeds ``FOLD_TOLERANCE``; otherwise the best positions found
    are returned as they are.
    """
    out, residuals = _Inverter(field, margin).invert_continuous(points)
    if strict:
        _raise_on_fold(residuals)
    return out, residuals


def transform_polygon(poly: PolygonInstance, field: SamplingField, return_residuals=False,
                      margin: int | None = None):
    """Move a polygon from source to output coordinates through the field inverse."""
    if field.is_identity():
        out = poly.with_vertices(poly.vertices)
        return (out, np.zeros(len(poly.vertices))) if return_residuals else out
    verts, residuals = invert_points(field, poly.as_array(), margin=margin)
    out = poly.with_vertices(verts)
    return (out, residuals) if return_residuals else out


def compose_warps(img: ImageBuffer, annots: AnnotationSet, params, fill=None,
                  densify_step: float | None = None, min_area: float = 1.0):
    """Apply wave, cylinder and shadow from ``params`` to an image and its cells.

    Both warps share a single resample.  Polygon edges are subdivided to at
    most ``densify_step`` pixels before transformation, so curved cell
    boundaries survive.  Cells covering fewer than ``min_area`` pixels of
    the canvas after warping are dropped.
    """
    wave = getattr(params, "wave", None)
    cylinder = getattr(params, "cylinder", None)
    shadow = getattr(params, "shadow", None)
    out_img, out_ann = img, annots
    if wave is not None or cylinder is not None:
        field = composed_field(img.size, wave=wave, cylinder=cylinder)
        if not field.is_identity():
            out_img = resample(img, field, fill)
            inv = _Inverter(field)
            polys = [inst.as_array() for inst in annots.instances]
            if densify_step:
                polys = [densify(p, densify_step) for p in polys]
            instances = []
            if polys:
                moved, residuals = inv.invert_continuous(np.concatenate(polys))
                _raise_on_fold(residuals)
                bounds = np.cumsum([0] + [len(p) for p in polys])
                for inst, lo, hi in zip(annots.instances, bounds[:-1], bounds[1:]):
                    verts = moved[lo:hi]
                    if rasterize(verts, img.size).sum() < min_area:
                        continue
                    instances.append(inst.with_vertices(verts))
            out_ann = annots.replace(instances=tuple(instances))
    if shadow is not None:
        out_img = apply_shadow(out_img, shadow)
    return out_img, out_ann
