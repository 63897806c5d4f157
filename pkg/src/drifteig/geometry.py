"""Domains, the inflow test on their boundary, and masked cell-centred grids."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import ndimage

from .expr import Expr, parse, to_source
from .fields import PlanarField

__all__ = [
    "Disk", "Rect", "Sublevel", "Domain", "Grid", "InflowReport", "GeometryError",
    "contains", "build_grid", "check_inflow", "boundary_samples", "domain_from_json",
    "domain_to_json",
]

# face directions: +x1, -x1, +x2, -x2
DIRECTIONS = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise GeometryError("disk radius must be positive")

    def bounds(self):
        c, r = np.asarray(self.center, float), self.radius
        return c - r, c + r


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise GeometryError("rectangle must have hi > lo in both coordinates")

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)


@dataclass(frozen=True)
class Sublevel:
    """``{x : H(x) < level}`` inside the user-supplied box ``[lo, hi]``."""

    H: Expr
    level: float
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise GeometryError("bounding box must have hi > lo in both coordinates")

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def validate(self, samples: int = 400) -> None:
        """Check the box edge lies outside the sublevel set and the set is nonempty."""
        lo, hi = self.bounds()
        t = np.linspace(0.0, 1.0, samples)
        edge = np.concatenate([
            np.stack([lo[0] + t * (hi[0] - lo[0]), np.full_like(t, lo[1])], 1),
            np.stack([lo[0] + t * (hi[0] - lo[0]), np.full_like(t, hi[1])], 1),
            np.stack([np.full_like(t, lo[0]), lo[1] + t * (hi[1] - lo[1])], 1),
            np.stack([np.full_like(t, hi[0]), lo[1] + t * (hi[1] - lo[1])], 1),
        ])
        vals = self.H.array_fn(edge[:, 0], edge[:, 1])
        if np.any(vals < self.level):
            raise GeometryError("bounding box does not strictly contain the sublevel set")
        g = np.linspace(0, 1, 64)
        X1, X2 = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]))
        if not np.any(self.H.array_fn(X1, X2) < self.level):
            raise GeometryError("sublevel set is empty")


Domain = Union[Disk, Rect, Sublevel]


def contains(d: Domain, p) -> bool | np.ndarray:
    """Membership in the open region; ``p`` may be a point or an ``(..., 2)`` array."""
    p = np.asarray(p, float)
    x1, x2 = p[..., 0], p[..., 1]
    if isinstance(d, Disk):
        out = (x1 - d.center[0]) ** 2 + (x2 - d.center[1]) ** 2 < d.radius ** 2
    elif isinstance(d, Rect):
        out = (x1 > d.lo[0]) & (x1 < d.hi[0]) & (x2 > d.lo[1]) & (x2 < d.hi[1])
    elif isinstance(d, Sublevel):
        inside_box = (x1 > d.lo[0]) & (x1 < d.hi[0]) & (x2 > d.lo[1]) & (x2 < d.hi[1])
        with np.errstate(invalid="ignore"):
            out = inside_box & (d.H.array_fn(x1, x2) < d.level)
    else:
        raise TypeError(f"unknown domain {d!r}")
    return bool(out) if np.ndim(out) == 0 else out


def diameter(d: Domain) -> float:
    lo, hi = d.bounds()
    return float(np.hypot(*(hi - lo)))


# --------------------------------------------------------------------------- #
# boundary sampling and the inflow assumption
# --------------------------------------------------------------------------- #

def boundary_samples(d: Domain, samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Points on the boundary and the outward unit normals there."""
    if isinstance(d, Disk):
        th = 2 * np.pi * (np.arange(samples) + 0.5) / samples
        nrm = np.stack([np.cos(th), np.sin(th)], 1)
        return np.asarray(d.center) + d.radius * nrm, nrm
    if isinstance(d, Rect):
        lo, hi = d.bounds()
        per = 2 * (hi - lo).sum()
        s = per * (np.arange(samples) + 0.5) / samples
        pts, nrm = [], []
        w, h = hi - lo
        for si in s:
            if si < w:
                pts.append((lo[0] + si, lo[1])); nrm.append((0, -1))
            elif si < w + h:
                pts.append((hi[0], lo[1] + si - w)); nrm.append((1, 0))
            elif si < 2 * w + h:
                pts.append((hi[0] - (si - w - h), hi[1])); nrm.append((0, 1))
            else:
                pts.append((lo[0], hi[1] - (si - 2 * w - h))); nrm.append((-1, 0))
        return np.array(pts, float), np.array(nrm, float)
    if isinstance(d, Sublevel):
        return _sublevel_boundary(d, samples)
    raise TypeError(f"unknown domain {d!r}")


def _sublevel_boundary(d: Sublevel, samples: int):
    lo, hi = d.bounds()
    # ray casting from the interior point of least H
    g = np.linspace(0, 1, 129)
    X1, X2 = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]), indexing="ij")
    Hv = d.H.array_fn(X1, X2)
    k = np.unravel_index(np.nanargmin(Hv), Hv.shape)
    origin = np.array([X1[k], X2[k]])
    rmax = float(np.hypot(*(hi - lo)))
    radii = np.linspace(0.0, rmax, 2049)[1:]
    pts = []
    for th in 2 * np.pi * (np.arange(samples) + 0.5) / samples:
        e = np.array([np.cos(th), np.sin(th)])
        ray = origin + radii[:, None] * e
        inbox = np.all((ray > lo) & (ray < hi), axis=1)
        f = np.where(inbox, d.H.array_fn(ray[:, 0], ray[:, 1]) - d.level, 1.0)
        cross = np.nonzero((f[:-1] < 0) & (f[1:] >= 0))[0]
        for j in cross:
            a, b = radii[j], radii[j + 1]
            for _ in range(60):
                m = 0.5 * (a + b)
                q = origin + m * e
                if d.H(q[0], q[1]) < d.level:
                    a = m
                else:
                    b = m
            pts.append(origin + 0.5 * (a + b) * e)
    pts = np.array(pts)
    grads = np.array([d.H.scalar_grad_fn(p[0], p[1])[1:] for p in pts])
    nrm = grads / np.linalg.norm(grads, axis=1, keepdims=True)
    return pts, nrm


@dataclass
class InflowReport:
    min_bn: float
    max_bn: float
    satisfied: bool
    samples: int
    worst_point: tuple[float, float]

    def to_json(self) -> dict:
        return {"min_bn": self.min_bn, "max_bn": self.max_bn, "satisfied": self.satisfied,
                "samples": self.samples, "worst_point": list(self.worst_point)}


def check_inflow(d: Domain, b: PlanarField, samples: int = 400) -> InflowReport:
    """Sample ``b . n`` on the boundary; the assumption holds iff its maximum is negative."""
    if samples < 100:
        raise ValueError("need at least 100 boundary samples")
    pts, nrm = boundary_samples(d, samples)
    b1, b2 = b(pts[:, 0], pts[:, 1])
    bn = b1 * nrm[:, 0] + b2 * nrm[:, 1]
    k = int(np.argmax(bn))
    return InflowReport(float(bn.min()), float(bn.max()), bool(bn.max() < 0), len(pts),
                        (float(pts[k, 0]), float(pts[k, 1])))


# --------------------------------------------------------------------------- #
# grids
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Grid:
    """Cell-centred grid of the bounding box with an inside mask.

    Unknowns are the inside cells numbered in C order of ``(i1, i2)``.
    ``faces_*`` arrays list the interior faces once each (``+x1`` or ``+x2``
    neighbour of the lower cell); ``bface_*`` arrays list boundary faces of
    inside cells with their axis-aligned outward normals.
    """

    lo: np.ndarray
    n1: int
    n2: int
    h1: float
    h2: float
    mask: np.ndarray
    index: np.ndarray
    centers: np.ndarray
    face_lo: np.ndarray
    face_hi: np.ndarray
    face_axis: np.ndarray
    face_mid: np.ndarray
    bface_cell: np.ndarray
    bface_mid: np.ndarray
    bface_normal: np.ndarray
    dropped_cells: int = 0
    domain: Domain | None = field(default=None, compare=False)

    @property
    def size(self) -> int:
        return int(self.centers.shape[0])

    @property
    def cell_area(self) -> float:
        return self.h1 * self.h2

    def to_image(self, v: np.ndarray, fill=np.nan) -> np.ndarray:
        """Scatter an unknown vector into an ``(n1, n2)`` array."""
        img = np.full((self.n1, self.n2), fill, dtype=float)
        img[self.mask] = v
        return img


def build_grid(d: Domain, n: int, bounds=None) -> Grid:
    """Mask an ``n x n`` cell grid of the bounding box by centre containment.

    Only the largest 4-connected set of inside cells is kept, so the discrete
    operator is irreducible.
    """
    if n < 8:
        raise GeometryError("grid needs n >= 8")
    lo, hi = bounds if bounds is not None else d.bounds()
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    h1, h2 = (hi - lo) / n
    c1 = lo[0] + (np.arange(n) + 0.5) * h1
    c2 = lo[1] + (np.arange(n) + 0.5) * h2
    C1, C2 = np.meshgrid(c1, c2, indexing="ij")
    mask = np.asarray(contains(d, np.stack([C1, C2], -1)), bool)
    labels, count = ndimage.label(mask)
    dropped = 0
    if count > 1:
        sizes = ndimage.sum(mask, labels, range(1, count + 1))
        keep = 1 + int(np.argmax(sizes))
        dropped = int(mask.sum() - sizes[keep - 1])
        mask = labels == keep
    if mask.sum() < 16:
        raise GeometryError(f"degenerate grid: only {int(mask.sum())} interior cells")
    index = np.full((n, n), -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    centers = np.stack([C1[mask], C2[mask]], 1)

    # interior faces
    f_lo, f_hi, f_axis, f_mid = [], [], [], []
    both = mask[:-1, :] & mask[1:, :]
    i1, i2 = np.nonzero(both)
    f_lo.append(index[i1, i2]); f_hi.append(index[i1 + 1, i2]); f_axis.append(np.zeros(len(i1), int))
    f_mid.append(np.stack([lo[0] + (i1 + 1) * h1, c2[i2]], 1))
    both = mask[:, :-1] & mask[:, 1:]
    i1, i2 = np.nonzero(both)
    f_lo.append(index[i1, i2]); f_hi.append(index[i1, i2 + 1]); f_axis.append(np.ones(len(i1), int))
    f_mid.append(np.stack([c1[i1], lo[1] + (i2 + 1) * h2], 1))

    # boundary faces: inside cell next to an outside cell or the box edge
    padded = np.pad(mask, 1, constant_values=False)
    b_cell, b_mid, b_nrm = [], [], []
    for k, (s1, s2) in enumerate(DIRECTIONS):
        nb = padded[1 + s1:1 + s1 + n, 1 + s2:1 + s2 + n]
        i1, i2 = np.nonzero(mask & ~nb)
        b_cell.append(index[i1, i2])
        mid = np.stack([c1[i1] + 0.5 * s1 * h1, c2[i2] + 0.5 * s2 * h2], 1)
        b_mid.append(mid)
        b_nrm.append(np.tile(np.array([s1, s2], float), (len(i1), 1)))

    return Grid(
        lo=lo, n1=n, n2=n, h1=float(h1), h2=float(h2), mask=mask, index=index, centers=centers,
        face_lo=np.concatenate(f_lo), face_hi=np.concatenate(f_hi),
        face_axis=np.concatenate(f_axis), face_mid=np.concatenate(f_mid),
        bface_cell=np.concatenate(b_cell), bface_mid=np.concatenate(b_mid),
        bface_normal=np.concatenate(b_nrm), dropped_cells=dropped, domain=d,
    )


# --------------------------------------------------------------------------- #
# serialization
# --------------------------------------------------------------------------- #

def domain_from_json(spec: dict) -> Domain:
    kind = spec.get("type")
    try:
        if kind == "disk":
            return Disk(tuple(map(float, spec["center"])), float(spec["radius"]))
        if kind == "rect":
            return Rect(tuple(map(float, spec["lo"])), tuple(map(float, spec["hi"])))
        if kind == "sublevel":
            d = Sublevel(parse(spec["H"]), float(spec["level"]),
                         tuple(map(float, spec["lo"])), tuple(map(float, spec["hi"])))
            d.validate()
            return d
    except KeyError as err:
        raise GeometryError(f"domain of type {kind!r} is missing field {err}") from None
    raise GeometryError(f"unknown domain type {kind!r}")


def domain_to_json(d: Domain) -> dict:
    if isinstance(d, Disk):
        return {"type": "disk", "center": list(d.center), "radius": d.radius}
    if isinstance(d, Rect):
        return {"type": "rect", "lo": list(d.lo), "hi": list(d.hi)}
    return {"type": "sublevel", "H": to_source(d.H), "level": d.level,
            "lo": list(d.lo), "hi": list(d.hi)}
