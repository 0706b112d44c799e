"""Polyline interfaces of two-phase designs.

The normal of every segment points into phase 1 (phi = 1 in Omega, or
m = 2 in the cell).  Interfaces never include the outer boundary of Omega;
on the periodic cell, chains crossing the seam are split at the faces of Y.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage import measure

from ..fem import Grid

_SEGMENT_GAUSS = np.polynomial.legendre.leggauss(4)


@dataclass
class InterfacePolyline:
    """Chains of vertices (k, 2) with an orientation sign per chain.

    The unit normal of segment a -> b is ``sign * (-t_y, t_x)`` with t the
    unit tangent.
    """

    chains: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    periodic: bool = False

    @property
    def n_segments(self) -> int:
        return sum(len(c) - 1 for c in self.chains)

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Start points, end points and orientation signs per segment."""
        if not self.chains:
            z = np.zeros((0, 2))
            return z, z, np.zeros(0)
        a = np.concatenate([c[:-1] for c in self.chains])
        b = np.concatenate([c[1:] for c in self.chains])
        s = np.concatenate([np.full(len(c) - 1, sg, dtype=float) for c, sg in zip(self.chains, self.signs)])
        return a, b, s

    def tangents(self) -> tuple[np.ndarray, np.ndarray]:
        a, b, _ = self.segments()
        d = b - a
        length = np.linalg.norm(d, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(length[:, None] > 0, d / length[:, None], 0.0)
        return t, length

    def normals(self) -> np.ndarray:
        t, _ = self.tangents()
        _, _, s = self.segments()
        return s[:, None] * np.stack([-t[:, 1], t[:, 0]], axis=1)

    @property
    def perimeter(self) -> float:
        return float(self.tangents()[1].sum())

    def quadrature(self):
        """Four-point Gauss rule per segment: points (S, 4, 2), weights (S, 4)."""
        a, b, _ = self.segments()
        x, w = _SEGMENT_GAUSS
        s = 0.5 * (x + 1.0)
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        _, length = self.tangents()
        return pts, 0.5 * w[None, :] * length[:, None]

    def transported(self, mapping) -> "InterfacePolyline":
        """Image of the vertices under ``mapping`` (points -> points), same orientation."""
        return InterfacePolyline([np.asarray(mapping(c), dtype=float) for c in self.chains], list(self.signs), self.periodic)


def _grid_image(grid: Grid, nodal: np.ndarray) -> np.ndarray:
    img = grid.image(nodal)
    if grid.periodic:
        img = np.pad(img, ((0, 1), (0, 1)), mode="wrap")
    return img


def _orient(chain: np.ndarray, grid: Grid, nodal: np.ndarray, level: float) -> float:
    a, b = chain[:-1], chain[1:]
    d = b - a
    length = np.linalg.norm(d, axis=1)
    keep = length > 0
    if not np.any(keep):
        return 1.0
    a, d, length = a[keep], d[keep], length[keep]
    n = np.stack([-d[:, 1], d[:, 0]], axis=1) / length[:, None]
    mid = a + 0.5 * d
    delta = 1e-3 * min(grid.hx, grid.hy)
    lo = np.array([0.0, 0.0])
    hi = np.array([grid.lx, grid.ly])
    plus = np.clip(mid + delta * n, lo, hi)
    minus = np.clip(mid - delta * n, lo, hi)
    diff = grid.interpolate(nodal, plus) - grid.interpolate(nodal, minus)
    return 1.0 if np.sum(np.sign(diff) * length) >= 0 else -1.0


def _levelset_polyline(grid: Grid, nodal: np.ndarray, level: float) -> InterfacePolyline:
    img = _grid_image(grid, nodal)
    chains, signs = [], []
    for c in measure.find_contours(img, level):
        # (row, col) = (j, i) index coordinates
        pts = np.stack([c[:, 1] * grid.hx, c[:, 0] * grid.hy], axis=1)
        if len(pts) < 2:
            continue
        chains.append(pts)
        signs.append(_orient(pts, grid, nodal, level))
    return InterfacePolyline(chains, signs, grid.periodic)


def _indicator_polyline(grid: Grid, values: np.ndarray) -> InterfacePolyline:
    v = np.asarray(values)
    if v.shape == (grid.n_elems,):
        v = v.reshape(grid.ny, grid.nx)
    if v.shape != (grid.ny, grid.nx):
        raise ValueError(f"indicator must have one value per element, got shape {values.shape}")
    v = v > 0.5
    chains, signs = [], []
    hx, hy = grid.hx, grid.hy
    # vertical edges between columns i-1 and i
    cols = range(grid.nx) if grid.periodic else range(1, grid.nx)
    for i in cols:
        left = v[:, i - 1]
        right = v[:, i]
        for j in np.flatnonzero(left != right):
            chains.append(np.array([[i * hx, j * hy], [i * hx, (j + 1) * hy]]))
            # left normal of an upward segment is -x
            signs.append(-1.0 if right[j] else 1.0)
    rows = range(grid.ny) if grid.periodic else range(1, grid.ny)
    for j in rows:
        below = v[j - 1, :]
        above = v[j, :]
        for i in np.flatnonzero(below != above):
            chains.append(np.array([[i * hx, j * hy], [(i + 1) * hx, j * hy]]))
            # left normal of a rightward segment is +y
            signs.append(1.0 if above[i] else -1.0)
    return InterfacePolyline(chains, signs, grid.periodic)


def extract_interface(values, grid: Grid, mode: str = "levelset", level: float = 0.0) -> InterfacePolyline:
    """Interface of a two-phase field on ``grid``.

    ``levelset``: nodal level-set values, phase 1 where values > level,
    traced by marching squares.  ``indicator``: one {0, 1} value per
    element, interface made of the element edges separating the phases.
    """
    if mode == "levelset":
        nodal = np.asarray(values, dtype=float)
        if nodal.shape != (grid.n_nodes,):
            raise ValueError("level-set mode expects nodal values")
        return _levelset_polyline(grid, nodal, level)
    if mode == "indicator":
        return _indicator_polyline(grid, values)
    raise ValueError(f"unknown mode {mode!r}")


def rasterize(poly: InterfacePolyline, points: np.ndarray, empty_value: bool = False) -> np.ndarray:
    """Phase indicator at ``points`` from the side of the nearest segment.

    A point belongs to phase 1 when it lies on the normal side of its
    nearest segment.  Without segments every point gets ``empty_value``.
    """
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    a, b, _ = poly.segments()
    if a.shape[0] == 0:
        return np.full(pts.shape[:-1], bool(empty_value))
    n = poly.normals()
    d = b - a
    dd = np.maximum(np.sum(d * d, axis=1), 1e-300)
    out = np.empty(flat.shape[0], dtype=bool)
    for start in range(0, flat.shape[0], 4096):
        p = flat[start:start + 4096]
        rel = p[:, None, :] - a[None, :, :]
        t = np.clip(np.sum(rel * d[None], axis=2) / dd[None], 0.0, 1.0)
        foot = a[None] + t[..., None] * d[None]
        gap = p[:, None, :] - foot
        if poly.periodic:
            gap -= np.round(gap)
        dist = np.sum(gap * gap, axis=2)
        k = np.argmin(dist, axis=1)
        rows = np.arange(p.shape[0])
        # signed distance measured from the segment's supporting line
        side = np.sum((p - a[k]) * n[k], axis=1) if not poly.periodic else np.sum(gap[rows, k] * n[k], axis=1)
        out[start:start + 4096] = side > 0
    return out.reshape(pts.shape[:-1])
