"""Reference build geometries: rectangles, spool-like parts, random voxels.

2-D occupancy arrays are indexed ``[ix, iz]``; 3-D arrays ``[ix, iy, iz]``.
"""
from __future__ import annotations

import numpy as np

from .mesh import BuildGeometry


def rectangle(width: int, height: int, voxel_size: float = 1.0) -> BuildGeometry:
    return BuildGeometry(np.ones((width, height), dtype=bool), voxel_size)


def block(nx: int, ny: int, nz: int, voxel_size: float = 1.0) -> BuildGeometry:
    return BuildGeometry(np.ones((nx, ny, nz), dtype=bool), voxel_size)


def spool(flange_width: int, neck_width: int, base_height: int, neck_height: int,
          top_height: int, voxel_size: float = 1.0) -> BuildGeometry:
    """2-D spool: wide base, narrow centred neck, wide top flange."""
    if neck_width > flange_width or (flange_width - neck_width) % 2:
        raise ValueError("neck must be narrower than the flange and centred")
    h = base_height + neck_height + top_height
    occ = np.zeros((flange_width, h), dtype=bool)
    occ[:, :base_height] = True
    lo = (flange_width - neck_width) // 2
    occ[lo:lo + neck_width, base_height:base_height + neck_height] = True
    occ[:, base_height + neck_height:] = True
    return BuildGeometry(occ, voxel_size)


def l_shape(width: int, height: int, step_width: int, step_height: int,
            voxel_size: float = 1.0) -> BuildGeometry:
    """2-D L: full-width lower block, narrower upper block on the left."""
    occ = np.zeros((width, height), dtype=bool)
    occ[:, :step_height] = True
    occ[:step_width, :] = True
    return BuildGeometry(occ, voxel_size)


def two_towers(gap: int = 1, size: int = 1, dim: int = 3) -> BuildGeometry:
    """Two disconnected cubes (or squares) ``gap`` voxels apart."""
    w = 2 * size + gap
    if dim == 3:
        occ = np.zeros((w, size, size), dtype=bool)
        occ[:size] = True
        occ[size + gap:] = True
    else:
        occ = np.zeros((w, size), dtype=bool)
        occ[:size] = True
        occ[size + gap:] = True
    return BuildGeometry(occ)


def random_grounded(rng: np.random.Generator, shape: tuple, fill: float = 0.6,
                    max_nodes: int | None = None, connected: bool = False) -> BuildGeometry:
    """Random voxel set resting on the base plate.

    Columns are grown upward from z = 0 so every voxel is supported.  With
    ``connected=True`` the bottom layer is solid, which makes the part a
    single component.
    """
    while True:
        xy = shape[:-1]
        hz = shape[-1]
        heights = rng.integers(0, hz + 1, size=xy)
        mask = rng.random(xy) < fill
        heights = np.where(mask, np.maximum(heights, 1), 0)
        if connected:
            heights = np.maximum(heights, 1)
        if heights.max(initial=0) == 0:
            continue
        occ = np.arange(hz) < heights[..., None]
        g = BuildGeometry(occ)
        if max_nodes is not None:
            from .mesh import build_mesh
            if build_mesh(g).n_nodes > max_nodes:
                continue
        return g
