"""Structured quad/hex meshing of voxelized build geometry.

Coordinates are in mm.  A 3-D geometry is an occupancy array indexed
``[ix, iy, iz]``; a 2-D geometry is indexed ``[ix, iz]`` and meshed as a
unit-thickness planar slab.  The last axis is always the build direction, so
``z = 0`` is the base plate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import generate_binary_structure, label
from scipy.sparse.csgraph import connected_components as _cc

from .errors import BadResolution, ConfigError, EmptyGeometry

logger = logging.getLogger(__name__)

# local node offsets, counter-clockwise in the bottom face first
_QUAD_OFFSETS = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=np.int64)
_HEX_OFFSETS = np.array(
    [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
     (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
    dtype=np.int64,
)

OMEGA, LAMBDA, GAMMA = "omega", "lambda", "gamma"


def local_offsets(dim: int) -> np.ndarray:
    return _QUAD_OFFSETS if dim == 2 else _HEX_OFFSETS


def face_local_nodes(dim: int, axis: int, side: int) -> np.ndarray:
    """Local node ids of the element face normal to ``axis`` at ``side``.

    Returned in the face's own counter-clockwise order (lexicographic on the
    remaining axes for an edge), so they line up with the reference face.
    """
    off = local_offsets(dim)
    ids = np.flatnonzero(off[:, axis] == side)
    rest = [a for a in range(dim) if a != axis]
    if dim == 2:
        return ids[np.argsort(off[ids, rest[0]], kind="stable")]
    ref = [(0, 0), (1, 0), (1, 1), (0, 1)]
    lookup = {tuple(off[i, rest]): i for i in ids}
    return np.array([lookup[r] for r in ref], dtype=np.int64)


@dataclass(frozen=True)
class BuildGeometry:
    """Voxel occupancy of the build domain."""

    occupancy: np.ndarray
    voxel_size: float = 1.0

    def __post_init__(self):
        occ = np.asarray(self.occupancy).astype(bool)
        if occ.ndim not in (2, 3):
            raise ConfigError(f"occupancy must be 2-D or 3-D, got {occ.ndim}-D")
        if not occ.any():
            raise EmptyGeometry("geometry has no occupied voxel")
        if not self.voxel_size > 0:
            raise ConfigError("voxel_size must be positive")
        object.__setattr__(self, "occupancy", occ)

    @property
    def dim(self) -> int:
        return self.occupancy.ndim

    def is_grounded(self) -> bool:
        """True if every occupied voxel is face-connected to one at z = 0."""
        occ = self.occupancy
        lab, _ = label(occ, structure=generate_binary_structure(occ.ndim, 1))
        grounded = set(np.unique(lab[..., 0])) - {0}
        return set(np.unique(lab[occ])) <= grounded

    @classmethod
    def from_dict(cls, doc: dict) -> tuple["BuildGeometry", float]:
        """Parse ``{"voxel_size_mm", "dims", "occupancy", "element_size_mm"}``.

        ``occupancy`` is flat in C order over ``dims``.  Returns the geometry
        and the requested element size.
        """
        allowed = {"voxel_size_mm", "dims", "occupancy", "element_size_mm"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown geometry keys: {sorted(unknown)}")
        try:
            dims = [int(d) for d in doc["dims"]]
            flat = np.asarray(doc["occupancy"], dtype=float)
            vox = float(doc["voxel_size_mm"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad geometry document: {exc}") from exc
        if flat.size != int(np.prod(dims)):
            raise ConfigError(
                f"occupancy has {flat.size} entries, dims {dims} need {int(np.prod(dims))}"
            )
        elem = float(doc.get("element_size_mm", vox))
        return cls(flat.reshape(dims) != 0, vox), elem

    def to_dict(self, element_size: float | None = None) -> dict:
        doc = {
            "voxel_size_mm": self.voxel_size,
            "dims": list(self.occupancy.shape),
            "occupancy": self.occupancy.astype(int).ravel().tolist(),
        }
        if element_size is not None:
            doc["element_size_mm"] = element_size
        return doc


@dataclass(frozen=True)
class Mesh:
    """Node/element discretization with boundary labels.

    ``cells`` holds the integer lattice index of each element's lower corner
    and ``lattice`` that of each node; both are in units of ``h``.
    ``top_faces`` lists ``(element, *face_nodes)`` for every element face
    exposed in +z.
    """

    dim: int
    h: float
    coords: np.ndarray
    elements: np.ndarray
    lattice: np.ndarray
    cells: np.ndarray
    omega: np.ndarray = None
    lam: np.ndarray = None
    gamma: np.ndarray = None
    top_faces: np.ndarray = None
    grounded: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n_nodes(self) -> int:
        return len(self.coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def top_elements(self) -> np.ndarray:
        return self.top_faces[:, 0]

    @property
    def top_face_nodes(self) -> np.ndarray:
        return self.top_faces[:, 1:]

    @property
    def labeled(self) -> bool:
        return self.omega is not None

    def node_labels(self, i: int) -> set[str]:
        out = set()
        if self.omega[i]:
            out.add(OMEGA)
        if self.lam[i]:
            out.add(LAMBDA)
        if self.gamma[i]:
            out.add(GAMMA)
        return out

    def element_volume(self) -> float:
        return self.h ** self.dim

    def to_dict(self) -> dict:
        labels = []
        for i in range(self.n_nodes):
            labels.append(sorted(self.node_labels(i)) or ["interior"])
        return {
            "dim": self.dim,
            "element_size_mm": self.h,
            "nodes": self.coords.tolist(),
            "elements": self.elements.tolist(),
            "labels": labels,
            "top_faces": self.top_faces.tolist(),
            "grounded": bool(self.grounded),
        }


def _subdivision(voxel: float, element_size: float) -> int:
    if not element_size > 0:
        raise BadResolution("element_size must be positive")
    ratio = voxel / element_size
    r = int(round(ratio))
    if r < 1 or abs(ratio - r) > 1e-9 * max(1.0, ratio):
        raise BadResolution(
            f"element_size {element_size} does not divide voxel size {voxel}"
        )
    return r


def _lex_key(idx: np.ndarray, extent: np.ndarray) -> np.ndarray:
    """Linear key ordering lattice points by (z, y, x), z most significant."""
    key = np.zeros(len(idx), dtype=np.int64)
    for a in range(idx.shape[1] - 1, -1, -1):
        key = key * extent[a] + idx[:, a]
    return key


def build_mesh(geometry: BuildGeometry, element_size: float | None = None) -> Mesh:
    """Mesh a voxel geometry with one element per subdivided voxel cell."""
    if element_size is None:
        element_size = geometry.voxel_size
    r = _subdivision(geometry.voxel_size, element_size)
    dim = geometry.dim
    fine = geometry.occupancy
    for a in range(dim):
        fine = np.repeat(fine, r, axis=a)

    cells = np.argwhere(fine).astype(np.int64)
    extent = np.array(fine.shape, dtype=np.int64) + 1
    cells = cells[np.argsort(_lex_key(cells, extent), kind="stable")]

    off = local_offsets(dim)
    corner = (cells[:, None, :] + off[None, :, :]).reshape(-1, dim)
    keys, inverse = np.unique(_lex_key(corner, extent), return_inverse=True)
    elements = inverse.reshape(len(cells), len(off)).astype(np.int64)

    lattice = np.empty((len(keys), dim), dtype=np.int64)
    rem = keys.copy()
    for a in range(dim):
        lattice[:, a] = rem % extent[a]
        rem //= extent[a]
    h = geometry.voxel_size / r
    mesh = Mesh(
        dim=dim,
        h=h,
        coords=lattice.astype(float) * h,
        elements=elements,
        lattice=lattice,
        cells=cells,
        grounded=geometry.is_grounded(),
    )
    if not mesh.grounded:
        logger.warning("geometry has voxels not connected to the base plate")
    return classify_boundaries(mesh)


def _occupied_grid(cells: np.ndarray) -> np.ndarray:
    """Padded occupancy grid: cell ``c`` lives at ``c + 1``."""
    shape = cells.max(axis=0) + 3
    grid = np.zeros(shape, dtype=bool)
    grid[tuple((cells + 1).T)] = True
    return grid


def classify_boundaries(mesh: Mesh) -> Mesh:
    """Label Omega (+z exposed), Lambda (z = 0 bottom) and Gamma nodes."""
    dim = mesh.dim
    grid = _occupied_grid(mesh.cells)
    n = mesh.n_nodes
    omega = np.zeros(n, dtype=bool)
    lam = np.zeros(n, dtype=bool)
    gamma = np.zeros(n, dtype=bool)
    top = []
    vert = dim - 1
    base = mesh.cells + 1
    for axis in range(dim):
        for side in (0, 1):
            nb = base.copy()
            nb[:, axis] += 1 if side else -1
            exposed = ~grid[tuple(nb.T)]
            if not exposed.any():
                continue
            loc = face_local_nodes(dim, axis, side)
            nodes = mesh.elements[exposed][:, loc]
            if axis == vert and side == 1:
                omega[nodes.ravel()] = True
                el = np.flatnonzero(exposed)
                top.append(np.column_stack([el, nodes]))
            elif axis == vert and side == 0:
                on_base = mesh.cells[exposed, vert] == 0
                lam[nodes[on_base].ravel()] = True
                gamma[nodes[~on_base].ravel()] = True
            else:
                gamma[nodes.ravel()] = True
    if top:
        top_faces = np.concatenate(top)
        top_faces = top_faces[np.argsort(top_faces[:, 0], kind="stable")]
    else:
        top_faces = np.zeros((0, 1 + 2 ** (dim - 1)), dtype=np.int64)
    return replace(mesh, omega=omega, lam=lam, gamma=gamma, top_faces=top_faces)


@dataclass(frozen=True)
class Component:
    """A connected part of a mesh with maps back to the parent indices."""

    mesh: Mesh
    element_ids: np.ndarray
    node_ids: np.ndarray


def node_graph(mesh: Mesh) -> sp.csr_matrix:
    """Symmetric node adjacency: i ~ j iff they share an element."""
    e = mesh.elements
    k = e.shape[1]
    rows = np.repeat(e, k, axis=1).ravel()
    cols = np.tile(e, (1, k)).ravel()
    g = sp.coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)),
                      shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()
    g.data[:] = 1
    return g


def connected_components(mesh: Mesh) -> list[Component]:
    """Partition elements into maximal node-connected groups."""
    ncomp, node_lab = _cc(node_graph(mesh), directed=False)
    elem_lab = node_lab[mesh.elements[:, 0]]
    # order components by their first element
    first = {}
    for i, c in enumerate(elem_lab):
        first.setdefault(int(c), i)
    out = []
    for c in sorted(first, key=first.get):
        el = np.flatnonzero(elem_lab == c)
        nodes = np.flatnonzero(node_lab == c)
        remap = -np.ones(mesh.n_nodes, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        tf = mesh.top_faces[np.isin(mesh.top_faces[:, 0], el)]
        emap = -np.ones(mesh.n_elements, dtype=np.int64)
        emap[el] = np.arange(len(el))
        tf = np.column_stack([emap[tf[:, 0]], remap[tf[:, 1:]]]) if len(tf) else tf
        sub = Mesh(
            dim=mesh.dim,
            h=mesh.h,
            coords=mesh.coords[nodes],
            elements=remap[mesh.elements[el]],
            lattice=mesh.lattice[nodes],
            cells=mesh.cells[el],
            omega=mesh.omega[nodes],
            lam=mesh.lam[nodes],
            gamma=mesh.gamma[nodes],
            top_faces=tf,
            grounded=bool(mesh.lam[nodes].any()),
        )
        out.append(Component(sub, el, nodes))
    return out
