"""Capacitance/conductivity assembly and Dirichlet reduction.

Units: mm, mW, K, s, tonne.  Conductivity is mW/(mm K), density tonne/mm^3,
specific heat mJ/(tonne K), so ``rho*c`` is mJ/(mm^3 K).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import BadElement, ConfigError
from .mesh import Mesh, local_offsets

logger = logging.getLogger(__name__)

_GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class MaterialProps:
    k: float = 250.0
    rho: float = 2.7e-9
    c: float = 9e8
    kappa: np.ndarray | None = None

    def __post_init__(self):
        # k = 0 is allowed (a non-conducting body) but rho and c must be positive
        if not (self.k >= 0 and self.rho > 0 and self.c > 0):
            raise ConfigError("material needs k >= 0 and positive rho, c")
        if self.kappa is not None:
            kap = np.asarray(self.kappa, dtype=float)
            if not np.allclose(kap, kap.T):
                raise ConfigError("kappa must be symmetric")
            if np.linalg.eigvalsh(kap).min() < 0:
                raise ConfigError("kappa must be positive semidefinite")
            object.__setattr__(self, "kappa", kap)

    @property
    def rho_c(self) -> float:
        return self.rho * self.c

    @property
    def diffusivity(self) -> float:
        return self.k / self.rho_c

    def kappa_matrix(self, dim: int) -> np.ndarray:
        if self.kappa is not None:
            return self.kappa[:dim, :dim]
        return self.k * np.eye(dim)

    @classmethod
    def from_dict(cls, doc: dict) -> "MaterialProps":
        allowed = {"k_mW_per_mmK", "rho_tonne_per_mm3", "c_mJ_per_tonneK", "kappa"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown material keys: {sorted(unknown)}")
        return cls(
            k=float(doc.get("k_mW_per_mmK", 250.0)),
            rho=float(doc.get("rho_tonne_per_mm3", 2.7e-9)),
            c=float(doc.get("c_mJ_per_tonneK", 9e8)),
            kappa=doc.get("kappa"),
        )

    def to_dict(self) -> dict:
        doc = {"k_mW_per_mmK": self.k, "rho_tonne_per_mm3": self.rho,
               "c_mJ_per_tonneK": self.c}
        if self.kappa is not None:
            doc["kappa"] = np.asarray(self.kappa).tolist()
        return doc


# room-temperature model values and melting-point "truth" values
LTI_ALUMINUM = MaterialProps(k=250.0, rho=2.7e-9, c=9e8)
TRUTH_ALUMINUM = MaterialProps(k=200.0, rho=2.5e-9, c=1.248e9)


def _shape(dim: int, xi: np.ndarray):
    """Multilinear shape functions and reference gradients at ``xi``."""
    off = 2 * local_offsets(dim) - 1  # +-1 corner signs
    n = np.ones(len(off))
    dn = np.ones((dim, len(off)))
    for a in range(dim):
        fa = 0.5 * (1 + off[:, a] * xi[a])
        n *= fa
        for b in range(dim):
            dn[b] *= 0.5 * off[:, a] if a == b else fa
    return n, dn


def element_matrices(coords: np.ndarray, material: MaterialProps):
    """Conductivity matrix and lumped capacitance of one quad/hex element.

    2x2(x2) Gauss quadrature; lumping by row sums of the consistent mass.
    """
    coords = np.asarray(coords, dtype=float)
    nen, dim = coords.shape
    if nen != 2 ** dim:
        raise BadElement(f"expected {2 ** dim} nodes, got {nen}")
    kap = material.kappa_matrix(dim)
    ke = np.zeros((nen, nen))
    me = np.zeros((nen, nen))
    for idx in np.ndindex(*(2,) * dim):
        xi = _GP[list(idx)]
        n, dn = _shape(dim, xi)
        jac = dn @ coords
        det = np.linalg.det(jac)
        if not det > 0:
            raise BadElement(f"non-positive Jacobian {det:g}")
        grad = np.linalg.solve(jac, dn)
        ke += grad.T @ kap @ grad * det
        me += np.outer(n, n) * material.rho_c * det
    ke = 0.5 * (ke + ke.T)
    # cube edge couplings vanish analytically; keep them exactly zero
    ke[np.abs(ke) < 1e-13 * np.abs(ke).max(initial=0.0)] = 0.0
    return ke, me.sum(axis=1)


def surface_load_weights(face_coords: np.ndarray) -> np.ndarray:
    """``int N' dS`` over a straight edge (2-D) or bilinear quad face (3-D)."""
    fc = np.asarray(face_coords, dtype=float)
    w = np.zeros(len(fc))
    if len(fc) == 2:
        length = np.linalg.norm(fc[1] - fc[0])
        for g in _GP:
            w += 0.5 * np.array([1 - g, 1 + g]) * 0.5 * length
        return w
    if len(fc) != 4:
        raise BadElement("faces must have 2 or 4 nodes")
    for idx in np.ndindex(2, 2):
        xi = _GP[list(idx)]
        n, dn = _shape(2, xi)
        t = dn @ fc
        w += n * np.linalg.norm(np.cross(t[0], t[1]))
    return w


def face_quadrature(face_coords: np.ndarray, order: int = 4):
    """Gauss points on a face: (points, weights * shape values per node).

    Returns ``pts`` (nq x space_dim) and ``wn`` (nq x n_face_nodes), so that
    ``sum_q f(pts[q]) * wn[q]`` approximates ``int f N' dS``.
    """
    fc = np.asarray(face_coords, dtype=float)
    g, gw = np.polynomial.legendre.leggauss(order)
    if len(fc) == 2:
        length = np.linalg.norm(fc[1] - fc[0])
        n = np.column_stack([0.5 * (1 - g), 0.5 * (1 + g)])
        pts = n @ fc
        return pts, n * (gw * 0.5 * length)[:, None]
    pts, wn = [], []
    for i, a in enumerate(g):
        for j, b in enumerate(g):
            n, dn = _shape(2, np.array([a, b]))
            t = dn @ fc
            area = np.linalg.norm(np.cross(t[0], t[1]))
            pts.append(n @ fc)
            wn.append(n * gw[i] * gw[j] * area)
    return np.array(pts), np.array(wn)


def assemble_global(mesh: Mesh, material: MaterialProps):
    """Unreduced lumped capacitance vector and sparse conductivity matrix."""
    ref = mesh.coords[mesh.elements[0]]
    # structured lattice: every element is a translate of the first
    ke, me = element_matrices(ref - ref[0], material)
    n = mesh.n_nodes
    rows, cols, vals = kernels.scatter_coo(mesh.elements, ke)
    # explicit zeros are kept: the stored pattern is the element connectivity
    k = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    k.sum_duplicates()
    k.sort_indices()
    m = kernels.scatter_vector(mesh.elements, me, n)
    return m, k


@dataclass(frozen=True)
class GlobalThermalSystem:
    """Reduced thermal network ``M x' = -K x + load + inputs``."""

    m: np.ndarray
    K: sp.csr_matrix
    free: np.ndarray
    constrained: np.ndarray
    T0: float
    load: np.ndarray
    n_global: int
    grounded: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def global_to_free(self) -> np.ndarray:
        g = -np.ones(self.n_global, dtype=np.int64)
        g[self.free] = np.arange(len(self.free))
        return g


def reduce_dirichlet(m: np.ndarray, K: sp.spmatrix, lam: np.ndarray, T0: float = 0.0
                     ) -> GlobalThermalSystem:
    """Eliminate Lambda nodes held at ``T0``."""
    K = sp.csr_matrix(K)
    n = K.shape[0]
    lam = np.asarray(lam)
    if lam.dtype == bool:
        lam_mask = lam
    else:
        lam_mask = np.zeros(n, dtype=bool)
        lam_mask[lam] = True
    free = np.flatnonzero(~lam_mask)
    cons = np.flatnonzero(lam_mask)
    if not len(cons):
        logger.warning("no Dirichlet nodes: A has a zero eigenvalue")
    kff = K[free][:, free].tocsr()
    kff.sort_indices()
    kfc = K[free][:, cons]
    load = -(kfc @ np.full(len(cons), float(T0))) if len(cons) else np.zeros(len(free))
    return GlobalThermalSystem(
        m=np.asarray(m, dtype=float)[free],
        K=kff,
        free=free,
        constrained=cons,
        T0=float(T0),
        load=np.asarray(load, dtype=float) + 0.0,
        n_global=n,
        grounded=bool(len(cons)),
    )


def thermal_system(mesh: Mesh, material: MaterialProps, T0: float = 0.0) -> GlobalThermalSystem:
    """Assemble and reduce in one call."""
    m, k = assemble_global(mesh, material)
    return reduce_dirichlet(m, k, mesh.lam, T0)
