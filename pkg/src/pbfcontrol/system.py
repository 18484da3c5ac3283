"""State-space construction for the four actuation/measurement cases.

Case 1: uniform-per-element flux input (A.A), fixed camera (M.2).
Case 2: A.A input, coaxial camera (M.3).
Case 3: linearized Gaussian input (A.C), fixed camera.
Case 4: A.C input, coaxial camera.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt

from . import kernels
from .errors import BadOperatingPoint, ConfigError, EmptyFOV, NoExposedSurface
from .fem import GlobalThermalSystem, face_quadrature, surface_load_weights
from .mesh import Mesh
from .paths import path_from_dict, path_to_dict

logger = logging.getLogger(__name__)

FOOTPRINT_SIGMAS = 6.0


@dataclass(frozen=True)
class Laser:
    power: float
    variance: float
    path: Callable

    def __post_init__(self):
        if self.power < 0:
            raise BadOperatingPoint("laser power must be >= 0")
        if not self.variance > 0:
            raise BadOperatingPoint("laser variance must be > 0")


@dataclass(frozen=True)
class LaserConfig:
    lasers: tuple

    def __post_init__(self):
        object.__setattr__(self, "lasers", tuple(self.lasers))

    def __len__(self):
        return len(self.lasers)

    def __iter__(self):
        return iter(self.lasers)

    @property
    def u0(self) -> np.ndarray:
        """Operating point ``[P1, var1, P2, var2, ...]``."""
        return np.array([v for las in self.lasers for v in (las.power, las.variance)])

    @classmethod
    def from_dict(cls, doc) -> "LaserConfig":
        items = doc["lasers"] if isinstance(doc, dict) else doc
        out = []
        for d in items:
            unknown = set(d) - {"power_mW", "variance_mm2", "path"}
            if unknown:
                raise ConfigError(f"unknown laser keys: {sorted(unknown)}")
            try:
                out.append(Laser(float(d["power_mW"]), float(d["variance_mm2"]),
                                 path_from_dict(d["path"])))
            except KeyError as exc:
                raise ConfigError(f"laser entry missing {exc}") from exc
        return cls(tuple(out))

    def to_dict(self) -> dict:
        return {"lasers": [{"power_mW": las.power, "variance_mm2": las.variance,
                            "path": path_to_dict(las.path)} for las in self.lasers]}


@dataclass(frozen=True)
class CameraConfig:
    """Fixed or coaxial camera window on the top surface.

    ``extent`` is the full window width (mm); ``pyrometer=True`` selects the
    single nearest top-surface node instead of a window.
    """

    mode: str = "fixed"
    center: tuple = (0.0, 0.0)
    extent: float = np.inf
    pyrometer: bool = False
    eps: float = 1e-9
    tau: float | None = None
    laser: int = 0

    def __post_init__(self):
        if self.mode not in ("fixed", "coaxial"):
            raise ConfigError(f"camera mode must be fixed|coaxial, got {self.mode!r}")
        if self.extent < 0 or not self.eps > 0:
            raise ConfigError("camera extent must be >= 0 and eps > 0")
        if self.tau is not None and not self.tau > 0:
            raise ConfigError("camera ramp tau must be > 0")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def from_dict(cls, doc: dict) -> "CameraConfig":
        allowed = {"mode", "center_mm", "extent_mm", "pyrometer", "eps_C", "tau_s", "laser"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown camera keys: {sorted(unknown)}")
        ext = doc.get("extent_mm")
        return cls(
            mode=doc.get("mode", "fixed"),
            center=tuple(doc.get("center_mm", (0.0, 0.0))),
            extent=np.inf if ext is None else float(ext),
            pyrometer=bool(doc.get("pyrometer", False)),
            eps=float(doc.get("eps_C", 1e-9)),
            tau=doc.get("tau_s"),
            laser=int(doc.get("laser", 0)),
        )


@dataclass(frozen=True)
class TopHat:
    """Time grid and ramp parameters for the smoothed top-hat entries.

    ``tau`` is the ramp time constant: the steepest slope of a ramp is
    ``1/tau``.  Window membership is sampled every ``tau / resolution``
    seconds over ``[t0 - 2 tau, t1 + 2 tau]``.
    """

    tau: float
    t0: float
    t1: float
    resolution: int = 8

    def grid(self) -> np.ndarray:
        step = self.tau / self.resolution
        lo, hi = self.t0 - 2 * self.tau, self.t1 + 2 * self.tau
        return lo + step * np.arange(int(np.ceil((hi - lo) / step)) + 1)


def smooth_ramp(s):
    """C1 cubic ramp from 0 at ``s<=0`` to 1 at ``s>=1.5``; slope <= 1."""
    x = np.clip(np.asarray(s, dtype=float) / 1.5, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


class _RampTable:
    """Per-node in-window depth (s) on a time grid, interpolated in t."""

    def __init__(self, inside: np.ndarray, times: np.ndarray, tau: float):
        # inside: (n_times, n_nodes) bool
        step = times[1] - times[0]
        padded = np.zeros((inside.shape[0] + 2, inside.shape[1]), dtype=bool)
        padded[1:-1] = inside
        depth = np.empty(inside.shape)
        for j in range(inside.shape[1]):
            d = distance_transform_edt(padded[:, j])[1:-1]
            depth[:, j] = np.maximum(d - 0.5, 0.0) * step
        self.times = times
        self.depth = depth
        self.tau = tau

    def __call__(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            d = self.depth[0]
        elif t >= ts[-1]:
            d = self.depth[-1]
        else:
            i = min(int((t - ts[0]) / (ts[1] - ts[0])), len(ts) - 2)
            w = (t - ts[i]) / (ts[i + 1] - ts[i])
            d = (1 - w) * self.depth[i] + w * self.depth[i + 1]
        return smooth_ramp(d / self.tau)


def _surface_xy(mesh: Mesh, nodes: np.ndarray) -> np.ndarray:
    c = mesh.coords[nodes]
    if mesh.dim == 2:
        return np.column_stack([c[:, 0], np.zeros(len(c))])
    return c[:, :2]


def omega_free_nodes(mesh: Mesh, sys: GlobalThermalSystem) -> np.ndarray:
    """Global indices of free nodes on Omega, in index order."""
    keep = mesh.omega.copy()
    keep[sys.constrained] = False
    return np.flatnonzero(keep)


# ---------------------------------------------------------------------------
# A
# ---------------------------------------------------------------------------


def build_A(sys: GlobalThermalSystem) -> sp.csr_matrix:
    """``A = -M^{-1} K`` keeping the stored sparsity pattern of K."""
    K = sys.K.tocsr()
    rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
    data = -K.data / sys.m[rows]
    A = sp.csr_matrix((data, K.indices.copy(), K.indptr.copy()), shape=K.shape)
    return A


# ---------------------------------------------------------------------------
# inputs
# ---------------------------------------------------------------------------


def gaussian_flux(points, lasers: LaserConfig, t: float) -> np.ndarray:
    """Summed Gaussian surface flux (mW/mm^2) at ``points`` (k x 2 or k)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] == 1:
        pts = np.column_stack([pts[:, 0], np.zeros(len(pts))])
    out = np.zeros(len(pts))
    for las in lasers:
        xc, yc = las.path(t)
        r2 = (pts[:, 0] - xc) ** 2 + (pts[:, 1] - yc) ** 2
        out += las.power / np.sqrt(2 * np.pi * las.variance) * np.exp(-0.5 * r2 / las.variance)
    return out


def top_face_weights(mesh: Mesh) -> np.ndarray:
    """``int N' dS`` for each top face (n_faces x nodes_per_face)."""
    fn = mesh.top_face_nodes
    if not len(fn):
        return np.zeros((0, 2 ** (mesh.dim - 1)))
    # all faces are congruent on the structured lattice
    w = surface_load_weights(mesh.coords[fn[0]])
    return np.tile(w, (len(fn), 1))


def build_B0(mesh: Mesh, sys: GlobalThermalSystem) -> np.ndarray:
    """Unscaled load map: column e scatters face e's weights (before M^-1)."""
    fn = mesh.top_face_nodes
    if not len(fn):
        raise NoExposedSurface("no element has a top face on Omega")
    w = top_face_weights(mesh)
    g2f = sys.global_to_free
    B0 = np.zeros((sys.n, len(fn)))
    for e in range(len(fn)):
        rows = g2f[fn[e]]
        ok = rows >= 0
        np.add.at(B0[:, e], rows[ok], w[e, ok])
    return B0


def build_B_uniform(mesh: Mesh, sys: GlobalThermalSystem) -> np.ndarray:
    """Mode A.A input map, one column per top-face element."""
    return build_B0(mesh, sys) / sys.m[:, None]


def face_centroids(mesh: Mesh) -> np.ndarray:
    fn = mesh.top_face_nodes
    c = mesh.coords[fn].mean(axis=1)
    if mesh.dim == 2:
        return np.column_stack([c[:, 0], np.zeros(len(c))])
    return c[:, :2]


def quantized_input(mesh: Mesh, lasers: LaserConfig, t: float, rule: str = "average",
                    quad: "SurfaceQuadrature | None" = None) -> np.ndarray:
    """A.A input: one uniform intensity per top face.

    ``rule="average"`` uses the face-averaged Gaussian intensity, which
    conserves absorbed power on coarse meshes; ``rule="centroid"`` samples
    the intensity at each face centroid.
    """
    if rule == "centroid":
        return gaussian_flux(face_centroids(mesh), lasers, t)
    if rule != "average":
        raise ConfigError(f"unknown quantization rule {rule!r}")
    q = quad if quad is not None else SurfaceQuadrature(mesh, None)
    vals = gaussian_flux(np.column_stack([q.qx, q.qy]), lasers, t)
    area = np.bincount(q.face_of_q, weights=q.wq)
    return np.bincount(q.face_of_q, weights=vals * q.wq) / area


class SurfaceQuadrature:
    """Gauss points of all top faces, flattened, with per-node weights."""

    def __init__(self, mesh: Mesh, sys: GlobalThermalSystem | None, order: int = 4):
        fn = mesh.top_face_nodes
        pts0, wn = face_quadrature(mesh.coords[fn[0]], order)
        shift = mesh.coords[fn[:, 0]] - mesh.coords[fn[0, 0]]
        pts = pts0[None, :, :] + shift[:, None, :]
        if mesh.dim == 2:
            xy = np.stack([pts[..., 0], np.zeros(pts.shape[:2])], axis=-1)
        else:
            xy = pts[..., :2]
        nq = pts0.shape[0]
        self.nq = nq
        self.qx = xy[..., 0].ravel()
        self.qy = xy[..., 1].ravel()
        self.face_of_q = np.repeat(np.arange(len(fn)), nq)
        self.wn = np.tile(wn, (len(fn), 1))  # (F*nq, nodes_per_face)
        self.wq = self.wn.sum(axis=1)  # plain quadrature weights
        if sys is None:
            self.rows, self.n = None, 0
            return
        g2f = sys.global_to_free
        self.rows = g2f[np.repeat(fn, nq, axis=0)]  # (F*nq, nodes_per_face)
        self.n = sys.n

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Scatter ``sum_q values[q] * N(q) dS`` onto free nodes."""
        contrib = values[:, None] * self.wn
        ok = self.rows >= 0
        return np.bincount(self.rows[ok], weights=contrib[ok], minlength=self.n)


def surface_load(quad: SurfaceQuadrature, lasers: LaserConfig, t: float,
                 powers=None) -> np.ndarray:
    """Exact-Gaussian (A.B) nodal load ``R(t)`` in mW, before M^-1."""
    vals = np.zeros(len(quad.qx))
    for i, las in enumerate(lasers):
        p = las.power if powers is None else powers[i]
        xc, yc = las.path(t)
        g, _ = kernels.gaussian_weighted(quad.qx, quad.qy, np.ones_like(quad.qx),
                                         xc, yc, las.variance, p)
        vals += p * g
    return quad.integrate(vals)


class GaussianInputMap:
    """Mode A.C evaluator ``t -> B(t)`` with columns [dr/dP1, dr/dvar1, ...]."""

    def __init__(self, mesh: Mesh, sys: GlobalThermalSystem, lasers: LaserConfig,
                 tophat: TopHat, eps: float = 1e-12, order: int = 4):
        for las in lasers:
            if not las.variance > 0:
                raise BadOperatingPoint("operating-point variance must be > 0")
        self.lasers = lasers
        self.m = sys.m
        self.eps = eps
        self.quad = SurfaceQuadrature(mesh, sys, order)
        self.nodes = omega_free_nodes(mesh, sys)
        self.rows = sys.global_to_free[self.nodes]
        xy = _surface_xy(mesh, self.nodes)
        times = tophat.grid()
        self.ramps = []
        for las in lasers:
            xc, yc = las.path(times)
            r = np.hypot(xy[None, :, 0] - np.asarray(xc)[:, None],
                         xy[None, :, 1] - np.asarray(yc)[:, None])
            inside = r < FOOTPRINT_SIGMAS * np.sqrt(las.variance)
            self.ramps.append(_RampTable(inside, times, tophat.tau))
        self.shape = (sys.n, 2 * len(lasers))

    def pattern(self) -> np.ndarray:
        pat = np.zeros(self.shape, dtype=bool)
        pat[self.rows, :] = True
        return pat

    def full_columns(self, t: float) -> np.ndarray:
        """Unramped M^-1 [dr/dP, dr/dvar] at ``t`` for every laser."""
        q = self.quad
        cols = np.zeros(self.shape)
        for i, las in enumerate(self.lasers):
            xc, yc = las.path(t)
            g, dv = kernels.gaussian_weighted(q.qx, q.qy, np.ones_like(q.qx),
                                              xc, yc, las.variance, las.power)
            cols[:, 2 * i] = q.integrate(g)
            cols[:, 2 * i + 1] = q.integrate(dv)
        return cols / self.m[:, None]

    def __call__(self, t: float) -> np.ndarray:
        full = self.full_columns(t)
        B = np.zeros(self.shape)
        for i in range(len(self.lasers)):
            h = self.ramps[i](t)
            for c in (2 * i, 2 * i + 1):
                sub = full[self.rows, c]
                B[self.rows, c] = self.eps + h * (sub - self.eps)
        return B


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def _window_nodes(xy: np.ndarray, center, extent: float) -> np.ndarray:
    half = 0.5 * extent + 1e-9 * max(1.0, extent if np.isfinite(extent) else 1.0)
    return (np.abs(xy[:, 0] - center[0]) <= half) & (np.abs(xy[:, 1] - center[1]) <= half)


def _nearest(xy: np.ndarray, point) -> int:
    d = np.hypot(xy[:, 0] - point[0], xy[:, 1] - point[1])
    return int(np.flatnonzero(d <= d.min() + 1e-12)[0])


def build_C_fixed(mesh: Mesh, sys: GlobalThermalSystem, camera: CameraConfig) -> np.ndarray:
    """Mode M.2 selection matrix: one unit row per Omega node in the window."""
    nodes = omega_free_nodes(mesh, sys)
    if not len(nodes):
        raise EmptyFOV("no free Omega nodes")
    xy = _surface_xy(mesh, nodes)
    if camera.pyrometer:
        sel = nodes[[_nearest(xy, camera.center)]]
    else:
        sel = nodes[_window_nodes(xy, camera.center, camera.extent)]
    if not len(sel):
        raise EmptyFOV(f"camera window at {camera.center} sees no Omega node")
    C = np.zeros((len(sel), sys.n))
    C[np.arange(len(sel)), sys.global_to_free[sel]] = 1.0
    return C


class CoaxialOutputMap:
    """Mode M.3 evaluator ``t -> C(t)``.

    One row per free Omega node (a single row for a pyrometer).  Entries ramp
    between ``eps`` and 1 as the node enters and leaves the window that
    follows the laser.
    """

    def __init__(self, mesh: Mesh, sys: GlobalThermalSystem, camera: CameraConfig,
                 lasers: LaserConfig, tophat: TopHat):
        nodes = omega_free_nodes(mesh, sys)
        if not len(nodes):
            raise EmptyFOV("no free Omega nodes")
        self.nodes = nodes
        self.cols = sys.global_to_free[nodes]
        self.eps = camera.eps
        self.pyrometer = camera.pyrometer
        xy = _surface_xy(mesh, nodes)
        times = tophat.grid()
        path = lasers.lasers[camera.laser].path
        xc, yc = path(times)
        cx = np.asarray(xc) + camera.center[0]
        cy = np.asarray(yc) + camera.center[1]
        if camera.pyrometer:
            # window of one node spacing around the nearest node
            extent = mesh.h
        else:
            extent = camera.extent
        half = 0.5 * extent + 1e-9
        inside = (np.abs(xy[None, :, 0] - cx[:, None]) <= half) & \
                 (np.abs(xy[None, :, 1] - cy[:, None]) <= half)
        self.ramp = _RampTable(inside, times, tophat.tau)
        p = 1 if camera.pyrometer else len(nodes)
        self.shape = (p, sys.n)

    def pattern(self) -> np.ndarray:
        pat = np.zeros(self.shape, dtype=bool)
        if self.pyrometer:
            pat[0, self.cols] = True
        else:
            pat[np.arange(len(self.cols)), self.cols] = True
        return pat

    def __call__(self, t: float) -> np.ndarray:
        h = self.ramp(t)
        vals = self.eps + (1.0 - self.eps) * h
        C = np.zeros(self.shape)
        if self.pyrometer:
            C[0, self.cols] = vals
        else:
            C[np.arange(len(self.cols)), self.cols] = vals
        return C


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------


@dataclass
class CaseSystem:
    case_id: int
    A: sp.csr_matrix
    B: object
    C: object
    input_kind: str
    u0: np.ndarray | None = None
    mesh: Mesh | None = None
    sys: GlobalThermalSystem | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def B_varies(self) -> bool:
        return callable(self.B)

    @property
    def C_varies(self) -> bool:
        return callable(self.C)

    def B_at(self, t: float = 0.0) -> np.ndarray:
        return self.B(t) if callable(self.B) else self.B

    def C_at(self, t: float = 0.0) -> np.ndarray:
        return self.C(t) if callable(self.C) else self.C

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def B_pattern(self) -> np.ndarray:
        return self.B.pattern() if callable(self.B) else self.B != 0

    def C_pattern(self) -> np.ndarray:
        return self.C.pattern() if callable(self.C) else self.C != 0


def default_tophat(lasers: LaserConfig | None, t1: float, dt: float) -> TopHat:
    return TopHat(tau=5 * dt, t0=0.0, t1=t1)


def build_case(case_id: int, mesh: Mesh, sys: GlobalThermalSystem,
               lasers: LaserConfig | None = None, camera: CameraConfig | None = None,
               tophat: TopHat | None = None, eps_B: float = 1e-12) -> CaseSystem:
    """Assemble ``(A, B, C)`` for one of the four cases."""
    if case_id not in (1, 2, 3, 4):
        raise ConfigError(f"case must be 1-4, got {case_id}")
    A = build_A(sys)
    camera = camera or CameraConfig()
    needs_time = case_id != 1
    if needs_time and tophat is None:
        raise ConfigError("cases 2-4 need a TopHat time grid")
    if case_id in (1, 2):
        B = build_B_uniform(mesh, sys)
        kind, u0 = "element_flux", None
    else:
        if lasers is None:
            raise ConfigError("cases 3-4 need a laser configuration")
        B = GaussianInputMap(mesh, sys, lasers, tophat, eps=eps_B)
        kind, u0 = "power_variance", lasers.u0
    if case_id in (1, 3):
        if camera.mode != "fixed":
            camera = CameraConfig("fixed", camera.center, camera.extent, camera.pyrometer,
                                  camera.eps, camera.tau, camera.laser)
        C = build_C_fixed(mesh, sys, camera)
    else:
        if lasers is None:
            raise ConfigError("cases 2 and 4 need a laser path for the coaxial camera")
        if camera.tau is not None:
            tophat = TopHat(camera.tau, tophat.t0, tophat.t1, tophat.resolution)
        C = CoaxialOutputMap(mesh, sys, camera, lasers, tophat)
    return CaseSystem(case_id, A, B, C, kind, u0, mesh, sys)
