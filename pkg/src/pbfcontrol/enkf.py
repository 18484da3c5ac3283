"""Ensemble Kalman filter with input-noise injection and a truth simulator.

The truth model uses the exact Gaussian surface flux on the same mesh with
its own material constants and is integrated by implicit Euler on a fine
step.  The filter runs on the bilinear-discretized case-1 model.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConfigError, IntegratorFailure, TooFewMembers
from .fem import LTI_ALUMINUM, TRUTH_ALUMINUM, MaterialProps, thermal_system
from .gramian import discretize
from .mesh import Mesh
from .system import (
    CameraConfig,
    LaserConfig,
    SurfaceQuadrature,
    build_A,
    build_B0,
    build_C_fixed,
    quantized_input,
    surface_load,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    """Continuous noise powers; discrete variances are ``power / dt``."""

    process_power: float = 1e5
    measurement_power: float = 1.0

    def __post_init__(self):
        if self.process_power < 0 or self.measurement_power < 0:
            raise ConfigError("noise powers must be >= 0")

    def q(self, dt: float) -> float:
        return self.process_power / dt

    def r(self, dt: float) -> float:
        return self.measurement_power / dt


@dataclass
class EnsembleState:
    Z: np.ndarray  # n x N
    rngs: list
    k: int = 0

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.Z.mean(axis=1)


def make_ensemble(x0: np.ndarray, N: int, seed_seq: np.random.SeedSequence) -> EnsembleState:
    if N < 2:
        raise TooFewMembers(f"ensemble needs N >= 2, got {N}")
    rngs = [np.random.default_rng(s) for s in seed_seq.spawn(N)]
    Z = np.repeat(np.asarray(x0, dtype=float)[:, None], N, axis=1)
    return EnsembleState(Z, rngs)


# ---------------------------------------------------------------------------
# filter steps
# ---------------------------------------------------------------------------


def propagate_ensemble(ens: EnsembleState, Ad: np.ndarray, Bd: np.ndarray, u: np.ndarray,
                       q: float) -> EnsembleState:
    """``z_i <- A_d z_i + B_d (u + w_i)`` with ``w_i ~ N(0, q I)`` per member."""
    m = Bd.shape[1]
    if q > 0:
        sd = np.sqrt(q)
        W = np.column_stack([r.standard_normal(m) * sd for r in ens.rngs])
    else:
        W = np.zeros((m, ens.N))
    ens.Z = Ad @ ens.Z + Bd @ (u[:, None] + W)
    ens.k += 1
    return ens


def perturb_measurements(ens: EnsembleState, y: np.ndarray, r: float) -> np.ndarray:
    """Member measurements ``y + v_i`` with ``v_i ~ N(0, r I)``."""
    p = len(y)
    if r > 0:
        sd = np.sqrt(r)
        V = np.column_stack([g.standard_normal(p) * sd for g in ens.rngs])
    else:
        V = np.zeros((p, ens.N))
    return y[:, None] + V


def sample_covariances(Z: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unbiased sample covariances of the state and measurement ensembles."""
    N = Z.shape[1]
    if N < 2 or Y.shape[1] < 2:
        raise TooFewMembers(f"ensemble needs N >= 2, got {N}")
    # deviations about a member shift first, so identical members give exactly zero
    dz = Z - Z[:, :1]
    dz -= dz.mean(axis=1, keepdims=True)
    dy = Y - Y[:, :1]
    dy -= dy.mean(axis=1, keepdims=True)
    P = dz @ dz.T / (N - 1)
    R = dy @ dy.T / (Y.shape[1] - 1)
    return 0.5 * (P + P.T), 0.5 * (R + R.T)


def _pinv(S: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(S)
    tol = S.shape[0] * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    keep = s > tol
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def enkf_update(Z: np.ndarray, C: np.ndarray, Y: np.ndarray, P: np.ndarray, R: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """``Z + P C' (C P C' + R)^+ (Y - C Z)``; returns (members, mean)."""
    S = C @ P @ C.T + R
    gain = P @ C.T @ _pinv(0.5 * (S + S.T))
    Zn = Z + gain @ (Y - C @ Z)
    return Zn, Zn.mean(axis=1)


# ---------------------------------------------------------------------------
# truth simulator
# ---------------------------------------------------------------------------


@dataclass
class TruthRun:
    times: np.ndarray
    states: np.ndarray  # (K+1) x n
    measurements: np.ndarray  # K x p, at times[1:]
    dt_fine: float


def reference_simulate(mesh: Mesh, material: MaterialProps, lasers: LaserConfig,
                       noise: NoiseModel, C: np.ndarray, dt: float, t_final: float,
                       dt_fine: float | None = None, rng: np.random.Generator | None = None,
                       x0: np.ndarray | None = None, T0: float = 0.0) -> TruthRun:
    """Implicit-Euler integration of the exact-flux model with noise.

    Process noise enters like the filter's input noise: a per-element
    flux disturbance with variance ``q = power/dt``, held over each coarse
    step.  Measurements ``C x(t_k) + v_k`` use variance ``power/dt``.
    """
    if not (dt > 0 and t_final > 0):
        raise ConfigError("dt and t_final must be positive")
    dt_fine = dt / 10 if dt_fine is None else dt_fine
    if dt_fine > dt / 10 * (1 + 1e-12):
        raise ConfigError("dt_fine must be <= dt / 10")
    sub = int(round(dt / dt_fine))
    dt_fine = dt / sub
    steps = int(round(t_final / dt))
    rng = rng if rng is not None else np.random.default_rng(0)
    sysm = thermal_system(mesh, material, T0)
    n = sysm.n
    quad = SurfaceQuadrature(mesh, sysm)
    B0 = build_B0(mesh, sysm)
    lhs = splu(sp.csc_matrix(sp.diags(sysm.m) + dt_fine * sysm.K))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    states = [x.copy()]
    ys = []
    q, r = noise.q(dt), noise.r(dt)
    times = dt * np.arange(steps + 1)
    base = float(np.linalg.norm(x)) + 1.0
    for k in range(steps):
        w = rng.standard_normal(B0.shape[1]) * np.sqrt(q) if q > 0 else np.zeros(B0.shape[1])
        dist = B0 @ w
        for j in range(1, sub + 1):
            t = times[k] + j * dt_fine
            rhs = sysm.m * x + dt_fine * (surface_load(quad, lasers, t) + sysm.load + dist)
            x = lhs.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise IntegratorFailure(f"non-finite state at step {k}")
        nx = float(np.linalg.norm(x))
        if nx > 1e12 * base:
            raise IntegratorFailure(f"state growth {nx:.3g} at step {k}")
        states.append(x.copy())
        v = rng.standard_normal(C.shape[0]) * np.sqrt(r) if r > 0 else np.zeros(C.shape[0])
        ys.append(C @ x + v)
    return TruthRun(times, np.array(states), np.array(ys).reshape(steps, C.shape[0]), dt_fine)


# ---------------------------------------------------------------------------
# full run
# ---------------------------------------------------------------------------


@dataclass
class FilterConfig:
    mesh: Mesh
    lasers: LaserConfig
    camera: CameraConfig = field(default_factory=CameraConfig)
    model_material: MaterialProps = LTI_ALUMINUM
    truth_material: MaterialProps = TRUTH_ALUMINUM
    noise: NoiseModel = field(default_factory=NoiseModel)
    filter_noise: NoiseModel | None = None
    N: int = 100
    dt: float = 1e-4
    t_final: float = 4e-3
    fine_factor: int = 10
    input_samples: int = 8
    quantization: str = "average"
    seed: int = 0


@dataclass
class FilterRun:
    times: np.ndarray
    estimate: np.ndarray
    open_loop: np.ndarray
    truth: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def error(self) -> np.ndarray:
        return self.truth - self.estimate

    @property
    def error_ol(self) -> np.ndarray:
        return self.truth - self.open_loop

    def rms_series(self, closed: bool = True) -> np.ndarray:
        e = self.error if closed else self.error_ol
        return np.sqrt((e ** 2).mean(axis=1))

    def summary(self) -> dict:
        e, eo = self.error, self.error_ol
        rms_cl = float(np.sqrt((e ** 2).mean()))
        rms_ol = float(np.sqrt((eo ** 2).mean()))
        max_cl = float(np.abs(e).max())
        max_ol = float(np.abs(eo).max())
        return {"rms_cl": rms_cl, "rms_ol": rms_ol,
                "rms_ratio": rms_cl / rms_ol if rms_ol > 0 else float("nan"),
                "max_cl": max_cl, "max_ol": max_ol,
                "max_ratio": max_cl / max_ol if max_ol > 0 else float("nan"),
                "seed": self.seed, **self.meta}

    def late_trend(self, window: int, bound_rtol: float = 0.1) -> dict:
        """Trend of the node-RMS error over the final third of the run.

        Both series are smoothed by a moving average of ``window`` steps
        (one raster half-period removes the sweep ripple).  The open-loop
        error is *growing* when the smoothed series never decreases over
        the final third; the closed-loop error is *bounded* when its
        final-third peak stays within ``1 + bound_rtol`` of the earlier peak.
        """
        if window < 1:
            raise ConfigError("window must be >= 1")
        if len(self.times) - window + 1 < 6:
            raise ConfigError("run too short for the smoothing window")
        kern = np.ones(window) / window
        ol = np.convolve(self.rms_series(False), kern, "valid")
        cl = np.convolve(self.rms_series(True), kern, "valid")
        s = 2 * len(ol) // 3
        cl_late = float(cl[s:].max() / cl[:s].max())
        return {"ol_growing": bool(np.all(np.diff(ol[s:]) >= 0)),
                "ol_growth": float(ol[-1] / ol[s]),
                "cl_bounded": cl_late <= 1.0 + bound_rtol,
                "cl_late_peak_ratio": cl_late}


def part_a_analogue(seed: int = 0, **overrides) -> FilterConfig:
    """Desk-scale analogue of the heat-trapping spool case study.

    A 2 mm wide, 0.8 mm tall 2-D spool on 1/15 mm elements (303 nodes),
    one laser rastering at 954 mm/s, all exposed nodes observed, truth
    process noise 1e5 mW and filter process noise 1e8 mW.
    """
    from .mesh import build_mesh
    from .paths import SineRaster
    from .shapes import spool
    from .system import Laser

    h = 1.0 / 15.0
    mesh = build_mesh(spool(30, 10, 3, 6, 3, voxel_size=h), h)
    lasers = LaserConfig((Laser(1e6, 0.01, SineRaster(954.0, 0.2, 1.8)),))
    doc = dict(mesh=mesh, lasers=lasers,
               camera=CameraConfig("fixed", center=(1.0, 0.0), extent=100.0),
               noise=NoiseModel(1e5, 1.0), filter_noise=NoiseModel(1e8, 1.0),
               N=100, dt=1e-4, t_final=4e-3, seed=seed)
    doc.update(overrides)
    return FilterConfig(**doc)


def raster_window(lasers: LaserConfig, dt: float) -> int:
    """Steps in one raster half-period of the first laser (at least 1)."""
    path = lasers.lasers[0].path
    span = getattr(path, "x_max", 0.0) - getattr(path, "x_min", 0.0)
    v = getattr(path, "v", 0.0)
    if span <= 0 or v <= 0:
        return 1
    return max(1, int(round(span / v / dt)))


def step_input(mesh: Mesh, lasers: LaserConfig, t: float, dt: float, samples: int = 8,
               rule: str = "average", quad=None) -> np.ndarray:
    """Quantized input averaged over ``[t, t + dt]`` at midpoint samples."""
    ts = t + dt * (np.arange(samples) + 0.5) / samples
    return np.mean([quantized_input(mesh, lasers, s, rule, quad) for s in ts], axis=0)


def run_filter(cfg: FilterConfig) -> FilterRun:
    """Truth run, open-loop model and EnKF estimate on a shared time grid.

    States are temperature rises over the base plate (``T0 = 0``).
    """
    if cfg.N < 2:
        raise TooFewMembers(f"ensemble needs N >= 2, got {cfg.N}")
    mesh = cfg.mesh
    model = thermal_system(mesh, cfg.model_material)
    A = build_A(model).toarray()
    B = build_B0(mesh, model) / model.m[:, None]
    C = build_C_fixed(mesh, model, cfg.camera)
    if C.shape[1] != A.shape[0]:
        raise ConfigError("output map does not match state dimension")
    Ad, Bd = discretize(A, B, cfg.dt, "bilinear")
    root = np.random.SeedSequence(cfg.seed)
    s_truth, s_ens = root.spawn(2)
    truth = reference_simulate(mesh, cfg.truth_material, cfg.lasers, cfg.noise, C, cfg.dt,
                               cfg.t_final, cfg.dt / cfg.fine_factor,
                               np.random.default_rng(s_truth))
    fnoise = cfg.filter_noise or cfg.noise
    q, r = fnoise.q(cfg.dt), fnoise.r(cfg.dt)
    n = A.shape[0]
    quad = SurfaceQuadrature(mesh, None)
    ens = make_ensemble(np.zeros(n), cfg.N, s_ens)
    x_ol = np.zeros(n)
    est, ol = [ens.mean.copy()], [x_ol.copy()]
    for k in range(len(truth.times) - 1):
        u = step_input(mesh, cfg.lasers, truth.times[k], cfg.dt, cfg.input_samples,
                       cfg.quantization, quad)
        x_ol = Ad @ x_ol + Bd @ u
        propagate_ensemble(ens, Ad, Bd, u, q)
        Y = perturb_measurements(ens, truth.measurements[k], r)
        P, R = sample_covariances(ens.Z, Y)
        ens.Z, zhat = enkf_update(ens.Z, C, Y, P, R)
        est.append(zhat)
        ol.append(x_ol.copy())
    return FilterRun(truth.times, np.array(est), np.array(ol), truth.states, cfg.seed,
                     {"n": n, "p": C.shape[0], "m": B.shape[1], "N": cfg.N, "dt": cfg.dt,
                      "dt_fine": truth.dt_fine, "q": q, "r": r})
