"""Discrete-time control and observation energy, modal reach bounds, sweeps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BadHorizon

logger = logging.getLogger(__name__)

REACH_RTOL = 1e-6


def _as2d(x, n: int, axis: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(n, -1) if axis == 0 else x.reshape(-1, n)


def discrete_gramians(Ad, Bd, Cd, K: int) -> tuple[np.ndarray, np.ndarray]:
    """``W_c = sum_{k<K} A^k B B' A'^k`` and ``W_o = sum_{k<=K} A'^k C' C A^k``."""
    if K < 1:
        raise BadHorizon(f"horizon must be >= 1, got {K}")
    Ad = np.asarray(Ad, dtype=float)
    n = Ad.shape[0]
    Wc = kernels.gramian_sum(Ad, _as2d(Bd, n, 0), K)
    Wo = kernels.gramian_sum(Ad.T.copy(), _as2d(Cd, n, 1).T.copy(), K + 1)
    return 0.5 * (Wc + Wc.T), 0.5 * (Wo + Wo.T)


def truncated_pinv(W: np.ndarray) -> tuple[np.ndarray, dict]:
    """Pseudo-inverse dropping singular values below ``n * eps * s_max``."""
    U, s, Vt = np.linalg.svd(W)
    tol = W.shape[0] * np.finfo(float).eps * (s[0] if len(s) else 0.0)
    keep = s > tol
    inv = (Vt[keep].T / s[keep]) @ U[:, keep].T
    info = {"threshold": float(tol), "retained": int(keep.sum()),
            "discarded": int((~keep).sum()),
            "smallest_retained_sv": float(s[keep][-1]) if keep.any() else 0.0,
            "largest_sv": float(s[0]) if len(s) else 0.0}
    return inv, info


@dataclass
class EnergyResult:
    energy: float
    x_f: np.ndarray
    K: int
    inputs: np.ndarray | None = None
    residual: float = 0.0
    reachable: bool = True
    check: float | None = None
    conditioning: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"energy": self.energy, "K": self.K, "relative_residual": self.residual,
               "reachable": self.reachable, "conditioning": self.conditioning,
               "reach_rtol": REACH_RTOL}
        if self.check is not None:
            doc["simulated_energy"] = self.check
        if not self.reachable:
            doc["flag"] = "x_f outside numerically reachable subspace"
        return doc


def simulate(Ad, Bd, u: np.ndarray, x0=None) -> np.ndarray:
    """Final state after applying ``u[k]`` for k = 0..K-1."""
    Ad = np.asarray(Ad, dtype=float)
    n = Ad.shape[0]
    Bm = _as2d(Bd, n, 0)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    for uk in u:
        x = Ad @ x + Bm @ uk
    return x


def min_control_energy(Ad, Bd, x_f, K: int, Wc: np.ndarray | None = None) -> EnergyResult:
    """Least-norm input steering 0 to ``x_f`` in ``K`` steps and its energy."""
    if K < 1:
        raise BadHorizon(f"horizon must be >= 1, got {K}")
    Ad = np.asarray(Ad, dtype=float)
    n = Ad.shape[0]
    Bm = _as2d(Bd, n, 0)
    x_f = np.asarray(x_f, dtype=float)
    if Wc is None:
        Wc = 0.5 * (kernels.gramian_sum(Ad, Bm, K) + kernels.gramian_sum(Ad, Bm, K).T)
    Winv, info = truncated_pinv(Wc)
    lam = Winv @ x_f
    energy = float(x_f @ lam)
    # u[k] = B' (A')^{K-1-k} lam, built backwards
    u = np.empty((K, Bm.shape[1]))
    v = lam.copy()
    for k in range(K - 1, -1, -1):
        u[k] = Bm.T @ v
        v = Ad.T @ v
    reached = simulate(Ad, Bm, u)
    scale = np.linalg.norm(x_f)
    res = float(np.linalg.norm(reached - x_f) / scale) if scale > 0 else float(np.linalg.norm(reached))
    ok = res <= REACH_RTOL
    if not ok:
        logger.warning("x_f outside numerically reachable subspace (residual %.3g)", res)
    return EnergyResult(energy, x_f, K, u, res, ok, float((u ** 2).sum()), info)


def observation_energy(Ad, Cd, x_f, K: int, Wo: np.ndarray | None = None) -> EnergyResult:
    """Output energy ``sum_{k=0}^{K} |C A^k x_f|^2``, from the gramian and by simulation."""
    if K < 1:
        raise BadHorizon(f"horizon must be >= 1, got {K}")
    Ad = np.asarray(Ad, dtype=float)
    n = Ad.shape[0]
    Cm = _as2d(Cd, n, 1)
    x_f = np.asarray(x_f, dtype=float)
    if Wo is None:
        G = kernels.gramian_sum(Ad.T.copy(), Cm.T.copy(), K + 1)
        Wo = 0.5 * (G + G.T)
    energy = float(x_f @ Wo @ x_f)
    x, sim = x_f.copy(), 0.0
    for _ in range(K + 1):
        y = Cm @ x
        sim += float(y @ y)
        x = Ad @ x
    return EnergyResult(energy, x_f, K, check=sim)


# ---------------------------------------------------------------------------
# modal bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalBoundTable:
    """Per-mode reach bounds, sorted by ``eta`` descending."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    eta: np.ndarray
    order: np.ndarray
    clipped: bool

    def rows(self) -> list[tuple[int, float, float]]:
        return [(int(i), float(self.eigenvalues[i]), float(self.eta[i])) for i in self.order]

    def top(self) -> np.ndarray:
        return self.vectors[:, self.order[0]]

    def bottom(self) -> np.ndarray:
        return self.vectors[:, self.order[-1]]


def modal_decomposition(Ad) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Real eigenpairs of ``A_d`` and ``V^{-1}``."""
    w, V = np.linalg.eig(np.asarray(Ad, dtype=float))
    scale = np.abs(w).max(initial=1.0)
    if np.abs(w.imag).max(initial=0.0) > 1e-8 * scale:
        raise ValueError("discrete spectrum is not real")
    w, V = w.real, V.real
    V = V / np.linalg.norm(V, axis=0)
    return w, V, np.linalg.inv(V)


def modal_bounds(Ad, Bd, K: int, clip: bool = False, modal=None) -> ModalBoundTable:
    """``eta_i* = sqrt(sum_k lambda_i^{2(K-k-1)} |row_i(V^{-1} B_d[k])|^2)``.

    The sum runs over k = 0..K, so the last term carries ``lambda^{-2}``;
    ``clip=True`` stops at k = K-1.  ``Bd`` may be a constant matrix, a
    sequence of K+1 matrices, or a callable of the step index.
    """
    if K < 1:
        raise BadHorizon(f"horizon must be >= 1, got {K}")
    w, V, Vinv = modal if modal is not None else modal_decomposition(Ad)
    n = len(w)
    last = K - 1 if clip else K
    with np.errstate(over="ignore", divide="ignore"):
        if callable(Bd) or np.ndim(Bd) == 3:
            total = np.zeros(n)
            for k in range(last + 1):
                Bk = Bd(k) if callable(Bd) else Bd[k]
                r2 = ((Vinv @ _as2d(Bk, n, 0)) ** 2).sum(axis=1)
                total += np.abs(w) ** (2.0 * (K - k - 1)) * r2
        else:
            r2 = ((Vinv @ _as2d(Bd, n, 0)) ** 2).sum(axis=1)
            a2 = w ** 2
            # sum_{j=-1}^{K-1} a2^j with j = K-k-1, k in [0, last]
            j_lo = K - last - 1
            geo = np.empty(n)
            for i, a in enumerate(a2):
                if a == 1.0:
                    geo[i] = K - j_lo
                else:
                    geo[i] = (a ** j_lo - a ** K) / (1.0 - a)
            total = geo * r2
    eta = np.sqrt(total)
    order = np.argsort(-eta, kind="stable")
    return ModalBoundTable(w, V, eta, order, clip)


def realized_modal(Ad, Bd, u: np.ndarray, modal=None) -> np.ndarray:
    """Modal coordinates ``|V^{-1} x[K]|`` reached by input sequence ``u``."""
    w, V, Vinv = modal if modal is not None else modal_decomposition(Ad)
    return np.abs(Vinv @ simulate(Ad, Bd, u))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepResult:
    radii: np.ndarray
    energy: np.ndarray
    counts: np.ndarray
    normalization: str
    K: int

    def strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.energy) > 0))

    def non_increasing(self, plateaus: int = 1, rise_rtol: float = 0.01) -> bool:
        """Every step falls, except up to ``plateaus`` near-flat steps.

        A near-flat step may rise by at most ``rise_rtol`` of the previous
        value.
        """
        d = np.diff(self.energy)
        rises = d > 0
        if rises.sum() > plateaus:
            return False
        return bool(np.all(d[rises] <= rise_rtol * np.abs(self.energy[:-1][rises])))

    def growth_ratio(self) -> float:
        return float(self.energy[-1] / self.energy[0])

    def to_csv_rows(self) -> list[tuple]:
        return [(float(r), float(e), int(c)) for r, e, c in zip(self.radii, self.energy, self.counts)]


def radial_target(coords: np.ndarray, center, radius: float, normalization: str) -> np.ndarray:
    """Target state: nodes within ``radius`` of ``center`` set, others zero."""
    d = np.linalg.norm(coords - np.asarray(center, dtype=float), axis=1)
    inside = d <= radius * (1 + 1e-12)
    x = inside.astype(float)
    if normalization == "unit_norm":
        if inside.any():
            x /= np.sqrt(inside.sum())
    elif normalization != "const_T":
        raise ValueError(f"unknown normalization {normalization!r}")
    return x


def energy_sweep(coords: np.ndarray, Ad, Cd, center, radii, normalization: str = "const_T",
                 K: int = 1000, Wo: np.ndarray | None = None) -> SweepResult:
    """Observation energy of radial targets of growing radius.

    ``coords`` are the free-node coordinates matching the rows of ``Ad``.
    """
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    if Wo is None:
        n = np.asarray(Ad).shape[0]
        Cm = _as2d(Cd, n, 1)
        G = kernels.gramian_sum(np.asarray(Ad, dtype=float).T.copy(), Cm.T.copy(), K + 1)
        Wo = 0.5 * (G + G.T)
    energies, counts = [], []
    for r in radii:
        x = radial_target(coords, center, r, normalization)
        if not x.any():
            raise ValueError(f"radius {r} encloses no node")
        energies.append(float(x @ Wo @ x))
        counts.append(int((x != 0).sum()))
    return SweepResult(radii, np.array(energies), np.array(counts), normalization, K)
