"""Eigenstructure, rank tests, interval gramians and discretization."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import BadStep, QuadratureFailure

logger = logging.getLogger(__name__)

CLUSTER_RTOL = 1e-8


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class EigenDecomposition:
    """Real spectrum of ``A`` sorted from slowest (closest to 0) to fastest.

    ``clusters`` groups indices of eigenvalues equal to within
    ``rtol * max|lambda|``; ``algebraic`` and ``geometric`` hold the
    multiplicity of each cluster.
    """

    values: np.ndarray
    vectors: np.ndarray
    clusters: tuple
    algebraic: np.ndarray
    geometric: np.ndarray
    rtol: float = CLUSTER_RTOL

    @property
    def distinct(self) -> bool:
        return bool((self.algebraic == 1).all())

    @property
    def max_geometric(self) -> int:
        return int(self.geometric.max(initial=0))

    def cluster_values(self) -> np.ndarray:
        return np.array([self.values[list(c)].mean() for c in self.clusters])


def _cluster(values: np.ndarray, rtol: float) -> tuple:
    scale = np.abs(values).max(initial=0.0)
    groups, cur = [], [0] if len(values) else []
    for i in range(1, len(values)):
        if abs(values[i] - values[cur[-1]]) <= rtol * max(scale, np.finfo(float).tiny):
            cur.append(i)
        else:
            groups.append(tuple(cur))
            cur = [i]
    if cur:
        groups.append(tuple(cur))
    return tuple(groups)


def eigendecompose_real(m, K, rtol: float = CLUSTER_RTOL) -> EigenDecomposition:
    """Spectrum of ``A = -M^{-1} K`` through the symmetric similarity.

    ``m`` is the diagonal of ``M``.  Eigenvectors of A are ``M^{-1/2} Q``
    with ``Q`` orthonormal eigenvectors of ``M^{-1/2} K M^{-1/2}``.
    """
    m = np.asarray(m, dtype=float)
    s = 1.0 / np.sqrt(m)
    S = _dense(K) * s[:, None] * s[None, :]
    S = 0.5 * (S + S.T)
    mu, Q = np.linalg.eigh(S)
    lam = -mu  # ascending mu -> descending lambda (slowest first)
    V = s[:, None] * Q
    clusters = _cluster(lam, rtol)
    alg = np.array([len(c) for c in clusters])
    # Q is orthonormal so each cluster's eigenvectors are independent
    geo = np.array([np.linalg.matrix_rank(Q[:, list(c)]) for c in clusters])
    return EigenDecomposition(lam, V, clusters, alg, geo, rtol)


def eigendecompose_general(A, rtol: float = CLUSTER_RTOL) -> EigenDecomposition:
    """General eigensolver path; imaginary parts are discarded after checking."""
    Ad = _dense(A)
    w, V = np.linalg.eig(Ad)
    scale = np.abs(w).max(initial=0.0)
    if np.abs(w.imag).max(initial=0.0) > 1e-8 * max(scale, 1e-300):
        raise ValueError("spectrum is not real")
    order = np.argsort(-w.real, kind="stable")
    lam = w.real[order]
    V = V[:, order].real
    clusters = _cluster(lam, rtol)
    alg = np.array([len(c) for c in clusters])
    geo = []
    n = Ad.shape[0]
    for c in clusters:
        lc = lam[list(c)].mean()
        sv = np.linalg.svd(lc * np.eye(n) - Ad, compute_uv=False)
        tol = n * np.finfo(float).eps * sv[0]
        geo.append(int((sv <= max(tol, rtol * scale)).sum()))
    return EigenDecomposition(lam, V, clusters, alg, np.array(geo), rtol)


def spectrum_check(A, m=None, K=None) -> dict:
    """Compare the general eigensolver with the symmetric similarity."""
    w = np.linalg.eigvals(_dense(A))
    scale = np.abs(w).max(initial=0.0)
    out = {"max_imag_rel": float(np.abs(w.imag).max(initial=0.0) / scale) if scale else 0.0,
           "max_real": float(w.real.max(initial=-np.inf)),
           "n": len(w)}
    if m is not None and K is not None:
        ed = eigendecompose_real(m, K)
        gen = np.sort(w.real)
        sym = np.sort(ed.values)
        out["sym_vs_general_rel"] = float(np.abs(gen - sym).max(initial=0.0) / scale) if scale else 0.0
    return out


# ---------------------------------------------------------------------------
# rank tests
# ---------------------------------------------------------------------------


def numerical_rank(X: np.ndarray) -> tuple[int, float, np.ndarray]:
    """Rank with threshold ``max(shape) * eps * sigma_max``."""
    if X.size == 0:
        return 0, 0.0, np.zeros(0)
    sv = np.linalg.svd(X, compute_uv=False)
    tol = max(X.shape) * np.finfo(float).eps * sv[0]
    return int((sv > tol).sum()), float(tol), sv


def kalman_rank(A, B, spectrum=None) -> tuple[int, float]:
    """Rank of the Krylov matrix ``[B, AB, ..., A^{n-1}B]``.

    The test runs on ``(A - c I) / r``, with ``c`` and ``r`` the centre and
    half-width of the real spectrum, and unit-normalized blocks.  Both
    leave the column space unchanged but keep the matrix far better
    conditioned than raw powers of a stiff ``A``.
    """
    Ad = _dense(A)
    Bd = np.asarray(B, dtype=float).reshape(Ad.shape[0], -1)
    n = Ad.shape[0]
    if not np.any(Bd):
        return 0, 0.0
    if spectrum is None:
        spectrum = np.linalg.eigvals(Ad).real
    lo, hi = float(np.min(spectrum)), float(np.max(spectrum))
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo) or max(abs(c), 1.0)
    As = (Ad - c * np.eye(n)) / r
    blocks, P = [], Bd / np.linalg.norm(Bd)
    for _ in range(n):
        blocks.append(P)
        P = As @ P
        nrm = np.linalg.norm(P)
        if nrm == 0:
            break
        P = P / nrm
    rank, tol, _ = numerical_rank(np.hstack(blocks))
    return rank, tol


@dataclass(frozen=True)
class RankReport:
    n: int
    kalman_rank: int
    kalman_tol: float
    pbh_deficient: tuple
    n_d: int
    cluster_tol: float

    @property
    def full(self) -> bool:
        return self.kalman_rank == self.n

    def to_dict(self) -> dict:
        return {"n": self.n, "kalman_rank": self.kalman_rank, "full_rank": self.full,
                "kalman_tol": self.kalman_tol,
                "pbh_deficient_eigenvalues": list(self.pbh_deficient),
                "N_D": self.n_d, "cluster_rtol": self.cluster_tol}


def rank_tests(A, B=None, C=None, eig: EigenDecomposition | None = None) -> RankReport:
    """Kalman and PBH tests for ``(A, B)`` or, given ``C``, for ``(A', C')``.

    PBH is evaluated at each eigenvalue cluster with the
    ``max(shape) * eps * sigma_max`` rank threshold.
    """
    Ad = _dense(A)
    n = Ad.shape[0]
    if C is not None:
        Ad = Ad.T
        G = np.asarray(C, dtype=float).reshape(-1, n).T
    else:
        G = np.asarray(B, dtype=float).reshape(n, -1)
    if eig is None:
        eig = eigendecompose_general(Ad)
    rank, tol = kalman_rank(Ad, G, eig.values)
    bad = []
    for lam in eig.cluster_values():
        r, _, _ = numerical_rank(np.hstack([lam * np.eye(n) - Ad, G]))
        if r < n:
            bad.append(float(lam))
    return RankReport(n, rank, tol, tuple(bad), eig.max_geometric, eig.rtol)


# ---------------------------------------------------------------------------
# interval gramians
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gramian:
    W: np.ndarray
    kind: str
    t0: float
    t1: float
    step: float

    def min_eig(self) -> float:
        return float(np.linalg.eigvalsh(self.W)[0])

    def is_pd(self, rtol: float = 1e-10) -> bool:
        return self.min_eig() > rtol * float(np.trace(self.W))


def _spectral_radius_bound(A: np.ndarray) -> float:
    return float(np.abs(A).sum(axis=1).max(initial=0.0))


def default_quad_step(A, t0: float, t1: float, accuracy: float = 0.02,
                      max_panels: int = 200_000) -> float:
    """Step resolving ``e^{A s}`` to ``|lambda| h <= accuracy``."""
    rho = _spectral_radius_bound(_dense(A))
    span = t1 - t0
    panels = int(np.ceil(span * rho / accuracy)) if rho > 0 else 2
    panels = min(max(panels + panels % 2, 2), max_panels)
    return span / panels


def gramian_finite(A, G, t0: float, t1: float, quad_step: float | None = None,
                   kind: str = "controllability") -> Gramian:
    """Finite-interval gramian by composite Simpson quadrature.

    controllability: ``int_{t0}^{t1} e^{A(t1-s)} B(s) B(s)' e^{A'(t1-s)} ds``
    observability:   ``int_{t0}^{t1} e^{A'(s-t0)} C(s)' C(s) e^{A(s-t0)} ds``

    ``G`` is ``B`` (n x m) or ``C`` (p x n), constant or callable in t.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    Ad = _dense(A)
    n = Ad.shape[0]
    h = quad_step or default_quad_step(Ad, t0, t1)
    panels = int(np.ceil((t1 - t0) / h))
    panels += panels % 2
    h = (t1 - t0) / panels
    E = sla.expm(Ad * h) if kind == "controllability" else sla.expm(Ad.T * h)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    w *= h / 3.0
    W = np.zeros((n, n))
    if kind == "controllability":
        # node k sits at s = t1 - k h, carrying e^{A k h} B(s)
        P = np.eye(n)
        for k in range(panels + 1):
            s = t1 - k * h
            Bk = G(s) if callable(G) else G
            F = P @ np.asarray(Bk, dtype=float).reshape(n, -1)
            W += w[k] * (F @ F.T)
            P = E @ P
    elif kind == "observability":
        P = np.eye(n)
        for k in range(panels + 1):
            s = t0 + k * h
            Ck = G(s) if callable(G) else G
            F = np.asarray(Ck, dtype=float).reshape(-1, n) @ P.T
            W += w[k] * (F.T @ F)
            P = E @ P
    else:
        raise ValueError(f"unknown gramian kind {kind!r}")
    W = 0.5 * (W + W.T)
    if not np.all(np.isfinite(W)):
        raise QuadratureFailure("non-finite gramian entries")
    return Gramian(W, kind, t0, t1, h)


def gramian_closed_form(A, G, T: float, kind: str = "controllability") -> np.ndarray:
    """``int_0^T e^{As} Q e^{A's} ds`` by the augmented exponential.

    The block exponential ``expm([[-A, Q], [0, A']] tau)`` is formed on a
    short interval ``tau = T / 2^s`` and the result doubled ``s`` times via
    ``W(2 tau) = W(tau) + e^{A tau} W(tau) e^{A' tau}``; this avoids the
    overflow of ``e^{-AT}`` for stiff ``A``.
    """
    Ad = _dense(A)
    n = Ad.shape[0]
    if kind == "observability":
        Ad = Ad.T
        Gm = np.asarray(G, dtype=float).reshape(-1, n)
        Q = Gm.T @ Gm
    else:
        Gm = np.asarray(G, dtype=float).reshape(n, -1)
        Q = Gm @ Gm.T
    norm = np.linalg.norm(Ad, 1) * T
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    tau = T / 2 ** s
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = -Ad
    H[:n, n:] = Q
    H[n:, n:] = Ad.T
    F = sla.expm(H * tau)
    Et = F[n:, n:].T  # e^{A tau}
    W = Et @ F[:n, n:]
    for _ in range(s):
        W = W + Et @ W @ Et.T
        Et = Et @ Et
    return 0.5 * (W + W.T)


def gramian_lyapunov(A, G, kind: str = "controllability") -> np.ndarray:
    """Infinite-horizon gramian from the continuous Lyapunov equation."""
    Ad = _dense(A)
    n = Ad.shape[0]
    if kind == "observability":
        Gm = np.asarray(G, dtype=float).reshape(-1, n)
        W = sla.solve_continuous_lyapunov(Ad.T, -Gm.T @ Gm)
    else:
        Gm = np.asarray(G, dtype=float).reshape(n, -1)
        W = sla.solve_continuous_lyapunov(Ad, -Gm @ Gm.T)
    return 0.5 * (W + W.T)


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------


def discretize(A, B, dt: float, method: str = "bilinear") -> tuple[np.ndarray, np.ndarray]:
    """Discrete ``(A_d, B_d)`` by the bilinear transform or zero-order hold."""
    if not dt > 0:
        raise BadStep(f"step must be positive, got {dt}")
    Ad = _dense(A)
    n = Ad.shape[0]
    Bm = np.asarray(B, dtype=float).reshape(n, -1)
    I = np.eye(n)
    if method == "bilinear":
        R = I - 0.5 * dt * Ad
        if np.linalg.cond(R) > 1.0 / np.finfo(float).eps:
            raise BadStep("singular resolvent in bilinear transform")
        # (I + h/2 A)(I - h/2 A)^{-1}; the factors commute
        Adisc = np.linalg.solve(R, I + 0.5 * dt * Ad)
        # A^{-1}(A_d - I) = h (I - h/2 A)^{-1}, which avoids inverting A
        Bdisc = dt * np.linalg.solve(R, Bm)
        return Adisc, Bdisc
    if method == "zoh":
        m = Bm.shape[1]
        H = np.zeros((n + m, n + m))
        H[:n, :n] = Ad * dt
        H[:n, n:] = Bm * dt
        F = sla.expm(H)
        return F[:n, :n], F[:n, n:]
    raise ValueError(f"unknown discretization {method!r}")


def spectral_radius(M) -> float:
    return float(np.abs(np.linalg.eigvals(_dense(M))).max(initial=0.0))
