"""Graph-theoretic controllability: matchings, SC/SO verdicts, strong SC.

Edge convention: ``i -> j`` whenever ``A[j, i]`` is a stored entry (``x_j``
depends on ``x_i``).  Input ``u`` drives state ``i`` when ``B[i, u]`` is
stored; state ``i`` feeds output ``y`` when ``C[y, i]`` is stored.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from . import kernels
from .errors import TooLarge

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SystemGraph:
    """Directed graph of the sparsity pattern of ``(A, B, C)``.

    ``adj`` is the n x n boolean pattern of A (``adj[j, i]`` means edge
    i -> j).  ``drivers`` and ``observers`` are boolean patterns of B
    (n x m) and C (p x n).
    """

    adj: sp.csr_matrix
    drivers: np.ndarray
    observers: np.ndarray

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.drivers.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.observers.shape[0]

    def driver_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.drivers.any(axis=1))

    def observer_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.observers.any(axis=0))

    def has_self_loops(self) -> bool:
        return bool(self.adj.diagonal().all())

    def is_symmetric(self) -> bool:
        return (self.adj != self.adj.T).nnz == 0

    def edges(self) -> list[tuple[int, int]]:
        """State edges as (source, target), sorted."""
        coo = self.adj.tocoo()
        return sorted(zip(coo.col.tolist(), coo.row.tolist()))


def _pattern(x) -> np.ndarray:
    """Boolean pattern; for sparse input every stored entry counts, zeros included."""
    if sp.issparse(x):
        s = sp.csr_matrix(x, copy=True)
        s.data = np.ones(len(s.data))
        return s.toarray() != 0
    x = np.asarray(x)
    return x if x.dtype == bool else x != 0


def graph_from_pattern(A, B=None, C=None) -> SystemGraph:
    """Build the graph from explicit patterns or from a ``CaseSystem``.

    Stored zeros of a sparse ``A`` count as edges, so the graph reflects the
    structural (element connectivity) pattern rather than cancellations.
    For a ``CaseSystem`` the patterns of time-varying maps count their
    floor values as nonzero.
    """
    if hasattr(A, "B_pattern"):
        case = A
        A, B, C = case.A, case.B_pattern(), case.C_pattern()
    if sp.issparse(A):
        adj = sp.csr_matrix(A, copy=True)
        adj.data = np.ones(len(adj.data), dtype=bool)
        adj = adj.astype(bool)
    else:
        adj = sp.csr_matrix(np.asarray(A) != 0)
    adj.sort_indices()
    n = adj.shape[0]
    Bp = np.zeros((n, 0), dtype=bool) if B is None else _pattern(B).reshape(n, -1)
    Cp = np.zeros((0, n), dtype=bool) if C is None else _pattern(C).reshape(-1, n)
    return SystemGraph(adj, Bp, Cp)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Matching:
    size: int
    pairs: tuple  # (source, target) state edges in the matching
    n: int

    @property
    def perfect(self) -> bool:
        return self.size == self.n


def maximum_matching(graph: SystemGraph) -> Matching:
    """Maximum matching of the out-copy/in-copy bipartite graph of A."""
    out_adj = graph.adj.T.tocsr()  # row i lists targets j of edges i -> j
    out_adj.sort_indices()
    match = kernels.bipartite_matching(out_adj.indptr, out_adj.indices, graph.n, graph.n)
    pairs = tuple((int(i), int(j)) for i, j in enumerate(match) if j >= 0)
    return Matching(len(pairs), pairs, graph.n)


def self_loop_matching(graph: SystemGraph) -> Matching | None:
    """The self-loop certificate: every node matched to itself, if possible."""
    if not graph.has_self_loops():
        return None
    return Matching(graph.n, tuple((i, i) for i in range(graph.n)), graph.n)


def accessible(graph: SystemGraph) -> np.ndarray:
    """Mask of state nodes reachable from at least one input."""
    n = graph.n
    seen = np.zeros(n, dtype=bool)
    roots = graph.driver_nodes()
    if not len(roots):
        return seen
    out_adj = graph.adj.T.tocsr()
    # add a virtual root wired to all driven nodes
    hub = sp.csr_matrix((np.ones(len(roots), dtype=bool), (np.zeros(len(roots), int), roots)),
                        shape=(1, n))
    big = sp.bmat([[None, hub], [sp.csr_matrix((n, 1), dtype=bool), out_adj]]).tocsr()
    order = breadth_first_order(big, 0, directed=True, return_predecessors=False)
    seen[order[order > 0] - 1] = True
    return seen


def observable_nodes(graph: SystemGraph) -> np.ndarray:
    """Mask of state nodes with a path to at least one output."""
    dual = SystemGraph(graph.adj.T.tocsr(), graph.observers.T, graph.drivers.T)
    return accessible(dual)


# ---------------------------------------------------------------------------
# SC / SO verdicts
# ---------------------------------------------------------------------------


@dataclass
class StructuralReport:
    sc: bool
    so: bool
    sc_graph: bool
    so_graph: bool
    matching_size: int
    n: int
    n_components: int
    components_driven: list
    components_observed: list
    driver_nodes: list
    observer_nodes: list
    case_id: int | None = None
    notes: list = field(default_factory=list)

    @property
    def n_d_lower_bound(self) -> int:
        return self.n_components

    def to_dict(self) -> dict:
        return {
            "case": self.case_id,
            "SC": self.sc, "SO": self.so,
            "SC_graph": self.sc_graph, "SO_graph": self.so_graph,
            "matching_size": self.matching_size, "n": self.n,
            "perfect_matching": self.matching_size == self.n,
            "N_D_lower_bound": self.n_d_lower_bound,
            "components": self.n_components,
            "components_driven": self.components_driven,
            "components_observed": self.components_observed,
            "driver_nodes": self.driver_nodes,
            "observer_nodes": self.observer_nodes,
            "notes": self.notes,
        }


def free_components(mesh, sys) -> list[np.ndarray]:
    """Free-node index sets of each connected part of the mesh."""
    from .mesh import connected_components
    g2f = sys.global_to_free
    out = []
    for comp in connected_components(mesh):
        idx = g2f[comp.node_ids]
        out.append(np.sort(idx[idx >= 0]))
    return out


def structural_report(graph: SystemGraph, components: list[np.ndarray],
                      omega: np.ndarray | None = None, case_id: int | None = None
                      ) -> StructuralReport:
    """SC/SO verdicts from the per-component surface-node rule.

    ``components`` lists the free-node indices of each connected part and
    ``omega`` marks free nodes on the top surface (all nodes if omitted).
    The rule verdict (every part has a driven, respectively observed,
    surface node) is reported next to the graph verdict (perfect matching
    plus every node reachable from an input / reaching an output).
    """
    n = graph.n
    omega = np.ones(n, dtype=bool) if omega is None else np.asarray(omega, dtype=bool)
    drv = np.zeros(n, dtype=bool)
    drv[graph.driver_nodes()] = True
    obs = np.zeros(n, dtype=bool)
    obs[graph.observer_nodes()] = True
    driven = [bool((drv[c] & omega[c]).any()) for c in components]
    observed = [bool((obs[c] & omega[c]).any()) for c in components]
    m = maximum_matching(graph)
    acc = accessible(graph)
    reach = observable_nodes(graph)
    notes = []
    covered = np.zeros(n, dtype=bool)
    for c in components:
        covered[c] = True
    if not covered.all():
        notes.append("components do not cover every state node")
    return StructuralReport(
        sc=bool(driven) and all(driven) and bool(covered.all()),
        so=bool(observed) and all(observed) and bool(covered.all()),
        sc_graph=m.size == n and bool(acc.all()),
        so_graph=m.size == n and bool(reach.all()),
        matching_size=m.size,
        n=n,
        n_components=len(components),
        components_driven=driven,
        components_observed=observed,
        driver_nodes=graph.driver_nodes().tolist(),
        observer_nodes=graph.observer_nodes().tolist(),
        case_id=case_id,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# strong structural controllability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SscReport:
    g0: bool
    g1: bool
    witness: tuple | None
    failed: str | None
    g0_examined: int
    g1_examined: int

    @property
    def ssc(self) -> bool:
        return self.g0 and self.g1

    def to_dict(self) -> dict:
        return {"SSC": self.ssc, "G0": self.g0, "G1": self.g1,
                "failed": self.failed,
                "witness": None if self.witness is None else list(self.witness),
                "G0_subsets_examined": self.g0_examined,
                "G1_closed_subsets_examined": self.g1_examined}


def _masks(graph: SystemGraph):
    n = graph.n
    out = graph.adj.T.tocsr()
    succ = np.zeros(n + graph.n_inputs, dtype=np.int64)
    pred = np.zeros(n, dtype=np.int64)
    for i in range(n):
        for j in out.indices[out.indptr[i]:out.indptr[i + 1]]:
            succ[i] |= np.int64(1) << int(j)
            pred[j] |= np.int64(1) << i
    for u in range(graph.n_inputs):
        for j in np.flatnonzero(graph.drivers[:, u]):
            succ[n + u] |= np.int64(1) << int(j)
            pred[j] |= np.int64(1) << n
    return succ, pred


def _bits(mask: int) -> tuple:
    return tuple(i for i in range(mask.bit_length()) if (mask >> i) & 1)


def ssc_check(graph: SystemGraph, n_limit: int = 20) -> SscReport:
    """Exhaustive G0/G1 check over all subsets of state nodes."""
    n = graph.n
    if n > n_limit:
        raise TooLarge(f"{n} state nodes exceeds exhaustive limit {n_limit}")
    if n > 62:
        raise TooLarge("bitmask enumeration supports at most 62 nodes")
    succ, pred = _masks(graph)
    w0, c0 = kernels.g0_scan(succ, n)
    w1, c1 = kernels.g1_scan(pred, succ, n)
    if w0 >= 0:
        witness, failed = _bits(w0), "G0"
    elif w1 >= 0:
        witness, failed = _bits(w1), "G1"
    else:
        witness, failed = None, None
    return SscReport(w0 < 0, w1 < 0, witness, failed, c0, c1)


# ---------------------------------------------------------------------------
# random instantiation
# ---------------------------------------------------------------------------


def _scaled_kalman_rank(A: np.ndarray, B: np.ndarray, spectrum=None) -> tuple[int, float]:
    from .gramian import kalman_rank
    return kalman_rank(A, B, spectrum)


def instantiate(A_pattern, B_pattern, rng: np.random.Generator, replicate: int = 1,
                physical: bool | None = None):
    """Draw one numeric realization of the patterns.

    Physical draws keep the thermal model class: ``A = -M^{-1} K`` with
    ``M`` diagonal in [0.5, 1.5] and ``K`` symmetric, diagonally dominant,
    with off-diagonal entries in -[0.5, 1.5] on the pattern.  Otherwise
    entries are uniform in [0.5, 1.5] with random signs.  With
    ``replicate > 1`` one block is drawn and repeated along the diagonal.
    """
    Ap = _pattern(A_pattern)
    nb = Ap.shape[0]
    if physical is None:
        physical = bool((Ap == Ap.T).all() and np.diag(Ap).all())
    if physical:
        off = np.triu(Ap, 1)
        K = np.where(off, -rng.uniform(0.5, 1.5, size=off.shape), 0.0)
        K = K + K.T
        K[np.diag_indices(nb)] = -K.sum(axis=1) + rng.uniform(0.5, 1.5, size=nb)
        m = rng.uniform(0.5, 1.5, size=nb)
        A = -K / m[:, None]
    else:
        A = np.where(Ap, rng.uniform(0.5, 1.5, Ap.shape) * rng.choice([-1.0, 1.0], Ap.shape), 0.0)
    if replicate > 1:
        A = np.kron(np.eye(replicate), A)
    Bp = _pattern(B_pattern).reshape(A.shape[0], -1)
    B = np.where(Bp, rng.uniform(0.5, 1.5, Bp.shape), 0.0)
    return A, B


@dataclass(frozen=True)
class InstantiationResult:
    trials: int
    controllable: int
    seed: int
    ranks: tuple

    @property
    def fraction(self) -> float:
        return self.controllable / self.trials if self.trials else 0.0

    def to_dict(self) -> dict:
        return {"trials": self.trials, "controllable": self.controllable,
                "fraction": self.fraction, "seed": self.seed,
                "min_rank": min(self.ranks) if self.ranks else None}


def instantiate_and_rank(A_pattern, B_pattern, seed: int = 0, trials: int = 100,
                         replicate: int = 1, physical: bool | None = None,
                         dual: bool = False) -> InstantiationResult:
    """Fraction of random pattern realizations passing the Kalman rank test.

    ``dual=True`` treats ``B_pattern`` as an output pattern (p x n) and
    tests observability of the transposed pair.
    """
    if dual:
        B_pattern = _pattern(B_pattern).T
        A_pattern = _pattern(A_pattern).T
    n = _pattern(A_pattern).shape[0] * replicate
    if n > 200:
        raise TooLarge("dense rank tests are limited to n <= 200")
    streams = np.random.SeedSequence(seed).spawn(trials)
    ok, ranks = 0, []
    for ss in streams:
        A, B = instantiate(A_pattern, B_pattern, np.random.default_rng(ss), replicate, physical)
        r, _ = _scaled_kalman_rank(A, B)
        ranks.append(r)
        ok += r == n
    return InstantiationResult(trials, ok, seed, tuple(ranks))
