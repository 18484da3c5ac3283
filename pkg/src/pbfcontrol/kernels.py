"""Hot inner loops with a compiled path and a pure-numpy fallback.

Each public function here dispatches on :func:`pbfcontrol._accel.numba_enabled`
at call time.  Both paths must agree bit-for-bit on integer results and to
rounding on float results; ``tests/test_kernels.py`` checks this.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit, numba_enabled

# ---------------------------------------------------------------------------
# element scatter
# ---------------------------------------------------------------------------


@njit
def _scatter_coo_nb(conn, ke):
    ne, k = conn.shape
    rows = np.empty(ne * k * k, dtype=np.int64)
    cols = np.empty(ne * k * k, dtype=np.int64)
    vals = np.empty(ne * k * k, dtype=np.float64)
    p = 0
    for e in range(ne):
        for a in range(k):
            for b in range(k):
                rows[p] = conn[e, a]
                cols[p] = conn[e, b]
                vals[p] = ke[a, b]
                p += 1
    return rows, cols, vals


def _scatter_coo_np(conn, ke):
    k = conn.shape[1]
    rows = np.repeat(conn, k, axis=1).ravel()
    cols = np.tile(conn, (1, k)).ravel()
    vals = np.tile(ke.ravel(), len(conn))
    return rows, cols, vals


def scatter_coo(conn: np.ndarray, ke: np.ndarray):
    """COO triplets of the element matrix ``ke`` scattered over ``conn``."""
    conn = np.ascontiguousarray(conn, dtype=np.int64)
    ke = np.ascontiguousarray(ke, dtype=np.float64)
    if numba_enabled():
        return _scatter_coo_nb(conn, ke)
    return _scatter_coo_np(conn, ke)


@njit
def _scatter_vec_nb(conn, ve, n):
    out = np.zeros(n)
    for e in range(conn.shape[0]):
        for a in range(conn.shape[1]):
            out[conn[e, a]] += ve[a]
    return out


def scatter_vector(conn: np.ndarray, ve: np.ndarray, n: int) -> np.ndarray:
    """Sum the per-element vector ``ve`` into a length-``n`` global vector."""
    conn = np.ascontiguousarray(conn, dtype=np.int64)
    ve = np.ascontiguousarray(ve, dtype=np.float64)
    if numba_enabled():
        return _scatter_vec_nb(conn, ve, n)
    return np.bincount(conn.ravel(), weights=np.tile(ve, len(conn)), minlength=n)


# ---------------------------------------------------------------------------
# Gaussian surface quadrature (A.A centroid sampling and A.C derivatives)
# ---------------------------------------------------------------------------


@njit
def _gauss_face_nb(qx, qy, qw, xc, yc, var, power):
    """Per quadrature point: value and d/dvar of one Gaussian beam."""
    nq = qx.shape[0]
    val = np.empty(nq)
    dvar = np.empty(nq)
    norm = 1.0 / np.sqrt(2.0 * np.pi * var)
    for q in range(nq):
        r2 = (qx[q] - xc) ** 2 + (qy[q] - yc) ** 2
        g = norm * np.exp(-0.5 * r2 / var)
        val[q] = qw[q] * g
        dvar[q] = qw[q] * power * g * (-0.5 / var + 0.5 * r2 / (var * var))
    return val, dvar


def _gauss_face_np(qx, qy, qw, xc, yc, var, power):
    r2 = (qx - xc) ** 2 + (qy - yc) ** 2
    g = np.exp(-0.5 * r2 / var) / np.sqrt(2.0 * np.pi * var)
    return qw * g, qw * power * g * (-0.5 / var + 0.5 * r2 / (var * var))


def gaussian_weighted(qx, qy, qw, xc, yc, var, power):
    """Weighted Gaussian intensity per unit power and its variance derivative.

    ``qw`` already carries quadrature weight times shape-function value, so
    summing the returned arrays per node gives the columns of the linearized
    input map.
    """
    args = (np.ascontiguousarray(qx, dtype=np.float64),
            np.ascontiguousarray(qy, dtype=np.float64),
            np.ascontiguousarray(qw, dtype=np.float64),
            float(xc), float(yc), float(var), float(power))
    if numba_enabled():
        return _gauss_face_nb(*args)
    return _gauss_face_np(*args)


# ---------------------------------------------------------------------------
# strong structural controllability: exhaustive subset scans on bitmasks
# ---------------------------------------------------------------------------


@njit
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit
def _g0_scan_nb(succ, n_state):
    """First nonempty subset of state nodes violating G0, or -1."""
    nj = succ.shape[0]
    full = (np.int64(1) << n_state)
    for mask in range(1, full):
        ok = False
        for j in range(nj):
            if _popcount(succ[j] & mask) == 1:
                ok = True
                break
        if not ok:
            return mask, mask
    return -1, full - 1


@njit
def _g1_scan_nb(pred, succ, n_state):
    """First predecessor-closed subset violating G1, or -1.

    ``pred[i]`` is the predecessor mask of state node ``i`` over the state
    nodes, with bit ``n_state`` set when an input node precedes it.
    """
    nj = succ.shape[0]
    full = (np.int64(1) << n_state)
    count = 0
    for mask in range(1, full):
        closed = True
        m = mask
        i = 0
        while m:
            if m & 1:
                if pred[i] & ~mask:
                    closed = False
                    break
            m >>= 1
            i += 1
        if not closed:
            continue
        count += 1
        ok = False
        for j in range(nj):
            if j < n_state and (mask >> j) & 1:
                continue
            if _popcount(succ[j] & mask) == 1:
                ok = True
                break
        if not ok:
            return mask, count
    return -1, count


def _popcount_np(a: np.ndarray) -> np.ndarray:
    a = a.astype(np.uint64)
    c = np.zeros(a.shape, dtype=np.int64)
    while np.any(a):
        c += (a & np.uint64(1)).astype(np.int64)
        a >>= np.uint64(1)
    return c


_CHUNK = 1 << 16


def _g0_scan_np(succ, n_state):
    full = 1 << n_state
    for start in range(1, full, _CHUNK):
        masks = np.arange(start, min(full, start + _CHUNK), dtype=np.int64)
        hit = np.zeros(len(masks), dtype=bool)
        for s in succ:
            hit |= _popcount_np(masks & s) == 1
        bad = np.flatnonzero(~hit)
        if len(bad):
            m = int(masks[bad[0]])
            return m, m
    return -1, full - 1


def _g1_scan_np(pred, succ, n_state):
    full = 1 << n_state
    count = 0
    for start in range(1, full, _CHUNK):
        masks = np.arange(start, min(full, start + _CHUNK), dtype=np.int64)
        closed = np.ones(len(masks), dtype=bool)
        for i in range(n_state):
            inside = (masks >> i) & 1 == 1
            closed &= ~inside | ((pred[i] & ~masks) == 0)
        cand = masks[closed]
        if not len(cand):
            continue
        hit = np.zeros(len(cand), dtype=bool)
        for j, s in enumerate(succ):
            if j < n_state:
                outside = (cand >> j) & 1 == 0
            else:
                outside = np.ones(len(cand), dtype=bool)
            hit |= outside & (_popcount_np(cand & s) == 1)
        bad = np.flatnonzero(~hit)
        if len(bad):
            return int(cand[bad[0]]), count + int(bad[0]) + 1
        count += len(cand)
    return -1, count


def g0_scan(succ: np.ndarray, n_state: int) -> tuple[int, int]:
    """Scan subsets in increasing mask order for a G0 violation.

    Returns ``(witness_mask or -1, subsets_examined)``.
    """
    succ = np.ascontiguousarray(succ, dtype=np.int64)
    if numba_enabled():
        w, c = _g0_scan_nb(succ, n_state)
        return int(w), int(c)
    return _g0_scan_np(succ, n_state)


def g1_scan(pred: np.ndarray, succ: np.ndarray, n_state: int) -> tuple[int, int]:
    """Scan predecessor-closed subsets for a G1 violation.

    Returns ``(witness_mask or -1, closed_subsets_examined)``.
    """
    pred = np.ascontiguousarray(pred, dtype=np.int64)
    succ = np.ascontiguousarray(succ, dtype=np.int64)
    if numba_enabled():
        w, c = _g1_scan_nb(pred, succ, n_state)
        return int(w), int(c)
    return _g1_scan_np(pred, succ, n_state)


# ---------------------------------------------------------------------------
# bipartite matching (out-copy -> in-copy), augmenting paths
# ---------------------------------------------------------------------------


@njit
def _matching_nb(indptr, indices, n_left, n_right):
    match_r = -np.ones(n_right, dtype=np.int64)
    match_l = -np.ones(n_left, dtype=np.int64)
    stack_u = np.empty(n_left, dtype=np.int64)
    stack_p = np.empty(n_left, dtype=np.int64)
    visited = np.zeros(n_right, dtype=np.int64)
    stamp = 0
    for root in range(n_left):
        # cheap greedy first
        done = False
        for p in range(indptr[root], indptr[root + 1]):
            v = indices[p]
            if match_r[v] < 0:
                match_r[v] = root
                match_l[root] = v
                done = True
                break
        if done:
            continue
        stamp += 1
        # iterative DFS over alternating paths
        top = 0
        stack_u[0] = root
        stack_p[0] = indptr[root]
        found = -1
        parent_v = -np.ones(n_left, dtype=np.int64)
        while top >= 0:
            u = stack_u[top]
            advanced = False
            while stack_p[top] < indptr[u + 1]:
                v = indices[stack_p[top]]
                stack_p[top] += 1
                if visited[v] == stamp:
                    continue
                visited[v] = stamp
                parent_v[top] = v
                w = match_r[v]
                if w < 0:
                    found = top
                    break
                top += 1
                stack_u[top] = w
                stack_p[top] = indptr[w]
                advanced = True
                break
            if found >= 0:
                break
            if not advanced:
                top -= 1
        if found >= 0:
            for lvl in range(found, -1, -1):
                u = stack_u[lvl]
                v = parent_v[lvl]
                match_r[v] = u
                match_l[u] = v
    return match_l


def _matching_py(indptr, indices, n_left, n_right):
    match_r = [-1] * n_right
    match_l = [-1] * n_left

    def try_augment(root):
        # iterative DFS; returns True if an augmenting path was applied
        visited = set()
        stack = [(root, indptr[root])]
        path = []
        while stack:
            u, p = stack[-1]
            if p >= indptr[u + 1]:
                stack.pop()
                if path:
                    path.pop()
                continue
            stack[-1] = (u, p + 1)
            v = int(indices[p])
            if v in visited:
                continue
            visited.add(v)
            w = match_r[v]
            path.append((u, v))
            if w < 0:
                for uu, vv in path:
                    match_r[vv] = uu
                    match_l[uu] = vv
                return True
            stack.append((w, indptr[w]))
        return False

    for root in range(n_left):
        for p in range(indptr[root], indptr[root + 1]):
            v = int(indices[p])
            if match_r[v] < 0:
                match_r[v] = root
                match_l[root] = v
                break
        else:
            try_augment(root)
    return np.array(match_l, dtype=np.int64)


def bipartite_matching(indptr, indices, n_left: int, n_right: int) -> np.ndarray:
    """Maximum bipartite matching by augmenting paths.

    Left vertex ``u`` is adjacent to ``indices[indptr[u]:indptr[u+1]]``.
    Returns ``match[u]`` (right vertex or -1).
    """
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    if numba_enabled():
        return _matching_nb(indptr, indices, n_left, n_right)
    return _matching_py(indptr, indices, n_left, n_right)


# ---------------------------------------------------------------------------
# discrete gramian sums
# ---------------------------------------------------------------------------


def _gramian_sum_np(ad, g, steps):
    """sum_{k<steps} ad^k g g' (ad')^k by iterated multiplication."""
    w = np.zeros((ad.shape[0], ad.shape[0]))
    p = np.array(g, dtype=float, copy=True)
    for _ in range(steps):
        w += p @ p.T
        p = ad @ p
    return w


@njit
def _gramian_sum_nb(ad, g, steps):
    w = np.zeros((ad.shape[0], ad.shape[0]))
    p = g.copy()
    for _ in range(steps):
        w += p @ p.T
        p = ad @ p
    return w


def gramian_sum(ad: np.ndarray, g: np.ndarray, steps: int) -> np.ndarray:
    """``sum_{k=0}^{steps-1} ad^k g g' (ad^k)'`` (unsymmetrized)."""
    ad = np.ascontiguousarray(ad, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if numba_enabled():
        return _gramian_sum_nb(ad, g, int(steps))
    return _gramian_sum_np(ad, g, int(steps))
