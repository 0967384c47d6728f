"""Exact earth mover's distance via the transportation simplex.

The initial basic feasible solution comes from Vogel's approximation; the
simplex then pivots on the spanning tree of basic cells, using u-v potentials
for the reduced costs. Dantzig's rule picks the entering cell; after a long run
of pivots the solver falls back to Bland's rule, which cannot cycle.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import DimensionError, InfeasibleError, NumericalError

MASS_RTOL = 1e-12


def _validate(mu, nu, cost):
    a = np.asarray(mu, dtype=float).ravel()
    b = np.asarray(nu, dtype=float).ravel()
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape != (a.size, b.size):
        raise DimensionError(f"cost has shape {C.shape}, expected ({a.size}, {b.size})")
    if a.size == 0 or b.size == 0:
        raise DimensionError("empty marginal")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix has non-finite entries")
    if np.any(a < 0) or np.any(b < 0):
        raise InfeasibleError("marginal weights must be nonnegative")
    sa, sb = a.sum(), b.sum()
    if abs(sa - sb) > MASS_RTOL * max(1.0, sa, sb):
        raise InfeasibleError(f"marginal masses differ: {sa!r} vs {sb!r}")
    return a, b, C


def _vogel(a, b, C):
    """Vogel's approximation. Returns flows and the ``n + m - 1`` basic cells."""
    n, m = C.shape
    a, b = a.copy(), b.copy()
    snap = 4 * np.finfo(float).eps * max(a.sum(), 1.0)
    rows_on = np.ones(n, dtype=bool)
    cols_on = np.ones(m, dtype=bool)
    x = np.zeros((n, m))
    basis = []

    def allocate(i, j, cross_row):
        q = min(a[i], b[j])
        x[i, j] = q
        basis.append((i, j))
        a[i] -= q
        b[j] -= q
        if cross_row:
            rows_on[i] = False
            b[j] = max(b[j], 0.0)
        else:
            cols_on[j] = False
            a[i] = max(a[i], 0.0)

    while True:
        ridx = np.flatnonzero(rows_on)
        cidx = np.flatnonzero(cols_on)
        if ridx.size == 1:
            i = ridx[0]
            for j in cidx:
                x[i, j] = b[j]
                basis.append((i, j))
            break
        if cidx.size == 1:
            j = cidx[0]
            for i in ridx:
                x[i, j] = a[i]
                basis.append((i, j))
            break
        sub = C[np.ix_(ridx, cidx)]
        rtwo = np.partition(sub, 1, axis=1)[:, :2]
        ctwo = np.partition(sub, 1, axis=0)[:2, :]
        rpen = rtwo[:, 1] - rtwo[:, 0]
        cpen = ctwo[1, :] - ctwo[0, :]
        rbest, cbest = int(np.argmax(rpen)), int(np.argmax(cpen))
        if rpen[rbest] >= cpen[cbest]:
            i = ridx[rbest]
            j = cidx[int(np.argmin(sub[rbest]))]
        else:
            j = cidx[cbest]
            i = ridx[int(np.argmin(sub[:, cbest]))]
        if abs(a[i] - b[j]) <= snap:
            b[j] = a[i] = min(a[i], b[j])
        allocate(i, j, cross_row=a[i] <= b[j])
    return x, basis


class _Tree:
    """Spanning tree over ``n`` row nodes and ``m`` column nodes (column j is node n + j)."""

    def __init__(self, n, m, basis):
        self.n, self.m = n, m
        self.adj = [set() for _ in range(n + m)]
        for i, j in basis:
            self.add(i, j)

    def add(self, i, j):
        self.adj[i].add(self.n + j)
        self.adj[self.n + j].add(i)

    def remove(self, i, j):
        self.adj[i].discard(self.n + j)
        self.adj[self.n + j].discard(i)

    def potentials(self, C):
        n = self.n
        u = np.zeros(n)
        v = np.zeros(self.m)
        seen = np.zeros(n + self.m, dtype=bool)
        seen[0] = True
        queue = deque([0])
        while queue:
            node = queue.popleft()
            for nb in self.adj[node]:
                if seen[nb]:
                    continue
                seen[nb] = True
                if node < n:
                    v[nb - n] = C[node, nb - n] - u[node]
                else:
                    u[nb] = C[nb, node - n] - v[node - n]
                queue.append(nb)
        if not seen.all():
            raise NumericalError("basis is not a spanning tree")
        return u, v

    def path(self, src, dst):
        parent = {src: -1}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            if node == dst:
                break
            for nb in self.adj[node]:
                if nb not in parent:
                    parent[nb] = node
                    queue.append(nb)
        out = [dst]
        while out[-1] != src:
            out.append(parent[out[-1]])
        return out[::-1]


def solve_emd(mu, nu, cost, max_iter: int | None = None) -> np.ndarray:
    """Optimal transport plan minimizing ``<plan, cost>_F`` subject to the marginals.

    Parameters
    ----------
    mu, nu : array_like
        Nonnegative source and target weights with equal total mass.
    cost : array_like of shape (len(mu), len(nu))
        Ground cost.

    Returns
    -------
    numpy.ndarray
        Plan whose row sums are ``mu`` and column sums are ``nu``.
    """
    a, b, C = _validate(mu, nu, cost)
    n, m = C.shape
    x, basis = _vogel(a, b, C)
    if n == 1 or m == 1:
        return x
    tree = _Tree(n, m, basis)
    is_basic = np.zeros((n, m), dtype=bool)
    for i, j in basis:
        is_basic[i, j] = True

    tol = 1e-12 * max(1.0, float(np.max(np.abs(C))))
    bland_after = 50 * (n + m) + 1000
    if max_iter is None:
        max_iter = 200 * (n + m) * max(n, m) + 10000

    for it in range(max_iter):
        u, v = tree.potentials(C)
        reduced = C - u[:, None] - v[None, :]
        reduced[is_basic] = 0.0
        if it < bland_after:
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -tol:
                return x
        else:
            cand = np.flatnonzero(reduced < -tol)
            if cand.size == 0:
                return x
            flat = int(cand[0])
        ei, ej = divmod(flat, m)

        nodes = tree.path(ei, n + ej)
        minus, plus = [], []
        for k in range(len(nodes) - 1):
            p, q = nodes[k], nodes[k + 1]
            cell = (p, q - n) if p < n else (q, p - n)
            (minus if k % 2 == 0 else plus).append(cell)
        theta = min(x[c] for c in minus)
        leave = min((c for c in minus if x[c] == theta), key=lambda c: c[0] * m + c[1])

        x[ei, ej] += theta
        for c in plus:
            x[c] += theta
        for c in minus:
            x[c] = max(x[c] - theta, 0.0)
        x[leave] = 0.0
        is_basic[leave] = False
        is_basic[ei, ej] = True
        tree.remove(*leave)
        tree.add(ei, ej)
    raise NumericalError(f"transportation simplex exceeded {max_iter} pivots")


def transport_cost(plan, cost) -> float:
    return float(np.sum(np.asarray(plan) * np.asarray(cost)))


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)
