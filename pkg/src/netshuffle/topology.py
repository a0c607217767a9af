"""Communication graphs, mixing matrices, and their spectral data.

Mixing matrices are symmetric, doubly stochastic, and nonnegative, with a
positive entry exactly on graph edges and on the diagonal.  All algorithms
downstream consume ``MixingMatrix`` plus the cached ``SpectralInfo``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

SYM_TOL = 1e-12
STOCH_TOL = 1e-12


class TopologyError(ValueError):
    """Invalid graph or mixing-matrix input."""


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on agents 0..n-1; self-loops are implicit."""

    n: int
    edges: frozenset
    kind: str = "custom"

    def __post_init__(self):
        if self.n < 1:
            raise TopologyError(f"need at least one agent, got n={self.n}")
        for i, j in self.edges:
            if i == j:
                raise TopologyError("self-loops are implicit, do not list them")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise TopologyError(f"edge ({i},{j}) out of range for n={self.n}")
        if not _connected(self.n, self.edges):
            raise TopologyError(
                f"{self.kind} graph on {self.n} nodes with {len(self.edges)} "
                "edges is not connected"
            )

    def neighbors(self, i: int) -> list:
        return sorted(
            {b for a, b in self.edges if a == i} | {a for a, b in self.edges if b == i}
        )

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a


def _normalize_edges(edges: Iterable) -> frozenset:
    return frozenset((min(i, j), max(i, j)) for i, j in edges if i != j)


def _connected(n: int, edges) -> bool:
    if n == 1:
        return True
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    seen = {0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    nxt.append(v)
        frontier = nxt
    return len(seen) == n


def ring_graph(n: int) -> Graph:
    if n < 1:
        raise TopologyError("ring needs n >= 1")
    if n == 1:
        edges = []
    elif n == 2:
        edges = [(0, 1)]
    else:
        edges = [(i, (i + 1) % n) for i in range(n)]
    return Graph(n, _normalize_edges(edges), kind="ring")


def grid_graph(rows: int, cols: int) -> Graph:
    """2-D lattice without wraparound."""
    if rows < 1 or cols < 1:
        raise TopologyError("grid needs rows, cols >= 1")
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                edges.append((u, u + 1))
            if r + 1 < rows:
                edges.append((u, u + cols))
    return Graph(rows * cols, _normalize_edges(edges), kind="grid")


def complete_graph(n: int) -> Graph:
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return Graph(n, _normalize_edges(edges), kind="complete")


def star_graph(n: int) -> Graph:
    """Hub is node 0."""
    edges = [(0, i) for i in range(1, n)]
    return Graph(n, _normalize_edges(edges), kind="star")


def custom_graph(n: int, edges: Iterable) -> Graph:
    return Graph(n, _normalize_edges(edges), kind="custom")


def build_graph(kind: str, n: int | None = None, rows: int | None = None,
                cols: int | None = None, edges=None) -> Graph:
    """Construct a graph by kind tag; grid requires rows*cols == n when n given."""
    if kind == "ring":
        return ring_graph(int(n))
    if kind == "complete":
        return complete_graph(int(n))
    if kind == "star":
        return star_graph(int(n))
    if kind == "grid":
        if rows is None or cols is None:
            raise TopologyError("grid needs rows and cols")
        if n is not None and rows * cols != n:
            raise TopologyError(f"grid {rows}x{cols} != n={n}")
        return grid_graph(int(rows), int(cols))
    if kind == "custom":
        if n is None or edges is None:
            raise TopologyError("custom graph needs n and an edge list")
        return custom_graph(int(n), edges)
    raise TopologyError(f"unknown graph kind {kind!r}")


def read_edge_file(path) -> list:
    """Edge file: one 'i j' pair per line, 0-indexed; '#' starts a comment."""
    edges = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise TopologyError(f"bad edge line {line!r}")
            edges.append((int(parts[0]), int(parts[1])))
    return edges


@dataclass(frozen=True)
class SpectralInfo:
    """Eigendata of a mixing matrix.

    ``eigenvalues`` is descending with the leading value 1.  ``lam`` is the
    spectral norm of W - 11^T/n, i.e. max(|lambda_2|, |lambda_n|); ``gap`` is
    1 - lam.  ``lambda_min`` is the smallest eigenvalue of W itself (the
    quantity the exact-diffusion rate constants call for; it is positive exactly
    when W is positive definite).  ``eigvecs`` is an orthonormal basis whose
    first column is exactly 1/sqrt(n); ``uhat`` is the remaining n-1 columns.
    """

    eigenvalues: np.ndarray
    lam: float
    gap: float
    lambda_min: float
    eigvecs: np.ndarray
    uhat: np.ndarray


class MixingMatrix:
    """Symmetric doubly stochastic weight matrix with cached spectral data."""

    def __init__(self, w: np.ndarray):
        w = np.asarray(w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise TopologyError("mixing matrix must be square")
        n = w.shape[0]
        asym = float(np.max(np.abs(w - w.T))) if n else 0.0
        if asym > SYM_TOL:
            raise TopologyError(f"matrix is asymmetric beyond {SYM_TOL:g} (got {asym:.3g})")
        row = np.abs(w.sum(axis=1) - 1.0).max()
        if row > STOCH_TOL:
            raise TopologyError(f"rows must sum to 1 within {STOCH_TOL:g} (off by {row:.3g})")
        if w.min() < -1e-12:
            raise TopologyError(f"negative weight {w.min():.3g}")
        if not _connected(n, zip(*np.nonzero(np.triu(w > 0, k=1)))):
            raise TopologyError("positivity pattern of W is not connected")
        w = w.copy()
        w.setflags(write=False)
        self.w = w
        self.n = n
        self._spectral: SpectralInfo | None = None

    @property
    def spectral(self) -> SpectralInfo:
        if self._spectral is None:
            self._spectral = spectral_info(self.w)
        return self._spectral

    def __repr__(self):
        return f"MixingMatrix(n={self.n})"


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights: w_ij = 1/(1+max(deg_i,deg_j)) on edges."""
    n = g.n
    w = np.zeros((n, n))
    deg = [g.degree(i) for i in range(n)]
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return MixingMatrix(w)


def lazify(mix: MixingMatrix, tau: float) -> MixingMatrix:
    """Return (1-tau) W + tau I; maps every eigenvalue to (1-tau) lam + tau."""
    if not 0.0 < tau < 1.0:
        raise TopologyError(f"tau must lie in (0,1), got {tau}")
    return MixingMatrix((1.0 - tau) * mix.w + tau * np.eye(mix.n))


def spectral_info(w: np.ndarray | MixingMatrix) -> SpectralInfo:
    """Full eigendecomposition of a mixing matrix with 1/sqrt(n) pinned first."""
    if isinstance(w, MixingMatrix):
        w = w.w
    w = np.asarray(w, dtype=float)
    asym = float(np.max(np.abs(w - w.T)))
    if asym > SYM_TOL:
        raise TopologyError(f"matrix is asymmetric beyond {SYM_TOL:g}")
    n = w.shape[0]
    vals, vecs = np.linalg.eigh(w)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    if abs(vals[0] - 1.0) > 1e-10:
        raise TopologyError(f"leading eigenvalue {vals[0]} != 1; not doubly stochastic?")
    ones = np.full(n, 1.0 / np.sqrt(n))
    # eigenvalue 1 is simple for connected W, so column 0 is +-ones
    if vecs[:, 0] @ ones < 0:
        vecs[:, 0] *= -1.0
    vecs = vecs.copy()
    vecs[:, 0] = ones
    lam = float(max(abs(vals[1]), abs(vals[-1]))) if n > 1 else 0.0
    return SpectralInfo(
        eigenvalues=vals,
        lam=lam,
        gap=1.0 - lam,
        lambda_min=float(vals[-1]),
        eigvecs=vecs,
        uhat=vecs[:, 1:],
    )


def psd_sqrt(mat: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric PSD square root; rejects eigenvalues below -tol."""
    mat = 0.5 * (mat + mat.T)
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < -tol:
        raise TopologyError(
            f"matrix has negative eigenvalue {vals.min():.3g}; square root undefined"
        )
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
