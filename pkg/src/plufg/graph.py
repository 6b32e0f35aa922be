"""Weighted undirected graphs and the discrete differential operators on them.

Edges are stored once per orientation in CSR order, so an edge field is simply
an ``(nnz, c)`` array aligned with ``Graph.indices``.  Two degree conventions
coexist:

* ``deg_raw`` (``d_ii = sum_j w_ij``) drives the gradient, divergence and the
  p-Laplacian iteration;
* ``deg_aug`` (``d_ii + 1``) drives the normalized adjacency/Laplacian that the
  framelet transforms are built on, which keeps that Laplacian PSD.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from .exceptions import GraphError

# dense eigensolvers are used at or below this size
DENSE_EIG_LIMIT = 2000


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable weighted undirected graph in symmetric CSR form."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    deg_raw: np.ndarray = field(init=False)
    deg_aug: np.ndarray = field(init=False)
    rows: np.ndarray = field(init=False, repr=False)
    rev: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        weights = np.asarray(self.weights, dtype=float)
        if indptr.shape != (self.n + 1,) or indices.shape != weights.shape:
            raise GraphError("inconsistent CSR arrays")
        rows = np.repeat(np.arange(self.n), np.diff(indptr))
        if np.any(rows == indices):
            raise GraphError(f"self-loop stored at node {int(rows[rows == indices][0])}")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise GraphError("edge weights must be finite and positive")

        # position of (j, i) for each stored (i, j)
        keys = rows * self.n + indices
        rkeys = indices * self.n + rows
        order = np.argsort(keys, kind="stable")
        pos = np.searchsorted(keys[order], rkeys)
        pos = np.minimum(pos, len(keys) - 1)
        rev = order[pos] if len(keys) else pos
        if len(keys) and (np.any(keys[rev] != rkeys) or np.any(weights[rev] != weights)):
            raise GraphError("adjacency is not symmetric")

        deg = np.add.reduceat(weights, indptr[:-1]) if len(weights) else np.zeros(self.n)
        counts = np.diff(indptr)
        deg = np.where(counts > 0, deg, 0.0)
        isolated = np.flatnonzero(counts == 0)
        if isolated.size:
            raise GraphError(f"node {int(isolated[0])} is isolated")

        object.__setattr__(self, "indptr", _frozen(indptr))
        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "rev", _frozen(rev))
        object.__setattr__(self, "deg_raw", _frozen(deg))
        object.__setattr__(self, "deg_aug", _frozen(deg + 1.0))

    @property
    def nnz(self) -> int:
        """Number of directed edges (twice the undirected edge count)."""
        return len(self.indices)

    @property
    def n_edges(self) -> int:
        return self.nnz // 2

    def adjacency(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.n, self.n))

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def edge_list(self) -> list[tuple[int, int, float]]:
        """Undirected edges ``(i, j, w)`` with ``i < j``."""
        keep = self.rows < self.indices
        return [(int(i), int(j), float(w))
                for i, j, w in zip(self.rows[keep], self.indices[keep], self.weights[keep])]


def build_graph(edge_list: Iterable[Sequence], n: int) -> Graph:
    """Build a symmetric CSR graph from ``(i, j, w)`` triples.

    Each triple adds ``w`` to the undirected edge ``{i, j}``, so repeated or
    reversed listings of the same pair are merged by summation.
    """
    n = int(n)
    if n <= 0:
        raise GraphError("graph needs at least one node")
    triples = [tuple(e) for e in edge_list]
    if not triples:
        raise GraphError("empty edge list: node 0 is isolated")
    src = np.empty(len(triples), dtype=np.int64)
    dst = np.empty(len(triples), dtype=np.int64)
    w = np.empty(len(triples))
    for k, t in enumerate(triples):
        if len(t) == 2:
            t = (t[0], t[1], 1.0)
        i, j, wt = int(t[0]), int(t[1]), float(t[2])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) out of range for n={n}")
        if i == j:
            raise GraphError(f"self-loop at node {i}; augmentation adds self-loops implicitly")
        if not np.isfinite(wt) or wt < 0:
            raise GraphError(f"negative or non-finite weight {wt} on edge ({i}, {j})")
        if wt == 0:
            raise GraphError(f"zero weight on edge ({i}, {j})")
        src[k], dst[k], w[k] = i, j, wt

    # merge on the upper triangle first so both orientations get bitwise equal sums
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    upper = sp.coo_matrix((w, (lo, hi)), shape=(n, n)).tocsr()
    upper.sum_duplicates()
    csr = (upper + upper.T).tocsr()
    csr.sort_indices()
    counts = np.diff(csr.indptr)
    if np.any(counts == 0):
        raise GraphError(f"node {int(np.flatnonzero(counts == 0)[0])} is isolated")
    return Graph(n, csr.indptr, csr.indices, csr.data)


def from_scipy(adj, validate_symmetric: bool = True) -> Graph:
    """Build a Graph from a (symmetric) scipy/numpy adjacency matrix."""
    A = sp.csr_matrix(adj, dtype=float)
    A.setdiag(0)
    A.eliminate_zeros()
    upper = sp.triu(A, k=1).tocoo()
    if validate_symmetric and abs(A - A.T).max() > 0:
        raise GraphError("adjacency is not symmetric")
    return build_graph(zip(upper.row, upper.col, upper.data), A.shape[0])


def read_edge_list(path: str | os.PathLike, n: int | None = None) -> Graph:
    """Read ``i<TAB>j<TAB>w`` lines (0-based, ``#`` comments) into a Graph."""
    triples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) not in (2, 3):
                raise GraphError(f"{path}:{lineno}: expected 'i<TAB>j<TAB>w', got {line!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
                wt = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from None
            triples.append((i, j, wt))
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in triples), default=-1)
    return build_graph(triples, n)


def write_edge_list(g: Graph, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for i, j, w in g.edge_list():
            fh.write(f"{i}\t{j}\t{w!r}\n")


def as_features(F, n: int | None = None, name: str = "F") -> np.ndarray:
    """Return ``F`` as a finite 2-D float array; 1-D input becomes one channel."""
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {F.shape}")
    if n is not None and F.shape[0] != n:
        raise ValueError(f"{name} has {F.shape[0]} rows, graph has {n} nodes")
    if not np.all(np.isfinite(F)):
        raise ValueError(f"{name} contains non-finite entries")
    return F


def _sym_normalize(g: Graph, deg: np.ndarray, self_loops: bool) -> sp.csr_matrix:
    A = g.adjacency()
    if self_loops:
        A = A + sp.identity(g.n, format="csr")
    dinv = sp.diags(1.0 / np.sqrt(deg))
    return (dinv @ A @ dinv).tocsr()


def normalized_operators(g: Graph, degrees: str = "aug"):
    """Return ``(A_hat, L_tilde)`` with ``A_hat = D^-1/2 (W + I) D^-1/2``.

    ``degrees="aug"`` (default) normalizes by ``deg_raw + 1``, which is the row
    sum of ``W + I`` and makes ``L_tilde`` PSD with spectrum in ``[0, 2)``.
    ``degrees="raw"`` gives the literal raw-degree form, which can be indefinite.
    """
    deg = {"aug": g.deg_aug, "raw": g.deg_raw}[degrees]
    A_hat = _sym_normalize(g, deg, self_loops=True)
    L = (sp.identity(g.n, format="csr") - A_hat).tocsr()
    return A_hat, L


def gradient_laplacian(g: Graph) -> sp.csr_matrix:
    """Operator ``L`` with ``dirichlet_energy(F) = tr(F^T L F) / 2``.

    Equals ``2 (I - D^-1/2 W D^-1/2)`` with raw degrees; it is ``-div(grad .)``.
    """
    S = _sym_normalize(g, g.deg_raw, self_loops=False)
    return (2.0 * (sp.identity(g.n, format="csr") - S)).tocsr()


def graph_gradient(g: Graph, F) -> np.ndarray:
    """Edge field ``(grad F)[i,j] = sqrt(w_ij/d_jj) f_j - sqrt(w_ij/d_ii) f_i``."""
    F = as_features(F, g.n)
    w = g.weights
    s_src = np.sqrt(w / g.deg_raw[g.rows])[:, None]
    s_dst = np.sqrt(w / g.deg_raw[g.indices])[:, None]
    return s_dst * F[g.indices] - s_src * F[g.rows]


def _row_sum(g: Graph, values: np.ndarray) -> np.ndarray:
    # every row is nonempty (no isolated nodes), so reduceat is well defined
    return np.add.reduceat(values, g.indptr[:-1], axis=0)


def graph_divergence(g: Graph, field_values) -> np.ndarray:
    """``div(g)(i) = sum_j sqrt(w_ij/d_ii) (g[i,j] - g[j,i])``; adjoint of ``-grad``."""
    h = np.asarray(field_values, dtype=float)
    if h.ndim == 1:
        h = h[:, None]
    if h.shape[0] != g.nnz:
        raise ValueError(f"edge field has {h.shape[0]} rows, graph has {g.nnz} directed edges")
    s_src = np.sqrt(g.weights / g.deg_raw[g.rows])[:, None]
    return _row_sum(g, s_src * (h - h[g.rev]))


def edge_norms(g: Graph, F=None, grad: np.ndarray | None = None) -> np.ndarray:
    """Euclidean channel norm of each directed-edge gradient."""
    if grad is None:
        grad = graph_gradient(g, F)
    return np.sqrt(np.einsum("ec,ec->e", grad, grad))


def node_gradient_pnorm(g: Graph, F, p: float, grad: np.ndarray | None = None) -> np.ndarray:
    """Per-node ``(sum_{j~i} ||grad F[i,j]||^p)^(1/p)``."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    nrm = edge_norms(g, F, grad)
    return _row_sum(g, nrm ** p) ** (1.0 / p)


def homophily_index(g: Graph, labels) -> float:
    """Mean over nodes of the fraction of neighbours sharing the node's label."""
    labels = np.asarray(labels)
    if labels.shape != (g.n,):
        raise ValueError(f"expected {g.n} labels, got shape {labels.shape}")
    if labels.dtype.kind == "f":
        bad = ~np.isfinite(labels) | (labels < 0)
    elif labels.dtype.kind in "iu":
        bad = labels < 0
    else:
        bad = np.array([lab is None for lab in labels])
    if np.any(bad):
        raise ValueError(f"node {int(np.flatnonzero(bad)[0])} is unlabeled")
    same = (labels[g.rows] == labels[g.indices]).astype(float)
    frac = _row_sum(g, same) / np.diff(g.indptr)
    return float(frac.mean())


def spectral_radius(L) -> float:
    """Largest eigenvalue of a symmetric operator (dense solve for small N)."""
    n = L.shape[0]
    if n <= DENSE_EIG_LIMIT:
        M = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float)
        return float(scipy.linalg.eigvalsh(M, subset_by_index=[n - 1, n - 1])[0])
    vals = scipy.sparse.linalg.eigsh(sp.csr_matrix(L), k=1, which="LA", tol=1e-12,
                                     return_eigenvectors=False)
    return float(vals[0])
