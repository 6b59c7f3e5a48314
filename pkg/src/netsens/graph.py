"""Sparse (di)graphs, file I/O, generators and basic graph metrics."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse import csgraph
from scipy.spatial import cKDTree


class GraphFormatError(ValueError):
    """Raised for malformed graph input files or invalid edge data."""


@dataclass(frozen=True)
class EdgePair:
    """A node pair ``(i, j)`` carrying a value (sensitivity, weight, ...)."""

    i: int
    j: int
    value: float


class Graph:
    """Immutable weighted (di)graph stored as its adjacency matrix.

    Both ``A`` and ``A.T`` are kept in CSR form so that products with the
    adjacency matrix and with its transpose both cost O(nnz).

    Parameters
    ----------
    adjacency : sparse matrix or array_like
        Square adjacency matrix with strictly positive off-diagonal weights.
        Diagonal entries are dropped (see ``dropped_loops``).
    directed : bool
        If False the adjacency matrix must be exactly symmetric.
    labels : sequence of str, optional
        Human readable node names.
    """

    def __init__(self, adjacency, directed: bool, labels=None):
        A = sp.csr_matrix(adjacency, dtype=float, copy=True)
        if A.shape[0] != A.shape[1]:
            raise GraphFormatError(f"adjacency matrix must be square, got {A.shape}")
        A.sum_duplicates()
        diag = A.diagonal()
        self.dropped_loops = int(np.count_nonzero(diag))
        if self.dropped_loops:
            A.setdiag(0.0)
        A.eliminate_zeros()
        A.sort_indices()
        if A.nnz and not np.all(np.isfinite(A.data)):
            raise GraphFormatError("edge weights must be finite")
        if A.nnz and A.data.min() <= 0:
            raise GraphFormatError("edge weights must be strictly positive")
        if not directed and (A != A.T).nnz:
            raise GraphFormatError("undirected graph requires a symmetric adjacency matrix")
        AT = A.T.tocsr()
        AT.sort_indices()
        self._A = A
        self._AT = AT
        self.directed = bool(directed)
        if labels is not None:
            labels = [str(s) for s in labels]
            if len(labels) != A.shape[0]:
                raise GraphFormatError(
                    f"got {len(labels)} labels for a graph with {A.shape[0]} nodes"
                )
        self.labels = labels

    @classmethod
    def from_edges(cls, n, rows, cols, weights=None, directed=False, labels=None):
        """Build a graph from 0-based edge arrays.

        Undirected input is symmetrized: each listed pair ``(i, j)`` creates
        both entries, and repeated pairs (in either orientation) are summed.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        if weights is None:
            weights = np.ones(rows.shape, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if not (rows.shape == cols.shape == weights.shape):
            raise GraphFormatError("edge arrays must have equal length")
        if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n or cols.max() >= n):
            raise GraphFormatError(f"node index out of range for n={n}")
        if weights.size and weights.min() <= 0:
            raise GraphFormatError("edge weights must be strictly positive")
        if not directed:
            off = rows != cols
            lo = np.minimum(rows, cols)
            hi = np.maximum(rows, cols)
            rows = np.concatenate([lo, hi[off]])
            cols = np.concatenate([hi, lo[off]])
            weights = np.concatenate([weights, weights[off]])
        A = sp.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()
        return cls(A, directed=directed, labels=labels)

    @property
    def n(self) -> int:
        return self._A.shape[0]

    @property
    def nnz(self) -> int:
        return self._A.nnz

    @property
    def A(self) -> sp.csr_matrix:
        return self._A

    @property
    def AT(self) -> sp.csr_matrix:
        return self._AT

    @property
    def pattern(self) -> sp.csr_matrix:
        """0/1 pattern of the adjacency matrix."""
        P = self._A.copy()
        P.data[:] = 1.0
        return P

    def matvec(self, x):
        return self._A @ x

    def rmatvec(self, x):
        return self._AT @ x

    def edges(self):
        """Return ``(rows, cols, weights)`` of all stored entries, row-major."""
        coo = self._A.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order], coo.col[order], coo.data[order]

    def has_edge(self, i, j) -> bool:
        return self._A[i, j] != 0

    def out_edges(self, v):
        """Targets and weights of the edges leaving ``v``."""
        lo, hi = self._A.indptr[v], self._A.indptr[v + 1]
        return self._A.indices[lo:hi], self._A.data[lo:hi]

    def in_edges(self, v):
        """Sources and weights of the edges entering ``v``."""
        lo, hi = self._AT.indptr[v], self._AT.indptr[v + 1]
        return self._AT.indices[lo:hi], self._AT.data[lo:hi]

    def label(self, v) -> str:
        return self.labels[v] if self.labels is not None else str(v)

    def with_edges(self, pairs, weights=None) -> "Graph":
        """Return a new graph with ``weights`` added to the entries at ``pairs``.

        Negative weights remove (part of) an existing weight; entries that
        reach zero disappear. For undirected graphs each pair updates both
        orientations.
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(pairs))
        weights = np.asarray(weights, dtype=float)
        rows, cols = pairs[:, 0], pairs[:, 1]
        if np.any(rows == cols):
            raise GraphFormatError("self-loops cannot be added")
        if not self.directed:
            rows, cols = np.concatenate([rows, cols]), np.concatenate([cols, rows])
            weights = np.concatenate([weights, weights])
        D = sp.coo_matrix((weights, (rows, cols)), shape=(self.n, self.n)).tocsr()
        B = (self._A + D).tocsr()
        # cancellation can leave roundoff-sized residues
        B.data[np.abs(B.data) <= 1e-14 * max(1.0, np.abs(self._A.data).max(initial=0.0))] = 0.0
        B.eliminate_zeros()
        if B.nnz and B.data.min() < 0:
            raise GraphFormatError("update would create a negative edge weight")
        return Graph(B, directed=self.directed, labels=self.labels)

    def __repr__(self):
        kind = "directed" if self.directed else "undirected"
        return f"Graph(n={self.n}, nnz={self.nnz}, {kind})"


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        return data.decode("utf-8")
    return data


def load_matrix_market(data) -> Graph:
    """Parse a MatrixMarket coordinate file (``real``/``integer``/``pattern``).

    Diagonal entries are dropped and counted in ``Graph.dropped_loops``;
    duplicate entries are summed.
    """
    lines = io.StringIO(_as_text(data))
    header = lines.readline().strip()
    parts = header.split()
    if len(parts) != 5 or parts[0].lower() != "%%matrixmarket":
        raise GraphFormatError(f"malformed MatrixMarket header: {header!r}")
    obj, fmt, field, symmetry = (p.lower() for p in parts[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise GraphFormatError("only 'matrix coordinate' MatrixMarket files are supported")
    if field not in ("real", "integer", "pattern"):
        raise GraphFormatError(f"unsupported MatrixMarket field {field!r}")
    if symmetry not in ("general", "symmetric"):
        raise GraphFormatError(f"unsupported MatrixMarket symmetry {symmetry!r}")

    size = None
    for line in lines:
        s = line.strip()
        if s and not s.startswith("%"):
            size = s.split()
            break
    if size is None or len(size) != 3:
        raise GraphFormatError("missing or malformed MatrixMarket size line")
    nrows, ncols, nent = (int(t) for t in size)
    if nrows != ncols:
        raise GraphFormatError(f"adjacency matrix must be square, got {nrows}x{ncols}")

    ncol_expected = 2 if field == "pattern" else 3
    rows, cols, vals = [], [], []
    for line in lines:
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        tok = s.split()
        if len(tok) != ncol_expected:
            raise GraphFormatError(f"bad entry line {s!r}")
        i, j = int(tok[0]), int(tok[1])
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise GraphFormatError(f"entry ({i}, {j}) outside declared size {nrows}x{ncols}")
        w = 1.0 if field == "pattern" else float(tok[2])
        if w <= 0:
            raise GraphFormatError(f"non-positive weight {w} at ({i}, {j})")
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(w)
    if len(rows) != nent:
        raise GraphFormatError(f"expected {nent} entries, found {len(rows)}")

    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    loops = int(np.count_nonzero(rows == cols))
    if loops:
        warnings.warn(f"dropped {loops} self-loop entries", stacklevel=2)
    keep = rows != cols
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    if symmetry == "symmetric":
        rows, cols = np.concatenate([rows, cols]), np.concatenate([cols, rows])
        vals = np.concatenate([vals, vals])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, nrows)).tocsr()
    g = Graph(A, directed=symmetry != "symmetric")
    g.dropped_loops = loops
    return g


def load_edge_list(data, directed: bool, one_based: bool = True, n=None) -> Graph:
    """Parse whitespace separated ``i j [w]`` lines; ``#`` starts a comment.

    All lines must carry the same number of columns. Undirected input is
    symmetrized and repeated pairs are summed.
    """
    rows, cols, vals = [], [], []
    width = None
    for lineno, line in enumerate(io.StringIO(_as_text(data)), start=1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        tok = s.split()
        if len(tok) not in (2, 3):
            raise GraphFormatError(f"line {lineno}: expected 'i j [w]', got {s!r}")
        if width is None:
            width = len(tok)
        elif len(tok) != width:
            raise GraphFormatError(f"line {lineno}: ragged edge list")
        w = float(tok[2]) if len(tok) == 3 else 1.0
        if w < 0:
            raise GraphFormatError(f"line {lineno}: negative weight {w}")
        if w == 0:
            continue
        rows.append(int(tok[0]))
        cols.append(int(tok[1]))
        vals.append(w)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if one_based:
        rows -= 1
        cols -= 1
    if rows.size and min(rows.min(), cols.min()) < 0:
        raise GraphFormatError("negative node index (wrong base?)")
    if n is None:
        n = int(max(rows.max(), cols.max()) + 1) if rows.size else 0
    loops = int(np.count_nonzero(rows == cols))
    if loops:
        warnings.warn(f"dropped {loops} self-loop entries", stacklevel=2)
    keep = rows != cols
    g = Graph.from_edges(n, rows[keep], cols[keep], np.asarray(vals)[keep], directed=directed)
    g.dropped_loops = loops
    return g


def to_matrix_market(g: Graph) -> str:
    """Serialize as ``real general`` (directed) or ``real symmetric`` (undirected)."""
    rows, cols, w = g.edges()
    sym = not g.directed
    if sym:
        # lower triangle only
        keep = rows > cols
        rows, cols, w = rows[keep], cols[keep], w[keep]
    out = [f"%%MatrixMarket matrix coordinate real {'symmetric' if sym else 'general'}"]
    out.append(f"{g.n} {g.n} {len(rows)}")
    out.extend(f"{i + 1} {j + 1} {x!r}" for i, j, x in zip(rows.tolist(), cols.tolist(), w.tolist()))
    return "\n".join(out) + "\n"


def to_edge_list(g: Graph) -> str:
    """Serialize as 1-based ``i j w`` lines (each undirected edge once, i < j)."""
    rows, cols, w = g.edges()
    if not g.directed:
        keep = rows < cols
        rows, cols, w = rows[keep], cols[keep], w[keep]
    lines = [f"# n={g.n} {'directed' if g.directed else 'undirected'}"]
    lines.extend(f"{i + 1} {j + 1} {x!r}" for i, j, x in zip(rows.tolist(), cols.tolist(), w.tolist()))
    return "\n".join(lines) + "\n"


def read_labels(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def load_graph(path, fmt=None, directed=False, one_based=True, labels=None) -> Graph:
    """Load a graph file, guessing the format from the extension if needed."""
    path = Path(path)
    if fmt is None:
        fmt = "mtx" if path.suffix.lower() == ".mtx" else "edgelist"
    raw = path.read_bytes()
    if fmt == "mtx":
        g = load_matrix_market(raw)
    elif fmt == "edgelist":
        g = load_edge_list(raw, directed=directed, one_based=one_based)
    else:
        raise GraphFormatError(f"unknown graph format {fmt!r}")
    if labels is not None:
        g = Graph(g.A, directed=g.directed, labels=labels)
    return g


def florentine_families() -> Graph:
    """The 15-node / 20-edge Florentine families marriage network."""
    data = Path(__file__).with_name("data")
    return load_graph(data / "florentine.mtx", labels=read_labels(data / "florentine.labels"))


def _expected_degree(n, d):
    # mean degree of a random geometric graph in the unit square (edge corrections included)
    area = math.pi * d**2 - 8.0 * d**3 / 3.0 + d**4 / 2.0
    return (n - 1) * area


def radius_for_degree(n: int, avg_degree: float) -> float:
    """Distance threshold giving the requested expected mean degree."""
    if n < 2:
        return 0.1
    target = min(avg_degree, n - 1)
    hi = 1.0
    if _expected_degree(n, hi) <= target:
        return math.sqrt(2.0)
    return brentq(lambda d: _expected_degree(n, d) - target, 1e-12, hi)


def random_geometric_graph(n: int, d: float, seed=None) -> Graph:
    """Uniform points in the unit square joined when their distance is below ``d``."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 < d <= math.sqrt(2.0):
        raise ValueError("distance threshold must lie in (0, sqrt(2)]")
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2))
    pairs = cKDTree(pts).query_pairs(d, output_type="ndarray")
    if len(pairs):
        dist = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
        pairs = pairs[dist < d]
    else:
        pairs = np.empty((0, 2), dtype=np.int64)
    return Graph.from_edges(n, pairs[:, 0], pairs[:, 1], directed=False)


def geodesic_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distances from ``source`` following edge directions; ``inf`` if unreachable."""
    if not 0 <= source < g.n:
        raise IndexError(f"node {source} out of range")
    return csgraph.shortest_path(g.A, directed=g.directed, unweighted=True, indices=source)


def distances_to(g: Graph, target: int) -> np.ndarray:
    """Hop distances ``d(u, target)`` for every node ``u``."""
    if not 0 <= target < g.n:
        raise IndexError(f"node {target} out of range")
    return csgraph.shortest_path(g.AT, directed=g.directed, unweighted=True, indices=target)


def weighted_degree(g: Graph, v: int) -> float:
    """Sum of the weights of the edges leaving ``v``."""
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} out of range")
    _, w = g.out_edges(v)
    return float(w.sum())


def max_degree(g: Graph) -> float:
    return float(np.asarray(g.A.sum(axis=1)).max(initial=0.0))
