"""Directed trade networks and expenditure weights.

Agents sit on a directed graph: an edge j -> i means j is a supplier of i
(i buys from j).  Supplier lists are the primary data; customer lists are
always the exact transpose.  Every network carries a spatial embedding
(1D index, or (x, y) lattice coordinate) with periodic extents, which the
loser-walk statistics use to measure jump distances.
"""

from __future__ import annotations

import numpy as np

from .errors import TopologyError

LATTICE_KINDS = ("manhattan", "f_lattice", "corner_rt", "corner_lt",
                 "corner_lb", "corner_rb")
NETWORK_KINDS = ("ring",) + LATTICE_KINDS + ("er_embedded", "custom")

# direction -> (dx, dy); "top" is +y
_DIRS = {"R": (1, 0), "T": (0, 1), "L": (-1, 0), "B": (0, -1)}
# canonical supplier ordering for corner assignments: R before T before L before B
_DIR_PRECEDENCE = "RTLB"
CORNERS = ("RT", "LT", "LB", "RB")


class TradeNetwork:
    """Directed supplier/customer graph with spatial embedding.

    Treated as immutable after construction; safe to share read-only.

    Attributes
    ----------
    n_agents : int
    suppliers : list of lists, suppliers[i] = ordered supplier indices of i
    customers : list of lists, exact transpose of suppliers
    embedding : (N,) or (N, 2) int array of agent coordinates
    extents   : tuple of periodic linear sizes, one per embedding dimension
    kind      : one of NETWORK_KINDS
    """

    def __init__(self, suppliers, embedding, extents, kind):
        if kind not in NETWORK_KINDS:
            raise TopologyError(f"unknown network kind {kind!r}")
        n = len(suppliers)
        self.n_agents = n
        self.suppliers = [list(map(int, row)) for row in suppliers]
        self.embedding = np.asarray(embedding, dtype=np.int64)
        self.extents = tuple(int(e) for e in extents)
        self.kind = kind

        for i, row in enumerate(self.suppliers):
            if not row:
                raise TopologyError(f"agent {i} has no suppliers")
            if i in row:
                raise TopologyError(f"agent {i} supplies itself")
            if len(set(row)) != len(row):
                raise TopologyError(f"agent {i} has duplicate suppliers")
            for j in row:
                if not 0 <= j < n:
                    raise TopologyError(f"agent {i} has supplier {j} out of range")

        # CSR over supplier edges; edge e belongs to row row_agent[e]
        degrees = [len(row) for row in self.suppliers]
        self.sup_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(degrees, out=self.sup_ptr[1:])
        self.sup_idx = np.fromiter(
            (j for row in self.suppliers for j in row), dtype=np.int64,
            count=self.sup_ptr[-1])
        self.row_agent = np.repeat(np.arange(n, dtype=np.int64), degrees)

        # transpose: customers[j] ordered by ascending customer index, and
        # in_edges[j] holds the matching supplier-edge ids in the same order
        self.customers = [[] for _ in range(n)]
        self.in_edges = [[] for _ in range(n)]
        for e, (i, j) in enumerate(zip(self.row_agent, self.sup_idx)):
            self.customers[j].append(int(i))
            self.in_edges[j].append(e)

    @property
    def n_edges(self):
        return int(self.sup_ptr[-1])

    def degree(self, i):
        """Number of suppliers of agent i."""
        return len(self.suppliers[i])

    def positions(self, agents):
        """Embedding coordinates for an array of agent indices."""
        return self.embedding[np.asarray(agents)]

    def __repr__(self):
        return (f"TradeNetwork(kind={self.kind!r}, n_agents={self.n_agents}, "
                f"n_edges={self.n_edges}, extents={self.extents})")


class ExpenditureMatrix:
    """Per-agent spending weights aligned with the supplier lists.

    weights_flat[e] is the fraction of agent row_agent[e]'s earnings spent
    on supplier sup_idx[e].  Rows are normalized to sum to one.
    """

    def __init__(self, net, weights_flat, scheme):
        w = np.asarray(weights_flat, dtype=np.float64)
        if w.shape != (net.n_edges,):
            raise TopologyError("weight vector does not match the edge count")
        if np.any(w < 0.0):
            raise TopologyError("negative expenditure weight")
        sums = np.bincount(net.row_agent, weights=w, minlength=net.n_agents)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise TopologyError("expenditure rows must sum to 1")
        self.net = net
        self.weights_flat = w
        self.scheme = scheme

    def row(self, i):
        """Weights of agent i, aligned with net.suppliers[i]."""
        return self.weights_flat[self.net.sup_ptr[i]:self.net.sup_ptr[i + 1]]

    def __repr__(self):
        return f"ExpenditureMatrix(scheme={self.scheme!r}, n_edges={len(self.weights_flat)})"


# ----------------------------------------------------------------------
# builders

def build_ring(n_agents):
    """1D ring: agent i buys from its left and right neighbors, in that order."""
    n = int(n_agents)
    if n < 3:
        raise TopologyError(f"ring needs at least 3 agents, got {n}")
    suppliers = [[(i - 1) % n, (i + 1) % n] for i in range(n)]
    return TradeNetwork(suppliers, np.arange(n), (n,), "ring")


def _lattice_coords(L):
    ids = np.arange(L * L)
    return np.stack([ids % L, ids // L], axis=1)  # (x, y), id = x + y*L


def _corner_suppliers(x, y, L, corner):
    """Suppliers of (x, y) for a two-direction corner, in R,T,L,B precedence."""
    dirs = sorted(corner, key=_DIR_PRECEDENCE.index)
    out = []
    for d in dirs:
        dx, dy = _DIRS[d]
        out.append((x + dx) % L + ((y + dy) % L) * L)
    return out


def build_corner_lattice(L, corner):
    """L x L periodic lattice where every agent's two suppliers sit in the
    same two directions, e.g. right and top for corner="RT"."""
    L = int(L)
    corner = corner.upper()
    if corner not in CORNERS:
        raise TopologyError(f"corner must be one of {CORNERS}, got {corner!r}")
    if L < 3:
        raise TopologyError(f"corner lattice needs L >= 3, got {L}")
    suppliers = [_corner_suppliers(i % L, i // L, L, corner) for i in range(L * L)]
    return TradeNetwork(suppliers, _lattice_coords(L), (L, L),
                        f"corner_{corner.lower()}")


# 2x2 tile of corner types, indexed [y % 2][x % 2]; chosen so that walking
# any unit loop visits the corner types in the cyclic order RT, RB, LB, LT
_MANHATTAN_TILE = (("RT", "RB"), ("LT", "LB"))


def build_manhattan(L):
    """Manhattan lattice: corner types tile in 2x2 blocks so every unit loop
    cycles through RT, RB, LB, LT.  Needs even L to close periodically."""
    L = int(L)
    if L < 4 or L % 2:
        raise TopologyError(f"manhattan lattice needs even L >= 4, got {L}")
    suppliers = []
    for i in range(L * L):
        x, y = i % L, i // L
        suppliers.append(_corner_suppliers(x, y, L, _MANHATTAN_TILE[y % 2][x % 2]))
    return TradeNetwork(suppliers, _lattice_coords(L), (L, L), "manhattan")


def build_f_lattice(L):
    """F lattice: even-(x+y) agents buy from left and right, odd ones from
    top and bottom.  Needs even L to close periodically."""
    L = int(L)
    if L < 4 or L % 2:
        raise TopologyError(f"f lattice needs even L >= 4, got {L}")
    suppliers = []
    for i in range(L * L):
        x, y = i % L, i // L
        if (x + y) % 2 == 0:
            row = [(x - 1) % L + y * L, (x + 1) % L + y * L]          # left, right
        else:
            row = [x + ((y + 1) % L) * L, x + ((y - 1) % L) * L]      # top, bottom
        suppliers.append(row)
    return TradeNetwork(suppliers, _lattice_coords(L), (L, L), "f_lattice")


def build_er_embedded(n_agents, alpha, rng):
    """Directed Erdos-Renyi graph embedded on a 1D index line.

    Each ordered pair (i, j), i != j, gets a supplier edge j -> i with
    probability alpha.  Agents left without suppliers are repaired with a
    single uniformly chosen supplier, so K_i >= 1 always holds.
    """
    n = int(n_agents)
    if n < 2:
        raise TopologyError(f"er network needs at least 2 agents, got {n}")
    if not 0.0 < alpha < 1.0:
        raise TopologyError(f"alpha must lie in (0, 1), got {alpha}")
    rng = np.random.default_rng(rng)
    mat = rng.random((n, n)) < alpha
    np.fill_diagonal(mat, False)
    suppliers = [list(np.flatnonzero(mat[i])) for i in range(n)]
    for i in range(n):
        if not suppliers[i]:
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1  # skip self
            suppliers[i] = [j]
    return TradeNetwork(suppliers, np.arange(n), (n,), "er_embedded")


def build_network(kind, *, n=None, L=None, alpha=None, corner=None, rng=None):
    """Dispatch to a builder from a kind tag and keyword parameters."""
    if kind == "ring":
        return build_ring(n)
    if kind == "manhattan":
        return build_manhattan(L)
    if kind == "f_lattice":
        return build_f_lattice(L)
    if kind.startswith("corner_"):
        return build_corner_lattice(L, kind.split("_", 1)[1])
    if kind == "er_embedded":
        return build_er_embedded(n, alpha, rng)
    raise TopologyError(f"unknown network kind {kind!r}")


# ----------------------------------------------------------------------
# expenditure weights

def assign_weights_fixed(net, a):
    """Fixed split on two-supplier networks: the first supplier in each
    agent's list gets weight a, the second gets 1 - a."""
    if not 0.0 < a < 1.0:
        raise TopologyError(f"choice parameter must lie in (0, 1), got {a}")
    for i in range(net.n_agents):
        if net.degree(i) != 2:
            raise TopologyError(
                f"fixed split needs exactly 2 suppliers everywhere; "
                f"agent {i} has {net.degree(i)}")
    w = np.tile([a, 1.0 - a], net.n_agents)
    return ExpenditureMatrix(net, w, f"fixed_split({a})")


def assign_weights_uniform(net, rng):
    """Random weights: K_i independent uniforms on (0, 1] per agent,
    normalized to row sum one."""
    rng = np.random.default_rng(rng)
    raw = 1.0 - rng.random(net.n_edges)  # (0, 1]
    sums = np.bincount(net.row_agent, weights=raw, minlength=net.n_agents)
    w = raw / sums[net.row_agent]
    return ExpenditureMatrix(net, w, "uniform_random")


# ----------------------------------------------------------------------
# distances

def jump_distance(pos1, pos2, extents, mode="raw", metric="norm"):
    """Distance between two embedded positions on a periodic domain.

    mode="raw" uses the plain per-component absolute difference (values up
    to L-1 occur); mode="min_image" wraps each component to at most half
    the extent.  metric="norm" returns the Euclidean norm of the component
    distances; metric="component" returns the first component's distance.
    """
    p1 = np.atleast_1d(np.asarray(pos1, dtype=np.float64))
    p2 = np.atleast_1d(np.asarray(pos2, dtype=np.float64))
    ext = np.atleast_1d(np.asarray(extents, dtype=np.float64))
    if p1.shape != p2.shape or p1.shape != ext.shape:
        raise TopologyError("position/extent dimension mismatch")
    if np.any(p1 < 0) or np.any(p1 >= ext) or np.any(p2 < 0) or np.any(p2 >= ext):
        raise TopologyError("coordinates must lie within the extents")
    d = np.abs(p1 - p2)
    if mode == "min_image":
        d = np.minimum(d, ext - d)
    elif mode != "raw":
        raise TopologyError(f"unknown distance mode {mode!r}")
    if metric == "norm":
        return float(np.sqrt(np.sum(d * d)))
    if metric == "component":
        return float(d[0])
    raise TopologyError(f"unknown distance metric {metric!r}")


# ----------------------------------------------------------------------
# plain-text serialization

NET_MAGIC = "soc-market-net v1"
WTS_MAGIC = "soc-market-wts v1"


def save_network(net, path):
    """Write a network in the line-oriented adjacency format."""
    lines = [NET_MAGIC,
             f"N {net.n_agents}",
             f"KIND {net.kind}",
             "EXTENTS " + " ".join(str(e) for e in net.extents)]
    for i, row in enumerate(net.suppliers):
        lines.append(f"{i} : " + " ".join(str(j) for j in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_network(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != NET_MAGIC:
        raise TopologyError(f"{path}: not a network file")
    n = int(lines[1].split()[1])
    kind = lines[2].split()[1]
    extents = tuple(int(v) for v in lines[3].split()[1:])
    suppliers = [None] * n
    for ln in lines[4:]:
        head, _, tail = ln.partition(":")
        suppliers[int(head)] = [int(v) for v in tail.split()]
    if len(extents) == 1:
        embedding = np.arange(n)
    else:
        L = extents[0]
        embedding = np.stack([np.arange(n) % L, np.arange(n) // L], axis=1)
    return TradeNetwork(suppliers, embedding, extents, kind)


def save_weights(wts, path):
    """Write an expenditure matrix aligned with the supplier order."""
    lines = [WTS_MAGIC]
    for i in range(wts.net.n_agents):
        lines.append(f"{i} : " + " ".join(repr(float(v)) for v in wts.row(i)))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_weights(net, path, scheme="loaded"):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != WTS_MAGIC:
        raise TopologyError(f"{path}: not a weights file")
    rows = [None] * net.n_agents
    for ln in lines[1:]:
        head, _, tail = ln.partition(":")
        rows[int(head)] = [float(v) for v in tail.split()]
    flat = np.concatenate([np.asarray(r) for r in rows])
    return ExpenditureMatrix(net, flat, scheme)
