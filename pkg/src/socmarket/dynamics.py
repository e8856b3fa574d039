"""Extremal market dynamics.

Each step: evaluate the market, find the agent with the least profit (the
loser), cut its price by a random factor eta in [0, eta_max), record the
step, repeat.  Two interchangeable engines drive the evaluation:

* full        -- recompute every agent each step (reference, O(N) per step)
* incremental -- after a single price change, recompute only the affected
                 neighborhood (production and wants of the changed agent
                 and its customers; demands of that set's suppliers; trades
                 over the union; profits over the union and its customers).

Both engines run the same scalar arithmetic in the same order, so their
loser sequences agree exactly, not just within tolerance.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConsistencyError, MarketDomainError
from .market import TWO_THIRDS, evaluate_market, expenditure_shares, MarketSnapshot
from .minheap import IndexedMinHeap

_SQRT = math.sqrt


@dataclass(frozen=True)
class SimConfig:
    """Run parameters.

    Initial prices are uniform on [price_floor, price_floor + 1).
    renorm_threshold is an absolute mean-price level below which all prices
    are divided by the current mean (an underflow guard that leaves the
    dynamics invariant); None resolves to 1e-6 times the initial mean.
    """
    price_floor: float = 10.0
    eta_max: float = 0.01
    total_steps: int = 1_000_000
    transient_steps: int = 100_000
    seed: int = 0
    renorm_threshold: Optional[float] = None

    def validate(self):
        if not self.price_floor > 0.0:
            raise ValueError(f"price_floor must be positive, got {self.price_floor}")
        if not 0.0 < self.eta_max < 1.0:
            raise ValueError(f"eta_max must lie in (0, 1), got {self.eta_max}")
        if not 0 <= self.transient_steps < self.total_steps:
            raise ValueError("need 0 <= transient_steps < total_steps")
        if self.renorm_threshold is not None and not self.renorm_threshold > 0.0:
            raise ValueError("renorm_threshold must be positive or None")
        return self


def init_prices(config, n_agents, rng):
    """Independent uniform prices on [price_floor, price_floor + 1)."""
    config.validate()
    return config.price_floor + np.random.default_rng(rng).random(n_agents)


def find_loser(profits):
    """Index of the minimum profit; ties broken by the lowest index."""
    profits = np.asarray(profits)
    if profits.size == 0:
        raise ValueError("empty profit vector")
    return int(np.argmin(profits))


def apply_price_cut(prices, loser, eta_max, rng):
    """Cut the loser's price by a uniform random factor eta in [0, eta_max).

    Returns (new price vector, eta drawn).
    """
    p = np.asarray(prices, dtype=np.float64).copy()
    eta = eta_max * float(np.random.default_rng(rng).random())
    p[loser] = p[loser] * (1.0 - eta)
    return p, eta


# ----------------------------------------------------------------------
# affected-set bookkeeping

def affected_sets(net, changed):
    """Agents whose quantities can change after one price change.

    Returns a dict with keys production, demand, traded, profit.  The
    dependency chain: production and wants change for the changed agent
    and its customers (A); demand changes for suppliers of A (B); traded
    for C = A | B; profit for C and customers of C.
    """
    prod = [changed] + net.customers[changed]
    seen = set(prod)
    dem = []
    dem_seen = set()
    for i in prod:
        for j in net.suppliers[i]:
            if j not in dem_seen:
                dem_seen.add(j)
                dem.append(j)
    traded = list(prod)
    for j in dem:
        if j not in seen:
            seen.add(j)
            traded.append(j)
    profit = list(traded)
    pseen = set(traded)
    for j in traded:
        for i in net.customers[j]:
            if i not in pseen:
                pseen.add(i)
                profit.append(i)
    return {"production": prod, "demand": dem, "traded": traded, "profit": profit}


# ----------------------------------------------------------------------
# engines

class MarketEngine:
    """Mutable market state with scalar update kernels.

    Hot state lives in plain Python lists (prices, productions, wants,
    demands, trades); profits additionally live in a numpy array so the
    activity count and the linear-scan argmin stay vectorized.
    """

    def __init__(self, net, wts, prices, incremental=True):
        n = net.n_agents
        p = np.asarray(prices, dtype=np.float64)
        if p.shape != (n,) or not np.all(p > 0.0):
            raise MarketDomainError("need one strictly positive price per agent")
        self.net = net
        self.wts = wts
        self.n = n
        self.incremental = incremental
        # adjacency as plain lists for the scalar kernels
        self._sup_ptr = net.sup_ptr.tolist()
        self._sup_idx = net.sup_idx.tolist()
        self._sup_rows = net.suppliers
        self._cust = net.customers
        self._in_edges = net.in_edges
        self._w = wts.weights_flat.tolist()
        # state
        self.p = p.tolist()
        self.psum = math.fsum(self.p)
        n_edges = net.n_edges
        self.qp = [0.0] * n
        self.wants = [0.0] * n_edges
        self.qW = [0.0] * n
        self.qt = [0.0] * n
        self.profit = np.zeros(n)
        self._mark = bytearray(n)
        self.touched_last = n  # profit recomputations in the last update
        self.recompute_all()
        self._heap = IndexedMinHeap(self.profit) if incremental else None

    # -- scalar kernels ------------------------------------------------

    def _prod_wants(self, i):
        p, w, sup_idx, wants = self.p, self._w, self._sup_idx, self.wants
        base, end = self._sup_ptr[i], self._sup_ptr[i + 1]
        pi = p[i]
        tot = 0.0
        for e in range(base, end):
            pr = w[e] * (pi / p[sup_idx[e]])
            wants[e] = pr
            tot += _SQRT(pr)
        q = tot ** TWO_THIRDS
        self.qp[i] = q
        for e in range(base, end):
            wants[e] = wants[e] * q

    def _demand(self, j):
        wants = self.wants
        acc = 0.0
        for e in self._in_edges[j]:
            acc += wants[e]
        self.qW[j] = acc

    def _profit(self, i):
        p, qt, qW, wants, sup_idx = self.p, self.qt, self.qW, self.wants, self._sup_idx
        acc = 0.0
        for e in range(self._sup_ptr[i], self._sup_ptr[i + 1]):
            j = sup_idx[e]
            dj = qW[j]
            if dj > 0.0:
                acc += (wants[e] / dj) * (p[j] * qt[j])
        s = p[i] * qt[i] - acc
        self.profit[i] = s
        return s

    # -- full and incremental updates -----------------------------------

    def recompute_all(self):
        n, qp, qW, qt = self.n, self.qp, self.qW, self.qt
        for i in range(n):
            self._prod_wants(i)
        for j in range(n):
            self._demand(j)
        for j in range(n):
            a, b = qp[j], qW[j]
            qt[j] = a if a < b else b
        for i in range(n):
            self._profit(i)
        self.touched_last = n

    def _recompute_after(self, c):
        """Update all quantities affected by a change of agent c's price.
        Returns the list of agents whose profit was recomputed."""
        mark = self._mark
        qp, qW, qt = self.qp, self.qW, self.qt
        cust, sup_rows = self._cust, self._sup_rows

        prod_set = [c] + cust[c]
        for i in prod_set:
            self._prod_wants(i)

        dem_set = []
        for i in prod_set:
            for j in sup_rows[i]:
                if not mark[j]:
                    mark[j] = 1
                    dem_set.append(j)
        for j in dem_set:
            self._demand(j)

        # traded set = prod_set | dem_set (mark currently holds dem_set)
        traded_set = list(dem_set)
        for i in prod_set:
            if not mark[i]:
                mark[i] = 1
                traded_set.append(i)
        for j in traded_set:
            a, b = qp[j], qW[j]
            qt[j] = a if a < b else b

        profit_set = list(traded_set)
        for j in traded_set:
            for i in cust[j]:
                if not mark[i]:
                    mark[i] = 1
                    profit_set.append(i)
        for i in profit_set:
            self._profit(i)
        for i in profit_set:
            mark[i] = 0
        self.touched_last = len(profit_set)
        return profit_set

    def apply_price_change(self, agent, new_price):
        if not new_price > 0.0:
            raise MarketDomainError("price must remain positive")
        old = self.p[agent]
        self.p[agent] = new_price
        self.psum += new_price - old
        if self.incremental:
            changed = self._recompute_after(agent)
            heap = self._heap
            profit = self.profit
            for i in changed:
                heap.update(i, profit[i])
        else:
            self.recompute_all()

    def renormalize(self):
        """Divide all prices by the current mean price (degree-1 homogeneity
        makes quantities invariant and rescales profits), then recompute."""
        self.psum = math.fsum(self.p)
        m = self.psum / self.n
        self.p = [v / m for v in self.p]
        self.psum = math.fsum(self.p)
        self.recompute_all()
        if self.incremental:
            self._heap = IndexedMinHeap(self.profit)
        return m

    def min_index(self):
        if self.incremental:
            return self._heap.min_index()
        return int(np.argmin(self.profit))

    # -- validation ------------------------------------------------------

    def audit(self, rtol=1e-10):
        """Compare state against a fresh vectorized evaluation."""
        snap = evaluate_market(np.asarray(self.p), self.net, self.wts)
        for name, mine, ref in (("production", self.qp, snap.production),
                                ("wants", self.wants, snap.wants),
                                ("demand", self.qW, snap.demand),
                                ("traded", self.qt, snap.traded),
                                ("profit", self.profit, snap.profit)):
            mine = np.asarray(mine)
            scale = max(1.0, float(np.max(np.abs(ref))))
            err = float(np.max(np.abs(mine - ref)))
            if err > rtol * scale:
                raise ConsistencyError(
                    f"incremental state diverged on {name}: max err {err:.3e}")

    def to_snapshot(self):
        p = np.asarray(self.p)
        wants = np.asarray(self.wants)
        demand = np.asarray(self.qW)
        return MarketSnapshot(
            net=self.net, prices=p, production=np.asarray(self.qp),
            wants=wants, demand=demand, traded=np.asarray(self.qt),
            shares=expenditure_shares(wants, demand, self.net),
            profit=self.profit.copy())

    @classmethod
    def from_snapshot(cls, snap, wts, incremental=True):
        eng = cls.__new__(cls)
        net = snap.net
        eng.net, eng.wts, eng.n = net, wts, net.n_agents
        eng.incremental = incremental
        eng._sup_ptr = net.sup_ptr.tolist()
        eng._sup_idx = net.sup_idx.tolist()
        eng._sup_rows = net.suppliers
        eng._cust = net.customers
        eng._in_edges = net.in_edges
        eng._w = wts.weights_flat.tolist()
        eng.p = snap.prices.tolist()
        eng.psum = math.fsum(eng.p)
        eng.qp = snap.production.tolist()
        eng.wants = snap.wants.tolist()
        eng.qW = snap.demand.tolist()
        eng.qt = snap.traded.tolist()
        eng.profit = snap.profit.copy()
        eng._mark = bytearray(eng.n)
        eng.touched_last = 0
        eng._heap = IndexedMinHeap(eng.profit) if incremental else None
        return eng


def incremental_evaluate(prev, changed, prices, net, wts):
    """Re-evaluate after exactly one price change, reusing the previous
    snapshot for everything outside the affected neighborhood.

    Raises ConsistencyError if `prices` differs from the snapshot's price
    vector anywhere other than `changed`.
    """
    p = np.asarray(prices, dtype=np.float64)
    diff = np.flatnonzero(p != prev.prices)
    if not np.array_equal(diff, [changed]) and diff.size != 0:
        raise ConsistencyError(
            f"snapshot is stale: prices differ at {diff.tolist()}, "
            f"expected only {changed}")
    eng = MarketEngine.from_snapshot(prev, wts, incremental=True)
    eng.apply_price_change(changed, float(p[changed]))
    return eng.to_snapshot()


# ----------------------------------------------------------------------
# run records

@dataclass
class RunRecord:
    """Per-step time series of one run.

    Arrays cover steps [start_step, start_step + len).  Statistics should
    use the post-transient window (helpers below).
    """
    n_agents: int
    extents: tuple
    transient_steps: int
    loser_index: np.ndarray
    min_profit: np.ndarray
    mean_price: np.ndarray
    renorm_flags: np.ndarray
    embedding: np.ndarray
    kind: str = "custom"
    config: Optional[SimConfig] = None
    activity: Optional[np.ndarray] = None
    activity_f0: Optional[float] = None
    profits_stream: Optional[np.ndarray] = None
    start_step: int = 0

    @property
    def total_steps(self):
        return self.start_step + len(self.loser_index)

    @property
    def positions(self):
        """Embedding coordinates of the loser at each step."""
        return self.embedding[self.loser_index]

    def post(self, arr):
        """Slice a per-step array down to the post-transient window."""
        lo = max(0, self.transient_steps - self.start_step)
        return arr[lo:]

    def concat(self, other):
        """Join a resumed continuation onto this record."""
        if other.start_step != self.total_steps:
            raise ValueError(
                f"records are not contiguous: {self.total_steps} then {other.start_step}")
        join = lambda a, b: None if a is None else np.concatenate([a, b])
        return RunRecord(
            n_agents=self.n_agents, extents=self.extents,
            transient_steps=self.transient_steps, kind=self.kind,
            loser_index=np.concatenate([self.loser_index, other.loser_index]),
            min_profit=np.concatenate([self.min_profit, other.min_profit]),
            mean_price=np.concatenate([self.mean_price, other.mean_price]),
            renorm_flags=np.concatenate([self.renorm_flags, other.renorm_flags]),
            embedding=self.embedding, config=self.config,
            activity=join(self.activity, other.activity),
            activity_f0=self.activity_f0,
            profits_stream=join(self.profits_stream, other.profits_stream),
            start_step=self.start_step)

    # -- columnar text format -------------------------------------------

    def save_text(self, path, extra_meta=None):
        dim = 1 if self.embedding.ndim == 1 else self.embedding.shape[1]
        pos_cols = ["pos_x"] if dim == 1 else ["pos_x", "pos_y"]
        cols = ["t", "loser_idx"] + pos_cols + ["min_profit", "mean_price", "renorm_flag"]
        if self.activity is not None:
            cols.append("activity")
        pos = self.positions
        if pos.ndim == 1:
            pos = pos[:, None]
        with open(path, "w") as fh:
            fh.write("# soc-market-run v1\n")
            fh.write(f"# n_agents {self.n_agents}\n")
            fh.write(f"# kind {self.kind}\n")
            fh.write("# extents " + " ".join(str(e) for e in self.extents) + "\n")
            fh.write(f"# transient_steps {self.transient_steps}\n")
            fh.write(f"# start_step {self.start_step}\n")
            if self.activity_f0 is not None:
                fh.write(f"# activity_f0 {self.activity_f0!r}\n")
            if self.config is not None:
                c = self.config
                fh.write(f"# config seed {c.seed} eta_max {c.eta_max!r} "
                         f"price_floor {c.price_floor!r} total_steps {c.total_steps}\n")
            for key, value in (extra_meta or {}).items():
                fh.write(f"# {key} {value}\n")
            fh.write(" ".join(cols) + "\n")
            chunk = []
            act = self.activity
            for k in range(len(self.loser_index)):
                row = [str(self.start_step + k), str(self.loser_index[k])]
                row += [str(v) for v in pos[k]]
                row += [repr(float(self.min_profit[k])), repr(float(self.mean_price[k])),
                        "1" if self.renorm_flags[k] else "0"]
                if act is not None:
                    row.append(str(act[k]))
                chunk.append(" ".join(row))
                if len(chunk) == 65536:
                    fh.write("\n".join(chunk) + "\n")
                    chunk = []
            if chunk:
                fh.write("\n".join(chunk) + "\n")

    @classmethod
    def load_text(cls, path):
        meta = {}
        with open(path) as fh:
            line = fh.readline()
            if not line.startswith("# soc-market-run"):
                raise ValueError(f"{path}: not a run record")
            header = None
            while True:
                line = fh.readline()
                if line.startswith("#"):
                    parts = line[1:].split()
                    meta[parts[0]] = parts[1:]
                else:
                    header = line.split()
                    break
            data = np.loadtxt(fh, ndmin=2)
        n_agents = int(meta["n_agents"][0])
        extents = tuple(int(v) for v in meta["extents"])
        col = {name: k for k, name in enumerate(header)}
        if len(extents) == 1:
            embedding = np.arange(n_agents)
        else:
            L = extents[0]
            ids = np.arange(n_agents)
            embedding = np.stack([ids % L, ids // L], axis=1)
        activity = None
        if "activity" in col:
            activity = data[:, col["activity"]].astype(np.int32)
        f0 = float(meta["activity_f0"][0]) if "activity_f0" in meta else None
        config = None
        if "config" in meta:
            kv = meta["config"]
            fields = dict(zip(kv[::2], kv[1::2]))
            config = SimConfig(
                seed=int(fields["seed"]),
                eta_max=float(fields["eta_max"]),
                price_floor=float(fields["price_floor"]),
                total_steps=int(fields["total_steps"]),
                transient_steps=int(meta["transient_steps"][0]))
        return cls(
            n_agents=n_agents, extents=extents,
            kind=meta.get("kind", ["custom"])[0],
            config=config,
            transient_steps=int(meta["transient_steps"][0]),
            loser_index=data[:, col["loser_idx"]].astype(np.int64),
            min_profit=data[:, col["min_profit"]],
            mean_price=data[:, col["mean_price"]],
            renorm_flags=data[:, col["renorm_flag"]].astype(bool),
            embedding=embedding, activity=activity, activity_f0=f0,
            start_step=int(meta.get("start_step", ["0"])[0]))


# ----------------------------------------------------------------------
# checkpoints (fixed-width little-endian, version-tagged)

_CKPT_MAGIC = b"SOCMKCP1"


def save_checkpoint(path, t, prices, rng, psum, renorm_level):
    state = rng.bit_generator.state
    if state["bit_generator"] != "PCG64":
        raise ValueError("checkpoints support the PCG64 generator only")
    p = np.asarray(prices, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<QQdd", t, len(p), psum, renorm_level))
        fh.write(state["state"]["state"].to_bytes(16, "little"))
        fh.write(state["state"]["inc"].to_bytes(16, "little"))
        fh.write(struct.pack("<II", state["has_uint32"], state["uinteger"]))
        fh.write(p.tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        t, n, psum, renorm_level = struct.unpack("<QQdd", fh.read(32))
        s = int.from_bytes(fh.read(16), "little")
        inc = int.from_bytes(fh.read(16), "little")
        has_u32, uint = struct.unpack("<II", fh.read(8))
        prices = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": s, "inc": inc},
        "has_uint32": has_u32, "uinteger": uint}
    return t, prices, rng, psum, renorm_level


# ----------------------------------------------------------------------
# simulation driver

class Simulation:
    """Owns an engine, the random source, and the step loop."""

    def __init__(self, net, wts, config, engine="incremental"):
        config.validate()
        if engine not in ("incremental", "full"):
            raise ValueError(f"engine must be incremental or full, got {engine!r}")
        self.net, self.wts, self.config = net, wts, config
        self.engine_kind = engine
        self._rng = np.random.default_rng(config.seed)
        prices = config.price_floor + self._rng.random(net.n_agents)
        self._eng = MarketEngine(net, wts, prices, incremental=(engine == "incremental"))
        self._t = 0
        if config.renorm_threshold is None:
            self._renorm_level = 1e-6 * (self._eng.psum / net.n_agents)
        else:
            self._renorm_level = config.renorm_threshold

    @property
    def t(self):
        return self._t

    @property
    def engine(self):
        return self._eng

    def _step_impl(self, f0, stream_slot=None):
        eng = self._eng
        renormed = False
        mp = eng.psum / eng.n
        if mp < self._renorm_level:
            eng.renormalize()
            renormed = True
            mp = eng.psum / eng.n
        profit = eng.profit
        loser = eng.min_index()
        smin = profit[loser]
        act = -1 if f0 is None else int(np.count_nonzero(profit < f0 * mp))
        if stream_slot is not None:
            stream_slot[:] = profit
        eta = self.config.eta_max * self._rng.random()
        eng.apply_price_change(loser, eng.p[loser] * (1.0 - eta))
        t = self._t
        self._t = t + 1
        return t, loser, smin, mp, act, eta, renormed

    def step(self, activity_f0=None):
        """Advance one trading day; returns (t, loser, min_profit,
        mean_price, activity, eta, renormalized)."""
        return self._step_impl(activity_f0)

    def run(self, activity_f0=None, collect_profits=False, audit_interval=0,
            checkpoint_path=None, checkpoint_every=0):
        """Run through config.total_steps and return the RunRecord."""
        cfg = self.config
        total = cfg.total_steps
        start = self._t
        count = total - start
        if count <= 0:
            raise ValueError("simulation already past total_steps")
        loser_idx = np.empty(count, dtype=np.int32)
        min_profit = np.empty(count)
        mean_price = np.empty(count)
        renorm = np.zeros(count, dtype=bool)
        activity = None if activity_f0 is None else np.empty(count, dtype=np.int32)
        stream = None
        if collect_profits:
            stream = np.empty((count, self.net.n_agents))
        eng = self._eng
        step = self._step_impl
        for k in range(count):
            slot = None if stream is None else stream[k]
            t, loser, smin, mp, act, _, renormed = step(activity_f0, slot)
            loser_idx[k] = loser
            min_profit[k] = smin
            mean_price[k] = mp
            if renormed:
                renorm[k] = True
            if activity is not None:
                activity[k] = act
            if audit_interval and (t + 1) % audit_interval == 0:
                eng.audit()
            if checkpoint_every and (t + 1) % checkpoint_every == 0 and checkpoint_path:
                save_checkpoint(checkpoint_path, t + 1, eng.p, self._rng,
                                eng.psum, self._renorm_level)
        return RunRecord(
            n_agents=self.net.n_agents, extents=self.net.extents,
            kind=self.net.kind,
            transient_steps=cfg.transient_steps, loser_index=loser_idx,
            min_profit=min_profit, mean_price=mean_price, renorm_flags=renorm,
            embedding=self.net.embedding, config=cfg, activity=activity,
            activity_f0=activity_f0, profits_stream=stream, start_step=start)

    @classmethod
    def resume(cls, net, wts, config, checkpoint_path, engine="incremental"):
        """Rebuild a simulation from a checkpoint; continues at step t."""
        t, prices, rng, psum, renorm_level = load_checkpoint(checkpoint_path)
        sim = cls.__new__(cls)
        sim.net, sim.wts, sim.config = net, wts, config.validate()
        sim.engine_kind = engine
        sim._rng = rng
        sim._eng = MarketEngine(net, wts, prices, incremental=(engine == "incremental"))
        sim._eng.psum = psum
        sim._t = t
        sim._renorm_level = renorm_level
        return sim


def run(net, wts, config, engine="incremental", **kwargs):
    """Build a Simulation and run it to completion."""
    return Simulation(net, wts, config, engine=engine).run(**kwargs)
