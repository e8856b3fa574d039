import numpy as np
import pytest

import socmarket as sm
from socmarket.errors import TopologyError

from conftest import random_instance


class TestRing:
    def test_smallest_ring_wraps(self):
        net = sm.build_ring(3)
        assert net.suppliers[0] == [2, 1]

    def test_ring_is_its_own_transpose(self):
        net = sm.build_ring(5)
        assert net.suppliers[2] == [1, 3]
        assert net.customers[2] == [1, 3]

    def test_below_minimum_size(self):
        with pytest.raises(TopologyError):
            sm.build_ring(2)

    def test_embedding_is_index(self):
        net = sm.build_ring(7)
        assert net.extents == (7,)
        assert np.array_equal(net.embedding, np.arange(7))


class TestCornerLattice:
    def test_rt_origin(self):
        net = sm.build_corner_lattice(3, "RT")
        coords = [tuple(net.embedding[j]) for j in net.suppliers[0]]
        assert coords == [(1, 0), (0, 1)]

    def test_lb_wraps(self):
        net = sm.build_corner_lattice(3, "LB")
        coords = [tuple(net.embedding[j]) for j in net.suppliers[0]]
        assert coords == [(2, 0), (0, 2)]

    def test_rt_customers_are_left_and_bottom(self):
        L = 3
        net = sm.build_corner_lattice(L, "RT")
        for i in range(net.n_agents):
            x, y = net.embedding[i]
            expect = {((x - 1) % L) + y * L, x + ((y - 1) % L) * L}
            assert set(net.customers[i]) == expect
            assert len(net.customers[i]) == 2

    def test_too_small(self):
        with pytest.raises(TopologyError):
            sm.build_corner_lattice(2, "RT")

    def test_unknown_corner(self):
        with pytest.raises(TopologyError):
            sm.build_corner_lattice(4, "XY")

    @pytest.mark.parametrize("corner", ["RT", "LT", "LB", "RB"])
    def test_supplier_order_follows_precedence(self, corner):
        # canonical direction precedence is R, T, L, B
        net = sm.build_corner_lattice(5, corner)
        order = {"R": 0, "T": 1, "L": 2, "B": 3}
        dirs = sorted(corner, key=lambda d: order[d])
        L = 5
        off = {"R": (1, 0), "T": (0, 1), "L": (-1, 0), "B": (0, -1)}
        for i in (0, 7, 24):
            x, y = net.embedding[i]
            expect = [((x + off[d][0]) % L) + ((y + off[d][1]) % L) * L for d in dirs]
            assert net.suppliers[i] == expect


def _corner_type(net, i, L):
    x, y = net.embedding[i]
    sup = {tuple(net.embedding[j]) for j in net.suppliers[i]}
    got = []
    for d, (dx, dy) in (("R", (1, 0)), ("T", (0, 1)), ("L", (-1, 0)), ("B", (0, -1))):
        if ((x + dx) % L, (y + dy) % L) in sup:
            got.append(d)
    return frozenset(got)


class TestManhattan:
    def test_unit_loop_cycles_through_all_corners(self):
        L = 4
        net = sm.build_manhattan(L)
        cycle = [frozenset(c) for c in ("RT", "RB", "LB", "LT")]
        # walk every unit loop; the four corner types must appear in cyclic
        # order (either orientation, any starting point)
        for x in range(L):
            for y in range(L):
                loop = [(x, y), ((x + 1) % L, y), ((x + 1) % L, (y + 1) % L),
                        (x, (y + 1) % L)]
                types = [_corner_type(net, a + b * L, L) for a, b in loop]
                assert set(types) == set(cycle)
                start = cycle.index(types[0])
                fwd = [cycle[(start + k) % 4] for k in range(4)]
                bwd = [cycle[(start - k) % 4] for k in range(4)]
                assert types in (fwd, bwd)

    def test_degrees(self):
        net = sm.build_manhattan(4)
        assert all(len(s) == 2 for s in net.suppliers)
        assert all(len(c) == 2 for c in net.customers)

    @pytest.mark.parametrize("L", [5, 3, 2])
    def test_parity_and_size(self, L):
        with pytest.raises(TopologyError):
            sm.build_manhattan(L)


class TestFLattice:
    def test_even_parity_buys_left_right(self):
        net = sm.build_f_lattice(4)
        coords = [tuple(net.embedding[j]) for j in net.suppliers[0]]
        assert coords == [(3, 0), (1, 0)]

    def test_odd_parity_buys_top_bottom(self):
        net = sm.build_f_lattice(4)
        agent = 1  # (1, 0), odd parity
        coords = [tuple(net.embedding[j]) for j in net.suppliers[agent]]
        assert coords == [(1, 1), (1, 3)]

    def test_degrees(self):
        net = sm.build_f_lattice(4)
        assert all(len(s) == 2 for s in net.suppliers)
        assert all(len(c) == 2 for c in net.customers)

    def test_odd_size_rejected(self):
        with pytest.raises(TopologyError):
            sm.build_f_lattice(5)


class TestErEmbedded:
    def test_tiny_alpha_leaves_only_repairs(self):
        net = sm.build_er_embedded(30, 1e-12, np.random.default_rng(0))
        assert all(len(s) == 1 for s in net.suppliers)

    def test_mean_degree_tracks_n_alpha(self):
        # <K> = N*alpha; N=100, alpha=0.05 -> about 5, averaged over seeds
        total = 0
        n_seeds = 100
        for seed in range(n_seeds):
            net = sm.build_er_embedded(100, 0.05, np.random.default_rng(seed))
            total += net.n_edges / 100
        assert abs(total / n_seeds - 5.0) < 0.5

    def test_same_seed_same_edges(self):
        a = sm.build_er_embedded(50, 0.1, np.random.default_rng(42))
        b = sm.build_er_embedded(50, 0.1, np.random.default_rng(42))
        assert a.suppliers == b.suppliers

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_bounds(self, alpha):
        with pytest.raises(TopologyError):
            sm.build_er_embedded(10, alpha, np.random.default_rng(0))

    def test_repair_touches_only_supplierless_agents(self):
        # replay the Bernoulli stage with the same stream: agents that drew
        # at least one edge must keep exactly those edges
        n, alpha, seed = 40, 0.04, 7
        rng = np.random.default_rng(seed)
        mat = rng.random((n, n)) < alpha
        np.fill_diagonal(mat, False)
        net = sm.build_er_embedded(n, alpha, np.random.default_rng(seed))
        for i in range(n):
            drawn = list(np.flatnonzero(mat[i]))
            if drawn:
                assert net.suppliers[i] == drawn
            else:
                assert len(net.suppliers[i]) == 1
                assert net.suppliers[i][0] != i


class TestInvariants:
    def test_transpose_consistency_and_degree_bookkeeping(self, rng):
        for _ in range(25):
            net, _, _ = random_instance(rng)
            rebuilt = [[] for _ in range(net.n_agents)]
            for i, row in enumerate(net.suppliers):
                for j in row:
                    rebuilt[j].append(i)
            assert rebuilt == net.customers
            assert sum(map(len, net.suppliers)) == net.n_edges
            assert sum(map(len, net.customers)) == net.n_edges

    def test_lattice_regularity(self):
        nets = [sm.build_corner_lattice(4, c) for c in ("RT", "LT", "LB", "RB")]
        nets += [sm.build_manhattan(4), sm.build_f_lattice(4)]
        for net in nets:
            assert all(len(s) == 2 for s in net.suppliers)
            assert all(len(c) == 2 for c in net.customers)

    def test_no_self_edges_rejected(self):
        with pytest.raises(TopologyError):
            sm.TradeNetwork([[0], [0]], np.arange(2), (2,), "custom")


class TestWeights:
    def test_fixed_split_half(self):
        net = sm.build_corner_lattice(4, "RT")
        wts = sm.assign_weights_fixed(net, 0.5)
        for i in range(net.n_agents):
            assert np.array_equal(wts.row(i), [0.5, 0.5])

    def test_fixed_split_quarter(self):
        net = sm.build_manhattan(4)
        wts = sm.assign_weights_fixed(net, 0.25)
        for i in range(net.n_agents):
            assert np.array_equal(wts.row(i), [0.25, 0.75])
            assert wts.row(i).sum() == 1.0

    def test_fixed_split_needs_two_suppliers(self):
        net = sm.build_er_embedded(30, 0.2, np.random.default_rng(3))
        assert any(len(s) != 2 for s in net.suppliers)
        with pytest.raises(TopologyError):
            sm.assign_weights_fixed(net, 0.5)

    @pytest.mark.parametrize("a", [0.0, 1.0, -1.0, 2.0])
    def test_fixed_split_bounds(self, a):
        net = sm.build_ring(4)
        with pytest.raises(TopologyError):
            sm.assign_weights_fixed(net, a)

    def test_uniform_single_supplier_gets_everything(self):
        net = sm.build_er_embedded(20, 1e-12, np.random.default_rng(1))
        wts = sm.assign_weights_uniform(net, np.random.default_rng(2))
        assert np.array_equal(wts.weights_flat, np.ones(20))

    def test_uniform_deterministic(self):
        net = sm.build_er_embedded(30, 0.2, np.random.default_rng(5))
        a = sm.assign_weights_uniform(net, np.random.default_rng(9))
        b = sm.assign_weights_uniform(net, np.random.default_rng(9))
        assert np.array_equal(a.weights_flat, b.weights_flat)

    def test_rows_normalized_both_schemes(self, rng):
        for _ in range(25):
            net, wts, _ = random_instance(rng)
            sums = np.bincount(net.row_agent, weights=wts.weights_flat,
                               minlength=net.n_agents)
            assert np.max(np.abs(sums - 1.0)) <= 1e-12
            assert np.all(wts.weights_flat >= 0.0)


class TestJumpDistance:
    def test_1d_raw_and_min_image(self):
        assert sm.jump_distance(1, 9, 10, mode="raw") == 8
        assert sm.jump_distance(1, 9, 10, mode="min_image") == 2

    def test_2d_norm(self):
        assert sm.jump_distance((0, 0), (3, 0), (10, 10)) == 3.0
        assert sm.jump_distance((0, 0), (5, 5), (10, 10)) == pytest.approx(np.sqrt(50))

    def test_component_metric(self):
        assert sm.jump_distance((0, 3), (4, 6), (10, 10), metric="component") == 4.0

    def test_symmetry(self, rng):
        for _ in range(50):
            ext = (int(rng.integers(4, 20)), int(rng.integers(4, 20)))
            p = (int(rng.integers(ext[0])), int(rng.integers(ext[1])))
            q = (int(rng.integers(ext[0])), int(rng.integers(ext[1])))
            for mode in ("raw", "min_image"):
                assert sm.jump_distance(p, q, ext, mode=mode) == \
                    sm.jump_distance(q, p, ext, mode=mode)

    def test_dimension_mismatch(self):
        with pytest.raises(TopologyError):
            sm.jump_distance((1, 2), (0, 1, 3), (5, 5))

    def test_out_of_range(self):
        with pytest.raises(TopologyError):
            sm.jump_distance(11, 2, 10)


class TestSerialization:
    def test_network_roundtrip(self, rng, tmp_path):
        for _ in range(8):
            net, wts, _ = random_instance(rng)
            npath = tmp_path / "net.txt"
            wpath = tmp_path / "wts.txt"
            sm.save_network(net, npath)
            back = sm.load_network(npath)
            assert back.suppliers == net.suppliers
            assert back.customers == net.customers
            assert back.kind == net.kind
            assert back.extents == net.extents
            assert np.array_equal(back.embedding, net.embedding)
            sm.save_weights(wts, wpath)
            wback = sm.load_weights(back, wpath)
            assert np.array_equal(wback.weights_flat, wts.weights_flat)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.txt"
        p.write_text("nonsense\n")
        with pytest.raises(TopologyError):
            sm.load_network(p)
