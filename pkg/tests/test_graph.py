import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dhinf.graph import (
    Topology,
    TopologyError,
    mirror,
    neighbors,
    pattern,
    spectrum,
    symmetrize,
)

FIG4_EDGES = ((1, 5), (2, 1), (3, 4), (4, 2), (4, 7), (5, 6), (6, 3), (7, 8), (8, 5))


def ring(n):
    return Topology(n, tuple((i, i % n + 1) for i in range(1, n + 1)))


class TestTopology:
    def test_rejects_self_loop(self):
        with pytest.raises(TopologyError):
            Topology(2, ((1, 1),))

    def test_rejects_duplicate(self):
        with pytest.raises(TopologyError):
            Topology(2, ((1, 2), (1, 2)))

    def test_rejects_out_of_range(self):
        with pytest.raises(TopologyError):
            Topology(2, ((1, 3),))

    def test_rejects_disconnected(self):
        with pytest.raises(TopologyError):
            Topology(4, ((1, 2), (3, 4)))

    def test_edges_sorted(self):
        t = Topology(3, ((3, 1), (1, 2), (2, 3)))
        assert t.edges == ((1, 2), (2, 3), (3, 1))


class TestMirror:
    def test_single_directed_edge(self):
        t = Topology(2, ((1, 2),))
        assert mirror(t).edges == ((2, 1),)

    def test_already_symmetric(self):
        t = Topology(2, ((1, 2), (2, 1)))
        assert mirror(t).edges == ()

    def test_fig4(self):
        t = Topology(8, FIG4_EDGES)
        m = mirror(t)
        assert len(m.edges) == 9
        assert set(m.edges) == {(k, i) for i, k in FIG4_EDGES}
        assert len(set(t.edges) | set(m.edges)) == 18


class TestSymmetrize:
    def test_single_edge(self):
        assert symmetrize(Topology(2, ((1, 2),))).edges == ((1, 2), (2, 1))

    def test_fig4_communication_graph(self):
        s = symmetrize(Topology(8, FIG4_EDGES))
        assert len(s.edges) == 18
        assert all((k, i) in set(s.edges) for i, k in s.edges)

    def test_idempotent(self):
        t = symmetrize(Topology(3, ((1, 2), (2, 3))))
        assert symmetrize(t).edges == t.edges


class TestNeighbors:
    def test_star_center(self):
        t = symmetrize(Topology(4, ((1, 2), (3, 2), (4, 2))))
        assert neighbors(t, 2) == [1, 3, 4]

    def test_star_leaf(self):
        t = symmetrize(Topology(4, ((1, 2), (3, 2), (4, 2))))
        assert neighbors(t, 1) == [2]

    def test_fig4_node5(self):
        s = symmetrize(Topology(8, FIG4_EDGES))
        assert neighbors(s, 5) == [1, 6, 8]

    def test_out_of_range(self):
        with pytest.raises(TopologyError):
            neighbors(Topology(2, ((1, 2),)), 3)


class TestPattern:
    def test_two_cycle(self):
        p = pattern(Topology(2, ((1, 2), (2, 1))))
        assert np.array_equal(p.entries, [[0, 1], [1, 0]])

    def test_example1_hub(self):
        t = symmetrize(Topology(4, ((1, 2), (2, 3), (2, 4))))
        p = pattern(t)
        expected = np.zeros((4, 4))
        for i, k in [(1, 2), (2, 1), (2, 3), (2, 4), (3, 2), (4, 2)]:
            expected[i - 1, k - 1] = 1
        assert np.array_equal(p.entries, expected)

    def test_weight_on_absent_edge(self):
        with pytest.raises(TopologyError):
            pattern(Topology(2, ((1, 2),)), weights={(2, 1): 2.0})


class TestSpectrum:
    def test_two_cycle(self):
        eig, normal = spectrum(pattern(Topology(2, ((1, 2), (2, 1)))))
        assert sorted(np.real(eig)) == pytest.approx([-1.0, 1.0])
        assert normal

    def test_four_cycle(self):
        # independent oracle: direct eigensolve of the explicit adjacency
        adj = np.array([[0, 1, 0, 1], [1, 0, 1, 0], [0, 1, 0, 1], [1, 0, 1, 0]], float)
        oracle = np.sort(np.linalg.eigvalsh(adj))
        eig, normal = spectrum(pattern(symmetrize(ring(4))))
        assert np.sort(np.real(eig)) == pytest.approx(oracle)
        assert np.sort(np.real(eig)) == pytest.approx([-2.0, 0.0, 0.0, 2.0])
        assert normal

    def test_triangular_not_normal(self):
        eig, normal = spectrum(pattern(Topology(3, ((1, 2), (2, 3)))))
        assert not normal


@st.composite
def topologies(draw):
    n = draw(st.integers(2, 7))
    # random spanning tree plus extra directed edges keeps it connected
    extra = draw(st.sets(st.tuples(st.integers(1, n), st.integers(1, n)), max_size=8))
    edges = {(i, draw(st.integers(1, i - 1))) for i in range(2, n + 1)}
    edges |= {(i, k) for i, k in extra if i != k}
    return Topology(n, tuple(edges))


@settings(max_examples=40, deadline=None)
@given(topologies())
def test_mirror_union_is_symmetrize(t):
    got = set(t.edges) | set(mirror(t).edges)
    assert got == set(symmetrize(t).edges)


@settings(max_examples=40, deadline=None)
@given(topologies())
def test_symmetrized_pattern_symmetric(t):
    p = pattern(symmetrize(t))
    assert np.array_equal(p.entries, p.entries.T)
    assert set(np.unique(p.entries)) <= {0.0, 1.0}


@settings(max_examples=40, deadline=None)
@given(topologies())
def test_neighbor_symmetry(t):
    s = symmetrize(t)
    for i in range(1, s.n_nodes + 1):
        for k in neighbors(s, i):
            assert i in neighbors(s, k)


@settings(max_examples=40, deadline=None)
@given(topologies())
def test_symmetric_pattern_real_spectrum(t):
    eig, normal = spectrum(pattern(symmetrize(t)))
    assert np.abs(np.imag(eig)).max() <= 1e-9
    assert normal
