"""State-space models of subsystems, controllers and the assembled closed loop.

Channel conventions
-------------------
The interconnection channel of node ``i`` stacks one block per neighbor
``k`` in ascending order. For a directed edge ``(i, k)`` (node i influenced
by k) the incoming signal ``p_ik`` satisfies ``p_ik = P_ik q_ki``. Mirror
edges added to complete the graph to an undirected one carry
zero-dimensional padding channels, so padded and unpadded assemblies are
numerically identical.

The closed-loop channel of node ``i`` groups, per neighbor, the plant block
followed by the controller block.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import EdgeChannel, Topology, TopologyError, neighbors, symmetrize

__all__ = [
    "SubsystemSS",
    "ControllerSS",
    "InterconnectionMatrix",
    "InterconnectedSystem",
    "ClosedLoopSS",
    "PerformanceAugmentation",
    "GlobalPlant",
    "DimensionError",
    "assemble_interconnection",
    "realize_coupled",
    "static_state_feedback",
    "close_loop",
    "flatten",
    "augment_performance",
    "default_augmentation",
]

EIG_FLOOR = 1e-12
PINV_RCOND = 1e-12
ORTHO_TOL = 1e-9


class DimensionError(ValueError):
    """Inconsistent matrix dimensions."""


def _arr(m, rows=None, cols=None, name=""):
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if rows is not None and a.shape[0] != rows:
        raise DimensionError(f"{name}: expected {rows} rows, got {a.shape[0]}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionError(f"{name}: expected {cols} cols, got {a.shape[1]}")
    return a


@dataclass(frozen=True)
class SubsystemSS:
    """One subsystem's realization.

    Signals: state x, control u, measurement y, disturbance w, performance z,
    incoming interconnection p, outgoing interconnection q. The structurally
    zero feedthroughs of the realization (y from u, q from p) have no fields.
    """

    a: np.ndarray
    b_u: np.ndarray
    b_w: np.ndarray
    b_p: np.ndarray
    c_y: np.ndarray
    c_z: np.ndarray
    c_q: np.ndarray
    d_yw: np.ndarray
    d_yp: np.ndarray
    d_zu: np.ndarray
    d_zw: np.ndarray
    d_zp: np.ndarray
    d_qw: np.ndarray

    def __post_init__(self):
        a = _arr(self.a, name="a")
        n_x = a.shape[0]
        if a.shape != (n_x, n_x):
            raise DimensionError("a must be square")
        b_u = _arr(self.b_u, rows=n_x, name="b_u")
        b_w = _arr(self.b_w, rows=n_x, name="b_w")
        b_p = _arr(self.b_p, rows=n_x, name="b_p")
        n_u, n_w, n_p = b_u.shape[1], b_w.shape[1], b_p.shape[1]
        c_y = _arr(self.c_y, cols=n_x, name="c_y")
        c_z = _arr(self.c_z, cols=n_x, name="c_z")
        c_q = _arr(self.c_q, cols=n_x, name="c_q")
        n_y, n_z, n_q = c_y.shape[0], c_z.shape[0], c_q.shape[0]
        for nm, val, r, c in [
            ("d_yw", self.d_yw, n_y, n_w),
            ("d_yp", self.d_yp, n_y, n_p),
            ("d_zu", self.d_zu, n_z, n_u),
            ("d_zw", self.d_zw, n_z, n_w),
            ("d_zp", self.d_zp, n_z, n_p),
            ("d_qw", self.d_qw, n_q, n_w),
        ]:
            object.__setattr__(self, nm, _arr(val, rows=r, cols=c, name=nm))
        for nm, val in [("a", a), ("b_u", b_u), ("b_w", b_w), ("b_p", b_p),
                        ("c_y", c_y), ("c_z", c_z), ("c_q", c_q)]:
            object.__setattr__(self, nm, val)

    @property
    def n_x(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.b_u.shape[1]

    @property
    def n_w(self):
        return self.b_w.shape[1]

    @property
    def n_y(self):
        return self.c_y.shape[0]

    @property
    def n_z(self):
        return self.c_z.shape[0]

    @property
    def n_p(self):
        return self.b_p.shape[1]

    @property
    def n_q(self):
        return self.c_q.shape[0]


@dataclass(frozen=True)
class ControllerSS:
    """One subcontroller: local blocks plus per-edge gain blocks.

    ``edges`` maps incoming controller edges (this node, k) to the tuple
    (A_ik, B_ik, C_ik, D_ik) acting on the neighbor's [x^K_k; y_k] signal.
    A static gain has ``a`` of size 0x0.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    edges: dict = field(default_factory=dict)

    def __post_init__(self):
        d = _arr(self.d, name="d")
        n_u, n_y = d.shape
        a = np.asarray(self.a, dtype=float)
        a = a.reshape(0, 0) if a.size == 0 else np.atleast_2d(a)
        n_xk = a.shape[0]
        if a.shape != (n_xk, n_xk):
            raise DimensionError("controller a must be square")
        b = np.asarray(self.b, dtype=float)
        b = b.reshape(n_xk, n_y) if b.size == 0 else _arr(b, rows=n_xk, cols=n_y, name="b")
        c = np.asarray(self.c, dtype=float)
        c = c.reshape(n_u, n_xk) if c.size == 0 else _arr(c, rows=n_u, cols=n_xk, name="c")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "edges", dict(self.edges))

    @property
    def n_xk(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.d.shape[0]

    @property
    def n_y(self):
        return self.d.shape[1]


class ChannelLayout:
    """Stacking bookkeeping of an interconnection channel.

    Per node ``i``, incoming blocks ``p_ik`` and outgoing blocks ``q_ik``
    are stacked over neighbors ``k`` ascending. ``blocks[(i, k)]`` holds the
    coupling matrix with ``p_ik = blocks[(i,k)] @ q_ki``.
    """

    def __init__(self, n_nodes, channels, blocks=None):
        self.n_nodes = n_nodes
        self.p_dims = {}
        self.q_dims = {}
        for ch in channels:
            e = tuple(ch.edge)
            self.p_dims[e] = int(ch.dim_in)
            self.q_dims[e] = int(ch.dim_out)
        self.neighbor_sets = tuple(
            tuple(sorted({k for (a, k) in self.p_dims if a == i}))
            for i in range(1, n_nodes + 1)
        )
        for (i, k) in list(self.p_dims):
            if (k, i) not in self.p_dims:
                raise TopologyError(f"channel set not symmetric at edge ({i},{k})")
            if self.p_dims[(i, k)] != self.q_dims[(k, i)]:
                # rectangular couplings allowed only when a block is given
                if blocks is None or (i, k) not in blocks:
                    if self.p_dims[(i, k)] > 0 and self.q_dims[(k, i)] > 0:
                        raise DimensionError(
                            f"edge ({i},{k}): p dim {self.p_dims[(i,k)]} != "
                            f"q dim of reverse {self.q_dims[(k,i)]} and no block given")
        self.blocks = {}
        for (i, k) in self.p_dims:
            m, n = self.p_dims[(i, k)], self.q_dims[(k, i)]
            if blocks is not None and (i, k) in blocks:
                self.blocks[(i, k)] = _arr(blocks[(i, k)], rows=m, cols=n,
                                           name=f"P[{i},{k}]") if m * n else np.zeros((m, n))
            elif m == 0 or n == 0:
                self.blocks[(i, k)] = np.zeros((m, n))
            elif m != n:
                raise DimensionError(f"edge ({i},{k}) needs explicit block")
            else:
                self.blocks[(i, k)] = np.eye(m)
        # offsets
        self._p_off, self._q_off = {}, {}
        po = qo = 0
        for i in range(1, n_nodes + 1):
            for k in self.neighbor_sets[i - 1]:
                self._p_off[(i, k)] = po
                self._q_off[(i, k)] = qo
                po += self.p_dims[(i, k)]
                qo += self.q_dims[(i, k)]
        self.n_p_total = po
        self.n_q_total = qo

    def neighbors_of(self, i):
        return self.neighbor_sets[i - 1]

    def n_p(self, i):
        return sum(self.p_dims[(i, k)] for k in self.neighbors_of(i))

    def n_q(self, i):
        return sum(self.q_dims[(i, k)] for k in self.neighbors_of(i))

    def p_slice(self, i, k):
        o = self._p_off[(i, k)]
        return slice(o, o + self.p_dims[(i, k)])

    def q_slice(self, i, k):
        o = self._q_off[(i, k)]
        return slice(o, o + self.q_dims[(i, k)])

    def node_p_slice(self, i):
        ks = self.neighbors_of(i)
        if not ks:
            o = sum(self.n_p(j) for j in range(1, i))
            return slice(o, o)
        return slice(self._p_off[(i, ks[0])], self._p_off[(i, ks[-1])] + self.p_dims[(i, ks[-1])])

    def node_q_slice(self, i):
        ks = self.neighbors_of(i)
        if not ks:
            o = sum(self.n_q(j) for j in range(1, i))
            return slice(o, o)
        return slice(self._q_off[(i, ks[0])], self._q_off[(i, ks[-1])] + self.q_dims[(i, ks[-1])])

    def directed_edges(self):
        return sorted(self.p_dims)

    def undirected_pairs(self):
        return sorted({(min(i, k), max(i, k)) for (i, k) in self.p_dims})

    def matrix(self):
        """Dense interconnection matrix mapping stacked q to stacked p."""
        m = np.zeros((self.n_p_total, self.n_q_total))
        for (i, k), blk in self.blocks.items():
            if blk.size:
                m[self.p_slice(i, k), self.q_slice(k, i)] = blk
        return m


@dataclass(frozen=True)
class InterconnectionMatrix:
    """Assembled sparse interconnection relation p = P q."""

    layout: ChannelLayout

    @property
    def matrix(self):
        return self.layout.matrix()


def assemble_interconnection(n_nodes, channels, blocks=None) -> InterconnectionMatrix:
    """Assemble the interconnection matrix from per-edge channels and blocks.

    ``channels`` is a list of :class:`EdgeChannel` over a symmetric edge set;
    ``blocks`` maps directed edges to coupling matrices (identity when
    omitted). Block ``(i, k)`` sits at (p_ik rows, q_ki cols).
    """
    return InterconnectionMatrix(ChannelLayout(n_nodes, channels, blocks))


@dataclass(frozen=True)
class InterconnectedSystem:
    """Decentralized subsystems closed around an interconnection channel."""

    topo: Topology
    subsystems: tuple
    layout: ChannelLayout

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if len(subs) != self.topo.n_nodes:
            raise DimensionError("one subsystem per node required")
        for i, g in enumerate(subs, start=1):
            if g.n_p != self.layout.n_p(i) or g.n_q != self.layout.n_q(i):
                raise DimensionError(
                    f"subsystem {i}: channel dims {g.n_p}x{g.n_q} do not match "
                    f"layout {self.layout.n_p(i)}x{self.layout.n_q(i)}")
        object.__setattr__(self, "subsystems", subs)

    @property
    def n_nodes(self):
        return self.topo.n_nodes

    def interconnection(self) -> InterconnectionMatrix:
        return InterconnectionMatrix(self.layout)


def realize_coupled(topo: Topology, diag, off=None, couplings=None) -> InterconnectedSystem:
    """Realize a coupled global system as an interconnected one.

    ``diag[i-1]`` holds node i's local matrices (keys ``a, b_u, b_w, c_y,
    c_z, d_zu, d_zw, d_yw``; missing keys default to zero, ``c_y`` to
    identity). ``off[(i, k)]`` holds coupling blocks from node k into node i
    (keys ``a, b_w, c_y, c_z, d_yw, d_zw``) for directed edges of ``topo``.
    The channel of edge (i, k) carries [x_k; w_k]; ``couplings`` optionally
    maps directed edges to non-identity interconnection blocks.
    """
    off = off or {}
    n = topo.n_nodes
    sym = symmetrize(topo)
    dims = []
    for i in range(1, n + 1):
        d = diag[i - 1]
        a = _arr(d["a"])
        n_x = a.shape[0]
        b_u = _arr(d.get("b_u", np.zeros((n_x, 0))), rows=n_x)
        b_w = _arr(d.get("b_w", np.zeros((n_x, 0))), rows=n_x)
        dims.append((n_x, b_u.shape[1], b_w.shape[1]))
    for (i, k) in off:
        if not topo.has_edge(i, k):
            raise TopologyError(f"coupling block for absent edge ({i},{k})")

    channels = []
    for (i, k) in sym.edges:
        d_in = dims[k - 1][0] + dims[k - 1][2] if topo.has_edge(i, k) else 0
        d_out = dims[i - 1][0] + dims[i - 1][2] if topo.has_edge(k, i) else 0
        channels.append(EdgeChannel((i, k), d_in, d_out))
    layout = ChannelLayout(n, channels, couplings)

    subs = []
    for i in range(1, n + 1):
        d = diag[i - 1]
        n_x, n_u, n_w = dims[i - 1]
        a = _arr(d["a"])
        b_u = _arr(d.get("b_u", np.zeros((n_x, 0))), rows=n_x)
        b_w = _arr(d.get("b_w", np.zeros((n_x, 0))), rows=n_x)
        c_y = _arr(d.get("c_y", np.eye(n_x)), cols=n_x)
        c_z = _arr(d.get("c_z", np.zeros((0, n_x))), cols=n_x)
        n_y, n_z = c_y.shape[0], c_z.shape[0]
        d_zu = _arr(d.get("d_zu", np.zeros((n_z, n_u))), rows=n_z, cols=n_u)
        d_zw = _arr(d.get("d_zw", np.zeros((n_z, n_w))), rows=n_z, cols=n_w)
        d_yw = _arr(d.get("d_yw", np.zeros((n_y, n_w))), rows=n_y, cols=n_w)

        b_p_blocks, d_zp_blocks, d_yp_blocks = [], [], []
        c_q_blocks, d_qw_blocks = [], []
        for k in layout.neighbors_of(i):
            if topo.has_edge(i, k):
                n_xk, _, n_wk = dims[k - 1]
                ob = off.get((i, k), {})
                a_ik = _arr(ob.get("a", np.zeros((n_x, n_xk))), rows=n_x, cols=n_xk)
                bw_ik = _arr(ob.get("b_w", np.zeros((n_x, n_wk))), rows=n_x, cols=n_wk)
                cz_ik = _arr(ob.get("c_z", np.zeros((n_z, n_xk))), rows=n_z, cols=n_xk)
                dzw_ik = _arr(ob.get("d_zw", np.zeros((n_z, n_wk))), rows=n_z, cols=n_wk)
                cy_ik = _arr(ob.get("c_y", np.zeros((n_y, n_xk))), rows=n_y, cols=n_xk)
                dyw_ik = _arr(ob.get("d_yw", np.zeros((n_y, n_wk))), rows=n_y, cols=n_wk)
                b_p_blocks.append(np.hstack([a_ik, bw_ik]))
                d_zp_blocks.append(np.hstack([cz_ik, dzw_ik]))
                d_yp_blocks.append(np.hstack([cy_ik, dyw_ik]))
            if topo.has_edge(k, i):
                c_q_blocks.append(np.vstack([np.eye(n_x), np.zeros((n_w, n_x))]))
                d_qw_blocks.append(np.vstack([np.zeros((n_x, n_w)), np.eye(n_w)]))
        b_p = np.hstack(b_p_blocks) if b_p_blocks else np.zeros((n_x, 0))
        d_zp = np.hstack(d_zp_blocks) if d_zp_blocks else np.zeros((n_z, 0))
        d_yp = np.hstack(d_yp_blocks) if d_yp_blocks else np.zeros((n_y, 0))
        c_q = np.vstack(c_q_blocks) if c_q_blocks else np.zeros((0, n_x))
        d_qw = np.vstack(d_qw_blocks) if d_qw_blocks else np.zeros((0, n_w))
        subs.append(SubsystemSS(a, b_u, b_w, b_p, c_y, c_z, c_q,
                                d_yw, d_yp, d_zu, d_zw, d_zp, d_qw))
    return InterconnectedSystem(topo, tuple(subs), layout)


def static_state_feedback(sys: InterconnectedSystem, topo_k: Topology,
                          d_local, d_edges=None):
    """Controllers for ``u_i = D_i x_i + sum_k D_ik x_k`` over ``topo_k``."""
    d_edges = d_edges or {}
    ctrls = []
    for i in range(1, sys.n_nodes + 1):
        g = sys.subsystems[i - 1]
        d = _arr(d_local[i - 1], rows=g.n_u, cols=g.n_y)
        edges = {}
        for (a, k) in topo_k.edges:
            if a != i:
                continue
            gk = sys.subsystems[k - 1]
            dik = _arr(d_edges.get((i, k), np.zeros((g.n_u, gk.n_y))),
                       rows=g.n_u, cols=gk.n_y)
            edges[(i, k)] = (np.zeros((0, 0)), np.zeros((0, gk.n_y)),
                             np.zeros((g.n_u, 0)), dik)
        ctrls.append(ControllerSS(np.zeros((0, 0)), np.zeros((0, g.n_y)),
                                  np.zeros((g.n_u, 0)), d, edges))
    return ctrls


@dataclass(frozen=True)
class ClosedLoopSS:
    """Per-subsystem closed-loop blocks plus the closed-loop channel."""

    a: tuple
    b1: tuple
    b2: tuple
    c1: tuple
    c2: tuple
    d11: tuple
    d12: tuple
    d21: tuple
    layout: ChannelLayout
    n_states: tuple
    plant_dims: dict = field(default_factory=dict)  # (i,k) -> (p_plant, q_plant) widths

    @property
    def n_nodes(self):
        return len(self.a)

    def d22(self, i):
        return np.zeros((self.layout.n_q(i), self.layout.n_p(i)))


def _controller_channel_dims(sys, ctrls, topo_k):
    """Dims of the controller channel: q^K_ik = [x^K_i; y_i] iff (k,i) in E^K."""
    dims_in, dims_out = {}, {}
    sym = symmetrize(topo_k)
    for (i, k) in sym.edges:
        kk = ctrls[k - 1]
        dims_in[(i, k)] = (kk.n_xk + kk.n_y) if topo_k.has_edge(i, k) else 0
        ki = ctrls[i - 1]
        dims_out[(i, k)] = (ki.n_xk + ki.n_y) if topo_k.has_edge(k, i) else 0
    return dims_in, dims_out


def close_loop(sys: InterconnectedSystem, ctrls, topo_k: Topology) -> ClosedLoopSS:
    """Interconnect plant and controller; exact elimination of u and y.

    The realization follows the standard closed-loop blocks for this system
    class; the interconnection feedthrough of the result must vanish, which
    fails only when a measured-output feedthrough from the plant channel
    meets an interconnected controller. That case is rejected.
    """
    if len(ctrls) != sys.n_nodes:
        raise DimensionError("missing controller for a subsystem")
    n = sys.n_nodes
    kin, kout = _controller_channel_dims(sys, ctrls, topo_k)

    # closed-loop channel layout: per neighbor, plant block then controller block
    cl_edges = sorted(set(sys.layout.p_dims) | set(kin))
    channels, plant_dims, blocks = [], {}, {}
    for (i, k) in cl_edges:
        pg = sys.layout.p_dims.get((i, k), 0)
        qg = sys.layout.q_dims.get((i, k), 0)
        pk = kin.get((i, k), 0)
        qk = kout.get((i, k), 0)
        channels.append(EdgeChannel((i, k), pg + pk, qg + qk))
        plant_dims[(i, k)] = (pg, qg)
        pg_blk = sys.layout.blocks.get((i, k), np.zeros((pg, sys.layout.q_dims.get((k, i), 0))))
        qrev_g = sys.layout.q_dims.get((k, i), 0)
        qrev_k = kout.get((k, i), 0)
        blk = np.zeros((pg + pk, qrev_g + qrev_k))
        blk[:pg, :qrev_g] = pg_blk
        blk[pg:, qrev_g:] = np.eye(pk) if pk == qrev_k else _ident_or_err(pk, qrev_k, i, k)
        blocks[(i, k)] = blk
    layout = ChannelLayout(n, channels, blocks)

    A, B1, B2, C1, C2, D11, D12, D21 = [], [], [], [], [], [], [], []
    n_states = []
    for i in range(1, n + 1):
        g = sys.subsystems[i - 1]
        c = ctrls[i - 1]
        if c.n_u != g.n_u or c.n_y != g.n_y:
            raise DimensionError(f"controller {i} has wrong u/y dims")
        if np.abs(g.d_yp).max(initial=0.0) > 0 and any(
                topo_k.has_edge(k, i) for k in range(1, n + 1)):
            raise DimensionError(
                f"node {i}: plant channel feeds y while the controller is "
                "interconnected; closed-loop channel feedthrough would be nonzero")
        n_xk = c.n_xk
        n_states.append(g.n_x + n_xk)
        A.append(np.block([
            [g.a + g.b_u @ c.d @ g.c_y, g.b_u @ c.c],
            [c.b @ g.c_y, c.a],
        ]))
        B1.append(np.vstack([g.b_w + g.b_u @ c.d @ g.d_yw, c.b @ g.d_yw]))
        C1.append(np.hstack([g.c_z + g.d_zu @ c.d @ g.c_y, g.d_zu @ c.c]))
        D11.append(g.d_zw + g.d_zu @ c.d @ g.d_yw)

        b2_cols, d12_cols = [], []
        c2_rows, d21_rows = [], []
        for k in layout.neighbors_of(i):
            # incoming plant block
            if sys.layout.p_dims.get((i, k), 0):
                sl = _local_p_slice(sys.layout, i, k)
                bp = g.b_p[:, sl]
                dyp = g.d_yp[:, sl]
                dzp = g.d_zp[:, sl]
                b2_cols.append(np.vstack([bp + g.b_u @ c.d @ dyp, c.b @ dyp]))
                d12_cols.append(dzp + g.d_zu @ c.d @ dyp)
            else:
                b2_cols.append(np.zeros((g.n_x + n_xk, 0)))
                d12_cols.append(np.zeros((g.n_z, 0)))
            # incoming controller block
            if kin.get((i, k), 0):
                ak, bk, ck, dk = c.edges[(i, k)]
                cpk = np.hstack([_arr(ck, rows=g.n_u), _arr(dk, rows=g.n_u)])
                bpk = np.hstack([_arr(ak, rows=n_xk), _arr(bk, rows=n_xk)]) \
                    if n_xk else np.zeros((0, kin[(i, k)]))
                b2_cols.append(np.vstack([g.b_u @ cpk, bpk]))
                d12_cols.append(g.d_zu @ cpk)
            else:
                b2_cols.append(np.zeros((g.n_x + n_xk, 0)))
                d12_cols.append(np.zeros((g.n_z, 0)))
            # outgoing plant block
            if sys.layout.q_dims.get((i, k), 0):
                sl = _local_q_slice(sys.layout, i, k)
                c2_rows.append(np.hstack([g.c_q[sl, :], np.zeros((sl.stop - sl.start, n_xk))]))
                d21_rows.append(g.d_qw[sl, :])
            # outgoing controller block
            if kout.get((i, k), 0):
                c2_rows.append(np.block([
                    [np.zeros((n_xk, g.n_x)), np.eye(n_xk)],
                    [g.c_y, np.zeros((g.n_y, n_xk))],
                ]))
                d21_rows.append(np.vstack([np.zeros((n_xk, g.n_w)), g.d_yw]))
        B2.append(np.hstack(b2_cols) if b2_cols else np.zeros((g.n_x + n_xk, 0)))
        D12.append(np.hstack(d12_cols) if d12_cols else np.zeros((g.n_z, 0)))
        C2.append(np.vstack(c2_rows) if c2_rows else np.zeros((0, g.n_x + n_xk)))
        D21.append(np.vstack(d21_rows) if d21_rows else np.zeros((0, g.n_w)))

    return ClosedLoopSS(tuple(A), tuple(B1), tuple(B2), tuple(C1), tuple(C2),
                        tuple(D11), tuple(D12), tuple(D21), layout,
                        tuple(n_states), plant_dims)


def _ident_or_err(pk, qrev_k, i, k):
    raise DimensionError(f"controller channel dims mismatch on edge ({i},{k})")


def _local_p_slice(layout, i, k):
    off = 0
    for kk in layout.neighbors_of(i):
        d = layout.p_dims[(i, kk)]
        if kk == k:
            return slice(off, off + d)
        off += d
    raise KeyError((i, k))


def _local_q_slice(layout, i, k):
    off = 0
    for kk in layout.neighbors_of(i):
        d = layout.q_dims[(i, kk)]
        if kk == k:
            return slice(off, off + d)
        off += d
    raise KeyError((i, k))


def flatten(clp: ClosedLoopSS):
    """Eliminate the interconnection channel; returns (A, B, C, D) of w -> z."""
    A = _blkdiag(clp.a)
    B1 = _blkdiag(clp.b1)
    B2 = _blkdiag(clp.b2)
    C1 = _blkdiag(clp.c1)
    C2 = _blkdiag(clp.c2)
    D11 = _blkdiag(clp.d11)
    D12 = _blkdiag(clp.d12)
    D21 = _blkdiag(clp.d21)
    P = clp.layout.matrix()
    n_q = C2.shape[0]
    # q = C2 x + D21 w + D22 p with D22 = 0; p = P q
    lhs = np.eye(n_q)  # I - D22 @ P
    try:
        q_from = np.linalg.solve(lhs, np.hstack([C2, D21]))
    except np.linalg.LinAlgError as e:  # pragma: no cover - guarded, cannot occur
        raise DimensionError("singular interconnection loop") from e
    qC, qD = q_from[:, : C2.shape[1]], q_from[:, C2.shape[1]:]
    A_f = A + B2 @ P @ qC
    B_f = B1 + B2 @ P @ qD
    C_f = C1 + D12 @ P @ qC
    D_f = D11 + D12 @ P @ qD
    return A_f, B_f, C_f, D_f


def _blkdiag(mats):
    mats = [np.atleast_2d(m) for m in mats]
    r = sum(m.shape[0] for m in mats)
    c = sum(m.shape[1] for m in mats)
    out = np.zeros((r, c))
    ro = co = 0
    for m in mats:
        out[ro:ro + m.shape[0], co:co + m.shape[1]] = m
        ro += m.shape[0]
        co += m.shape[1]
    return out


# ---------------------------------------------------------------------------
# performance-channel augmentation


@dataclass(frozen=True)
class GlobalPlant:
    """Distributed plant with a centralized performance channel.

    ``a`` couples all states; ``b_u`` is block-diagonal per node (one column
    block each); ``b_wbar``, ``c_zbar``, ``d_zbaru`` act on the global
    disturbance/performance pair. Local measurements are full states.
    """

    topo: Topology
    n_x: tuple
    n_u: tuple
    a: np.ndarray
    b_u: np.ndarray
    b_wbar: np.ndarray
    c_zbar: np.ndarray
    d_zbaru: np.ndarray

    def __post_init__(self):
        nx = sum(self.n_x)
        nu = sum(self.n_u)
        object.__setattr__(self, "a", _arr(self.a, rows=nx, cols=nx, name="a"))
        object.__setattr__(self, "b_u", _arr(self.b_u, rows=nx, cols=nu, name="b_u"))
        object.__setattr__(self, "b_wbar", _arr(self.b_wbar, rows=nx, name="b_wbar"))
        nz = np.atleast_2d(self.c_zbar).shape[0]
        object.__setattr__(self, "c_zbar", _arr(self.c_zbar, rows=nz, cols=nx, name="c_zbar"))
        object.__setattr__(self, "d_zbaru", _arr(self.d_zbaru, rows=nz, cols=nu, name="d_zbaru"))

    @property
    def n_wbar(self):
        return self.b_wbar.shape[1]

    @property
    def n_zbar(self):
        return self.c_zbar.shape[0]


@dataclass(frozen=True)
class PerformanceAugmentation:
    """Certificate of a norm-invariant performance-channel transformation."""

    s: np.ndarray
    t: np.ndarray
    m_q: np.ndarray
    m_r: np.ndarray
    q_bar: np.ndarray
    r_bar: np.ndarray
    t_l: np.ndarray
    t_r: np.ndarray


def _sym_sqrt(m, inverse=False):
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w.min() < EIG_FLOOR:
        raise DimensionError("weighting matrix not positive definite")
    d = np.sqrt(w) if not inverse else 1.0 / np.sqrt(w)
    return (v * d) @ v.T


def augment_performance(gp: GlobalPlant, s, t, m_q, m_r, z_dims, w_dims):
    """Localize a centralized performance channel.

    Builds the augmented outputs ``z = Qbar^(1/2) S zbar`` and inputs
    ``w`` with ``B_w = B_wbar T^+ Rbar^(1/2)``, verifies that the induced
    transformations are exact isometries (all singular values 1), and
    realizes the result as an interconnected system whose channel carries
    the state/disturbance coupling blocks.

    ``z_dims`` / ``w_dims`` give the per-node row/column partition of the
    localized channels; ``sum(z_dims)`` must be >= the global z dimension
    (and likewise for w) so no norm is lost.
    """
    s = _arr(s, name="s")
    t = _arr(t, name="t")
    n_z, n_zbar = s.shape
    n_w, n_wbar = t.shape
    if n_zbar != gp.n_zbar or n_wbar != gp.n_wbar:
        raise DimensionError("S/T must map the global performance channel")
    if sum(z_dims) != n_z or sum(w_dims) != n_w:
        raise DimensionError("z_dims/w_dims must partition the localized channel")
    if n_z < n_zbar or n_w < n_wbar:
        raise DimensionError("localized channel must not compress the global one")
    if np.linalg.matrix_rank(s, tol=PINV_RCOND * max(1.0, np.linalg.norm(s, 2))) < min(s.shape):
        raise DimensionError("S must have full rank")
    if np.linalg.matrix_rank(t, tol=PINV_RCOND * max(1.0, np.linalg.norm(t, 2))) < min(t.shape):
        raise DimensionError("T must have full rank")
    m_q = _arr(m_q, rows=n_z, cols=n_z, name="m_q")
    m_r = _arr(m_r, rows=n_w, cols=n_w, name="m_r")
    if not np.allclose(m_q, m_q.T, atol=ORTHO_TOL):
        raise DimensionError("M_Q must be symmetric")
    if not np.allclose(m_r, m_r.T, atol=ORTHO_TOL):
        raise DimensionError("M_R must be symmetric")
    s_pinv = np.linalg.pinv(s, rcond=PINV_RCOND)
    t_pinv = np.linalg.pinv(t, rcond=PINV_RCOND)
    if np.abs(s.T @ m_q @ s).max() > ORTHO_TOL:
        raise DimensionError("S^T M_Q S = 0 violated")
    if np.abs(t_pinv @ m_r @ t_pinv.T).max() > ORTHO_TOL:
        raise DimensionError("T^+ M_R T^+T = 0 violated")

    q_bar = s_pinv.T @ s_pinv + m_q
    r_bar = t @ t.T + m_r
    q_half = _sym_sqrt(q_bar)
    r_half = _sym_sqrt(r_bar)
    t_l = q_half @ s
    t_r = _sym_sqrt(r_bar, inverse=True) @ t
    for name, m in [("T_l", t_l), ("T_r", t_r)]:
        sv = np.linalg.svd(m, compute_uv=False)
        if np.abs(sv - 1.0).max() > ORTHO_TOL * 10:
            raise DimensionError(f"{name} is not semi-orthogonal "
                                 f"(singular value spread {np.abs(sv-1).max():.2e})")

    c_z = t_l @ gp.c_zbar
    d_zu = t_l @ gp.d_zbaru
    b_w = gp.b_wbar @ t_pinv @ r_half

    # split into per-node diagonal and coupling blocks
    n = gp.topo.n_nodes
    xo = np.cumsum([0, *gp.n_x])
    uo = np.cumsum([0, *gp.n_u])
    zo = np.cumsum([0, *z_dims])
    wo = np.cumsum([0, *w_dims])
    edges = set(symmetrize(gp.topo).edges)
    diag, off = [], {}
    for i in range(1, n + 1):
        xi = slice(xo[i - 1], xo[i])
        diag.append({
            "a": gp.a[xi, xi],
            "b_u": gp.b_u[xi, uo[i - 1]:uo[i]],
            "b_w": b_w[xi, wo[i - 1]:wo[i]],
            "c_y": np.eye(gp.n_x[i - 1]),
            "c_z": c_z[zo[i - 1]:zo[i], xi],
            "d_zu": d_zu[zo[i - 1]:zo[i], uo[i - 1]:uo[i]],
        })
        for k in range(1, n + 1):
            if k == i:
                continue
            xk = slice(xo[k - 1], xo[k])
            blk = {
                "a": gp.a[xi, xk],
                "b_w": b_w[xi, wo[k - 1]:wo[k]],
                "c_z": c_z[zo[i - 1]:zo[i], xk],
            }
            d_zu_ik = d_zu[zo[i - 1]:zo[i], uo[k - 1]:uo[k]]
            if np.abs(d_zu_ik).max(initial=0.0) > 0:
                raise DimensionError(
                    f"augmentation couples z_{i} to u_{k}; control feedthrough "
                    "cannot travel on the interconnection channel")
            if any(np.abs(b).max(initial=0.0) > 0 for b in blk.values()):
                if (i, k) not in edges or not gp.topo.has_edge(i, k):
                    raise TopologyError(
                        f"augmented coupling ({i},{k}) outside the plant topology")
                off[(i, k)] = blk
    # every directed edge gets its channel even if the coupling block is zero
    sys = realize_coupled(gp.topo, diag, off)
    aug = PerformanceAugmentation(s, t, m_q, m_r, q_bar, r_bar, t_l, t_r)
    return sys, aug


def default_augmentation(n_zbar, n_wbar, z_dims, w_dims, rng=None):
    """A valid (S, T, M_Q, M_R): orthonormal embeddings plus complement projectors.

    With ``sum(z_dims) == n_zbar`` the S produced is square orthogonal (the
    balanced row-partition isometry); larger local channels embed the global
    one isometrically and M_Q is the projector onto the unused directions.
    """
    rng = rng or np.random.default_rng(0)
    n_z, n_w = sum(z_dims), sum(w_dims)
    if n_z < n_zbar or n_w < n_wbar:
        raise DimensionError("local channel dims must cover the global ones")

    def frame(m, k):
        q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        return q[:, :k]

    s = frame(n_z, n_zbar)
    t = frame(n_w, n_wbar)
    m_q = np.eye(n_z) - s @ s.T
    m_r = np.eye(n_w) - t @ t.T
    return s, t, m_q, m_r
