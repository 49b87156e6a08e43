"""Shared fixtures: random interconnected systems and independent oracles."""

import numpy as np

from dhinf.graph import Topology, symmetrize
from dhinf.sysmodel import (
    ChannelLayout,
    ControllerSS,
    InterconnectedSystem,
    SubsystemSS,
)
from dhinf.graph import EdgeChannel


def random_topology(rng, n=None, symmetric=False):
    n = n or int(rng.integers(2, 5))
    edges = {(i, int(rng.integers(1, i))) for i in range(2, n + 1)}
    for _ in range(int(rng.integers(0, n))):
        i, k = int(rng.integers(1, n + 1)), int(rng.integers(1, n + 1))
        if i != k:
            edges.add((i, k))
    t = Topology(n, tuple(edges))
    return symmetrize(t) if symmetric else t


def random_interconnected(rng, topo=None, stable=False, ideal=False,
                          dims=None, with_dyp=False):
    """Random interconnected system with arbitrary channel dims and couplings."""
    topo = topo or random_topology(rng)
    n = topo.n_nodes
    sym = symmetrize(topo)
    if dims is None:
        dims = [
            dict(n_x=int(rng.integers(1, 4)), n_u=int(rng.integers(1, 3)),
                 n_w=int(rng.integers(1, 3)), n_z=int(rng.integers(1, 3)),
                 n_y=int(rng.integers(1, 3)))
            for _ in range(n)
        ]
    chan_in = {}
    for (i, k) in topo.edges:
        chan_in[(i, k)] = int(rng.integers(1, 3))
    channels = []
    for (i, k) in sym.edges:
        d_in = chan_in.get((i, k), 0)
        d_out = chan_in.get((k, i), 0)
        channels.append(EdgeChannel((i, k), d_in, d_out))
    blocks = None
    if not ideal:
        blocks = {}
        for (i, k) in topo.edges:
            m = chan_in[(i, k)]
            blocks[(i, k)] = rng.standard_normal((m, m)) * 0.7
    layout = ChannelLayout(n, channels, blocks)

    subs = []
    for i in range(1, n + 1):
        d = dims[i - 1]
        n_x, n_u, n_w, n_z, n_y = d["n_x"], d["n_u"], d["n_w"], d["n_z"], d["n_y"]
        n_p, n_q = layout.n_p(i), layout.n_q(i)
        a = rng.standard_normal((n_x, n_x))
        if stable:
            a = a - (np.abs(np.linalg.eigvals(a).real).max() + 1.0) * np.eye(n_x)
        subs.append(SubsystemSS(
            a=a,
            b_u=rng.standard_normal((n_x, n_u)),
            b_w=rng.standard_normal((n_x, n_w)),
            b_p=rng.standard_normal((n_x, n_p)) * 0.3,
            c_y=rng.standard_normal((n_y, n_x)),
            c_z=rng.standard_normal((n_z, n_x)),
            c_q=rng.standard_normal((n_q, n_x)),
            d_yw=rng.standard_normal((n_y, n_w)) * 0.2,
            d_yp=rng.standard_normal((n_y, n_p)) * (0.2 if with_dyp else 0.0),
            d_zu=rng.standard_normal((n_z, n_u)) * 0.5,
            d_zw=rng.standard_normal((n_z, n_w)) * 0.2,
            d_zp=rng.standard_normal((n_z, n_p)) * 0.2,
            d_qw=rng.standard_normal((n_q, n_w)) * 0.2,
        ))
    return InterconnectedSystem(topo, tuple(subs), layout)


def random_controllers(rng, sys, topo_k, dynamic=True, scale=0.3):
    """Random (possibly dynamic) interconnected controllers over topo_k."""
    n = sys.n_nodes
    n_xk = [int(rng.integers(1, 3)) if dynamic else 0 for _ in range(n)]
    ctrls = []
    for i in range(1, n + 1):
        g = sys.subsystems[i - 1]
        m = n_xk[i - 1]
        edges = {}
        for (a, k) in topo_k.edges:
            if a != i:
                continue
            mk = n_xk[k - 1]
            n_yk = sys.subsystems[k - 1].n_y
            edges[(i, k)] = (
                rng.standard_normal((m, mk)) * scale,
                rng.standard_normal((m, n_yk)) * scale,
                rng.standard_normal((g.n_u, mk)) * scale,
                rng.standard_normal((g.n_u, n_yk)) * scale,
            )
        ctrls.append(ControllerSS(
            rng.standard_normal((m, m)) * scale - np.eye(m),
            rng.standard_normal((m, g.n_y)) * scale,
            rng.standard_normal((g.n_u, m)) * scale,
            rng.standard_normal((g.n_u, g.n_y)) * scale,
            edges,
        ))
    return ctrls


def blkdiag(mats):
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


def monolithic_closed_loop(sys, ctrls, topo_k):
    """Oracle: close the loop by global elimination, no per-subsystem LFT.

    The plant channel is eliminated from the stacked global plant; the
    interconnected controller is built directly with its edge gains as
    off-diagonal blocks; the feedback loop is then closed monolithically.
    """
    subs = sys.subsystems
    A = blkdiag([g.a for g in subs])
    B_u = blkdiag([g.b_u for g in subs])
    B_w = blkdiag([g.b_w for g in subs])
    B_p = blkdiag([g.b_p for g in subs])
    C_y = blkdiag([g.c_y for g in subs])
    C_z = blkdiag([g.c_z for g in subs])
    C_q = blkdiag([g.c_q for g in subs])
    D_yw = blkdiag([g.d_yw for g in subs])
    D_yp = blkdiag([g.d_yp for g in subs])
    D_zu = blkdiag([g.d_zu for g in subs])
    D_zw = blkdiag([g.d_zw for g in subs])
    D_zp = blkdiag([g.d_zp for g in subs])
    D_qw = blkdiag([g.d_qw for g in subs])
    P = sys.layout.matrix()
    # q has no feedthrough from p, so p = P (C_q x + D_qw w)
    A_g = A + B_p @ P @ C_q
    B_w_g = B_w + B_p @ P @ D_qw
    C_y_g = C_y + D_yp @ P @ C_q
    D_yw_g = D_yw + D_yp @ P @ D_qw
    C_z_g = C_z + D_zp @ P @ C_q
    D_zw_g = D_zw + D_zp @ P @ D_qw

    # interconnected controller as one global system, edge gains off-diagonal
    n = sys.n_nodes
    nxk = [c.n_xk for c in ctrls]
    xo = np.cumsum([0, *nxk])
    yo = np.cumsum([0, *[g.n_y for g in subs]])
    uo = np.cumsum([0, *[g.n_u for g in subs]])
    A_K = blkdiag([c.a for c in ctrls])
    B_K = np.zeros((sum(nxk), yo[-1]))
    C_K = np.zeros((uo[-1], sum(nxk)))
    D_K = np.zeros((uo[-1], yo[-1]))
    for i, c in enumerate(ctrls, start=1):
        B_K[xo[i - 1]:xo[i], yo[i - 1]:yo[i]] = c.b
        C_K[uo[i - 1]:uo[i], xo[i - 1]:xo[i]] = c.c
        D_K[uo[i - 1]:uo[i], yo[i - 1]:yo[i]] = c.d
        for (ii, k), (ak, bk, ck, dk) in c.edges.items():
            A_K[xo[i - 1]:xo[i], xo[k - 1]:xo[k]] = ak
            B_K[xo[i - 1]:xo[i], yo[k - 1]:yo[k]] = bk
            C_K[uo[i - 1]:uo[i], xo[k - 1]:xo[k]] = ck
            D_K[uo[i - 1]:uo[i], yo[k - 1]:yo[k]] = dk

    A_cl = np.block([
        [A_g + B_u @ D_K @ C_y_g, B_u @ C_K],
        [B_K @ C_y_g, A_K],
    ])
    B_cl = np.vstack([B_w_g + B_u @ D_K @ D_yw_g, B_K @ D_yw_g])
    C_cl = np.hstack([C_z_g + D_zu @ D_K @ C_y_g, D_zu @ C_K])
    D_cl = D_zw_g + D_zu @ D_K @ D_yw_g
    return A_cl, B_cl, C_cl, D_cl


def tf_at(ss, s_vals):
    A, B, C, D = ss
    out = []
    n = A.shape[0]
    for s in s_vals:
        out.append(C @ np.linalg.solve(s * np.eye(n) - A, B) + D)
    return out


def tf_close(ss1, ss2, s_vals, rtol=1e-8):
    for g1, g2 in zip(tf_at(ss1, s_vals), tf_at(ss2, s_vals)):
        scale = max(np.abs(g2).max(), 1e-6)
        if np.abs(g1 - g2).max() > rtol * scale:
            return False, np.abs(g1 - g2).max() / scale
    return True, 0.0
