"""Pure numpy implementations of the hot inner-loop kernels.

Semantics are identical to the compiled twins in ``_native.pyx``; the test
suite asserts elementwise agreement between the two backends. All arrays are
C-contiguous float64 unless noted; CSR index arrays are int32 and block
position maps are int64.

State and system ordering is bus-major interleaved: entry 2i is the real
part and 2i+1 the imaginary part for bus i.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"

# bus kind codes shared with the compiled kernel
KIND_PQ = 0
KIND_PV = 1
KIND_SLACK = 2


def newton_fill(indptr, indices, gdat, bdat, rows, pos_r, pos_i,
                kind, p_sched, q_sched, vset, vr_t, vi_t,
                x, jdata, f, pmis, qmis, vmis):
    """Fill the Newton residual, Jacobian values and convergence mismatches.

    The admittance matrix is given as CSR (``indptr``, ``indices``) with
    real/imaginary parts ``gdat``/``bdat``; every diagonal entry is present.
    The Jacobian shares a fixed structure derived from it: admittance entry
    p in row i owns the four values at positions ``pos_r[p]``, ``pos_r[p]+1``
    (row 2i) and ``pos_i[p]``, ``pos_i[p]+1`` (row 2i+1), written into
    ``jdata``.

    Residual rows per bus kind: PQ buses carry real/imaginary current
    mismatch, PV buses carry active-power mismatch plus the squared-magnitude
    constraint, the slack bus is pinned to its target voltage by identity
    rows. Convergence mismatches are reported in power units (``pmis``,
    ``qmis``) and voltage units (``vmis``); unused entries are zeroed.
    """
    vr = x[0::2]
    vi = x[1::2]

    # network currents I = Y v
    prod = (gdat + 1j * bdat) * (vr + 1j * vi)[indices]
    yv = np.add.reduceat(prod, indptr[:-1])
    ir = np.ascontiguousarray(yv.real)
    ii = np.ascontiguousarray(yv.imag)

    v2 = vr * vr + vi * vi
    pc = vr * ir + vi * ii
    qc = vi * ir - vr * ii

    pq = kind == KIND_PQ
    pv = kind == KIND_PV
    sl = kind == KIND_SLACK

    pmis[:] = np.where(sl, 0.0, pc - p_sched)
    qmis[:] = np.where(pq, qc - q_sched, 0.0)
    vmis[:] = np.where(pv, np.abs(np.sqrt(v2) - vset), 0.0)

    with np.errstate(divide="ignore", invalid="ignore"):
        isr = (p_sched * vr + q_sched * vi) / v2
        isi = (p_sched * vi - q_sched * vr) / v2
        dsr_dvr = (p_sched - 2.0 * vr * isr) / v2
        dsr_dvi = (q_sched - 2.0 * vi * isr) / v2
        dsi_dvr = (-q_sched - 2.0 * vr * isi) / v2
        dsi_dvi = (p_sched - 2.0 * vi * isi) / v2

    f[0::2] = np.where(pq, ir - isr, np.where(pv, pc - p_sched, vr - vr_t))
    f[1::2] = np.where(pq, ii - isi,
                       np.where(pv, v2 - vset * vset, vi - vi_t))

    # Jacobian values per admittance entry; start from the PQ pattern
    krow = kind[rows]
    vr_r = vr[rows]
    vi_r = vi[rows]
    a_rr = gdat.copy()
    a_ri = -bdat
    a_ir = bdat.copy()
    a_ii = gdat.copy()

    pv_e = krow == KIND_PV
    a_rr = np.where(pv_e, vr_r * gdat + vi_r * bdat, a_rr)
    a_ri = np.where(pv_e, -vr_r * bdat + vi_r * gdat, a_ri)
    a_ir = np.where(pv_e, 0.0, a_ir)
    a_ii = np.where(pv_e, 0.0, a_ii)

    sl_e = krow == KIND_SLACK
    a_rr = np.where(sl_e, 0.0, a_rr)
    a_ri = np.where(sl_e, 0.0, a_ri)
    a_ir = np.where(sl_e, 0.0, a_ir)
    a_ii = np.where(sl_e, 0.0, a_ii)

    diag = indices == rows
    d_pq = diag & (krow == KIND_PQ)
    d_pv = diag & pv_e
    d_sl = diag & sl_e
    db = rows[d_pq]
    a_rr[d_pq] -= dsr_dvr[db]
    a_ri[d_pq] -= dsr_dvi[db]
    a_ir[d_pq] -= dsi_dvr[db]
    a_ii[d_pq] -= dsi_dvi[db]
    db = rows[d_pv]
    a_rr[d_pv] += ir[db]
    a_ri[d_pv] += ii[db]
    a_ir[d_pv] = 2.0 * vr[db]
    a_ii[d_pv] = 2.0 * vi[db]
    a_rr[d_sl] = 1.0
    a_ii[d_sl] = 1.0

    jdata[pos_r] = a_rr
    jdata[pos_r + 1] = a_ri
    jdata[pos_i] = a_ir
    jdata[pos_i + 1] = a_ii


def scatter_system(node_out, edge_out, node_pos, edge_pos_st, edge_pos_ts,
                   zi, diag_pos, ridge, data, eta):
    """Scatter network outputs into the precision system's CSR data and eta.

    ``node_out`` is (n, 5): per node the symmetric diagonal block entries
    (a, b, c) followed by the two eta components. ``edge_out`` is (m, 4): a
    row-major 2x2 coupling block placed at (s, t) with its transpose at
    (t, s). Position maps hold the four CSR data slots per block in row-major
    order; parallel edges map to the same slots and accumulate. ``zi`` marks
    nodes whose eta rows are forced to exactly zero; ``ridge`` is added to
    every diagonal slot afterwards.
    """
    data[:] = 0.0
    np.add.at(data, node_pos.ravel(), node_out[:, (0, 1, 1, 2)].ravel())
    np.add.at(data, edge_pos_st.ravel(), edge_out.ravel())
    np.add.at(data, edge_pos_ts.ravel(), edge_out[:, (0, 2, 1, 3)].ravel())
    data[diag_pos] += ridge
    eta[0::2] = np.where(zi, 0.0, node_out[:, 3])
    eta[1::2] = np.where(zi, 0.0, node_out[:, 4])


def gather_grads(lam, mu, e_src, e_dst, zi, dnode, dedge):
    """Adjoint of :func:`scatter_system` for the surrogate loss.

    Given the adjoint vector lam = Lambda^{-1} (mu - y) and the prediction
    mu, write per-node gradients (n, 5) wrt (a, b, c, eta1, eta2) and
    per-edge gradients (m, 4) wrt the coupling block. Eta gradients at zero-
    injection nodes are zeroed because scatter ignores those outputs.
    """
    l0 = lam[0::2]
    l1 = lam[1::2]
    m0 = mu[0::2]
    m1 = mu[1::2]
    dnode[:, 0] = -l0 * m0
    dnode[:, 1] = -(l0 * m1 + l1 * m0)
    dnode[:, 2] = -l1 * m1
    dnode[:, 3] = np.where(zi, 0.0, l0)
    dnode[:, 4] = np.where(zi, 0.0, l1)

    if len(e_src):
        ls0 = l0[e_src]
        ls1 = l1[e_src]
        lt0 = l0[e_dst]
        lt1 = l1[e_dst]
        ms0 = m0[e_src]
        ms1 = m1[e_src]
        mt0 = m0[e_dst]
        mt1 = m1[e_dst]
        dedge[:, 0] = -(ls0 * mt0 + ms0 * lt0)
        dedge[:, 1] = -(ls0 * mt1 + ms0 * lt1)
        dedge[:, 2] = -(ls1 * mt0 + ms1 * lt0)
        dedge[:, 3] = -(ls1 * mt1 + ms1 * lt1)
