# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_pure``.

See ``_pure.py`` for the authoritative contracts; the test suite asserts
elementwise agreement between the two backends.
"""

from libc.math cimport fabs, sqrt

import numpy as np

BACKEND = "native"

KIND_PQ = 0
KIND_PV = 1
KIND_SLACK = 2


def newton_fill(int[::1] indptr, int[::1] indices,
                double[::1] gdat, double[::1] bdat,
                int[::1] rows, long long[::1] pos_r, long long[::1] pos_i,
                signed char[::1] kind,
                double[::1] p_sched, double[::1] q_sched, double[::1] vset,
                double[::1] vr_t, double[::1] vi_t,
                double[::1] x, double[::1] jdata, double[::1] f,
                double[::1] pmis, double[::1] qmis, double[::1] vmis):
    # rows/pos_r/pos_i are part of the shared kernel signature; this
    # implementation computes positions incrementally instead.
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, p, k, p0, p1
    cdef long long jr, ji
    cdef double vri, vii, vrk, vik, g, b
    cdef double ir, ii, v2, pc, qc, ps, qs, vs
    cdef double isr, isi, dsr_dvr, dsr_dvi, dsi_dvr, dsi_dvi
    cdef double arr, ari, air, aii
    cdef signed char ki

    for i in range(n):
        p0 = indptr[i]
        p1 = indptr[i + 1]
        vri = x[2 * i]
        vii = x[2 * i + 1]
        ir = 0.0
        ii = 0.0
        for p in range(p0, p1):
            k = indices[p]
            g = gdat[p]
            b = bdat[p]
            vrk = x[2 * k]
            vik = x[2 * k + 1]
            ir += g * vrk - b * vik
            ii += g * vik + b * vrk

        v2 = vri * vri + vii * vii
        pc = vri * ir + vii * ii
        qc = vii * ir - vri * ii
        ps = p_sched[i]
        qs = q_sched[i]
        vs = vset[i]
        ki = kind[i]

        pmis[i] = 0.0 if ki == KIND_SLACK else pc - ps
        qmis[i] = qc - qs if ki == KIND_PQ else 0.0
        vmis[i] = fabs(sqrt(v2) - vs) if ki == KIND_PV else 0.0

        isr = (ps * vri + qs * vii) / v2
        isi = (ps * vii - qs * vri) / v2
        dsr_dvr = (ps - 2.0 * vri * isr) / v2
        dsr_dvi = (qs - 2.0 * vii * isr) / v2
        dsi_dvr = (-qs - 2.0 * vri * isi) / v2
        dsi_dvi = (ps - 2.0 * vii * isi) / v2

        if ki == KIND_PQ:
            f[2 * i] = ir - isr
            f[2 * i + 1] = ii - isi
        elif ki == KIND_PV:
            f[2 * i] = pc - ps
            f[2 * i + 1] = v2 - vs * vs
        else:
            f[2 * i] = vri - vr_t[i]
            f[2 * i + 1] = vii - vi_t[i]

        jr = 4 * <long long>p0
        ji = 2 * <long long>p0 + 2 * <long long>p1
        for p in range(p0, p1):
            k = indices[p]
            g = gdat[p]
            b = bdat[p]
            if ki == KIND_PQ:
                arr = g
                ari = -b
                air = b
                aii = g
                if k == i:
                    arr -= dsr_dvr
                    ari -= dsr_dvi
                    air -= dsi_dvr
                    aii -= dsi_dvi
            elif ki == KIND_PV:
                arr = vri * g + vii * b
                ari = -vri * b + vii * g
                air = 0.0
                aii = 0.0
                if k == i:
                    arr += ir
                    ari += ii
                    air = 2.0 * vri
                    aii = 2.0 * vii
            else:
                arr = 0.0
                ari = 0.0
                air = 0.0
                aii = 0.0
                if k == i:
                    arr = 1.0
                    aii = 1.0
            jdata[jr] = arr
            jdata[jr + 1] = ari
            jdata[ji] = air
            jdata[ji + 1] = aii
            jr += 2
            ji += 2


def scatter_system(double[:, ::1] node_out, double[:, ::1] edge_out,
                   long long[:, ::1] node_pos, long long[:, ::1] edge_pos_st,
                   long long[:, ::1] edge_pos_ts, unsigned char[::1] zi,
                   long long[::1] diag_pos, double ridge,
                   double[::1] data, double[::1] eta):
    cdef Py_ssize_t n = node_out.shape[0]
    cdef Py_ssize_t m = edge_out.shape[0]
    cdef Py_ssize_t nnz = data.shape[0]
    cdef Py_ssize_t nd = diag_pos.shape[0]
    cdef Py_ssize_t i, e, d

    for d in range(nnz):
        data[d] = 0.0
    for i in range(n):
        data[node_pos[i, 0]] += node_out[i, 0]
        data[node_pos[i, 1]] += node_out[i, 1]
        data[node_pos[i, 2]] += node_out[i, 1]
        data[node_pos[i, 3]] += node_out[i, 2]
    # all s->t blocks before any t->s block, matching the numpy fallback's
    # add.at order so both backends accumulate shared slots bit-identically
    for e in range(m):
        data[edge_pos_st[e, 0]] += edge_out[e, 0]
        data[edge_pos_st[e, 1]] += edge_out[e, 1]
        data[edge_pos_st[e, 2]] += edge_out[e, 2]
        data[edge_pos_st[e, 3]] += edge_out[e, 3]
    for e in range(m):
        data[edge_pos_ts[e, 0]] += edge_out[e, 0]
        data[edge_pos_ts[e, 1]] += edge_out[e, 2]
        data[edge_pos_ts[e, 2]] += edge_out[e, 1]
        data[edge_pos_ts[e, 3]] += edge_out[e, 3]
    for d in range(nd):
        data[diag_pos[d]] += ridge
    for i in range(n):
        if zi[i]:
            eta[2 * i] = 0.0
            eta[2 * i + 1] = 0.0
        else:
            eta[2 * i] = node_out[i, 3]
            eta[2 * i + 1] = node_out[i, 4]


def gather_grads(double[::1] lam, double[::1] mu,
                 int[::1] e_src, int[::1] e_dst, unsigned char[::1] zi,
                 double[:, ::1] dnode, double[:, ::1] dedge):
    cdef Py_ssize_t n = dnode.shape[0]
    cdef Py_ssize_t m = dedge.shape[0]
    cdef Py_ssize_t i, e, s, t
    cdef double l0, l1, m0, m1

    for i in range(n):
        l0 = lam[2 * i]
        l1 = lam[2 * i + 1]
        m0 = mu[2 * i]
        m1 = mu[2 * i + 1]
        dnode[i, 0] = -l0 * m0
        dnode[i, 1] = -(l0 * m1 + l1 * m0)
        dnode[i, 2] = -l1 * m1
        if zi[i]:
            dnode[i, 3] = 0.0
            dnode[i, 4] = 0.0
        else:
            dnode[i, 3] = l0
            dnode[i, 4] = l1
    for e in range(m):
        s = e_src[e]
        t = e_dst[e]
        dedge[e, 0] = -(lam[2 * s] * mu[2 * t] + mu[2 * s] * lam[2 * t])
        dedge[e, 1] = -(lam[2 * s] * mu[2 * t + 1] + mu[2 * s] * lam[2 * t + 1])
        dedge[e, 2] = -(lam[2 * s + 1] * mu[2 * t] + mu[2 * s + 1] * lam[2 * t])
        dedge[e, 3] = -(lam[2 * s + 1] * mu[2 * t + 1] + mu[2 * s + 1] * lam[2 * t + 1])
